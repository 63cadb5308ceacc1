#include "mfdlm/chain.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>

#include "mfdlm/common.hpp"

namespace mfdlm {

namespace fs = std::filesystem;

const ChainSeries& Chain::at(const std::string& name) const {
    auto it = series.find(name);
    if (it == series.end()) throw data_error("chain: no monitored series '" + name + "'");
    return it->second;
}

namespace {

void write_series_csv(const std::string& name, const ChainSeries& s, const fs::path& path,
                      int burnin) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write chain file: " + path.string());
    out << "param";
    for (const auto& idx : s.index_names) out << ',' << idx;
    out << ",iteration,value\n";
    for (int e = 0; e < s.entries(); ++e) {
        for (Eigen::Index it = 0; it < s.draws.rows(); ++it) {
            out << name;
            for (int v : s.indices[static_cast<std::size_t>(e)]) out << ',' << v;
            out << ',' << (burnin + static_cast<int>(it) + 1) << ','
                << format_double(s.draws(it, e)) << "\n";
        }
    }
    if (!out) throw data_error("failed writing chain file: " + path.string());
}

void write_means_csv(const Chain& chain, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write posterior means: " + path.string());
    out << "param,i,j,value\n";
    for (Eigen::Index c = 0; c < chain.mean_sigma2.size(); ++c)
        out << "sigma2," << (c + 1) << ",1," << format_double(chain.mean_sigma2[c]) << "\n";
    for (std::size_t g = 0; g < chain.mean_d.size(); ++g) {
        const auto& d = chain.mean_d[g];
        for (Eigen::Index r = 0; r < d.rows(); ++r)
            for (Eigen::Index k = 0; k < d.cols(); ++k)
                out << "d" << (g + 1) << ',' << (r + 1) << ',' << (k + 1) << ','
                    << format_double(d(r, k)) << "\n";
    }
    for (Eigen::Index r = 0; r < chain.mean_beta.rows(); ++r)
        for (Eigen::Index t = 0; t < chain.mean_beta.cols(); ++t)
            out << "beta," << (r + 1) << ',' << (t + 1) << ','
                << format_double(chain.mean_beta(r, t)) << "\n";
    if (!out) throw data_error("failed writing posterior means: " + path.string());
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

double to_double(const std::string& s, const fs::path& origin) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw data_error(origin.string() + ": bad numeric value '" + s + "'");
    return v;
}

ChainSeries read_series_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open chain file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw data_error(path.string() + ": empty chain file");
    auto header = split(line, ',');
    if (header.size() < 3 || header.front() != "param" || header.back() != "value" ||
        header[header.size() - 2] != "iteration")
        throw data_error(path.string() + ": unexpected chain header");

    ChainSeries s;
    s.index_names.assign(header.begin() + 1, header.end() - 2);
    std::map<std::vector<int>, std::vector<double>> cols;
    std::vector<std::vector<int>> order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split(line, ',');
        if (f.size() != header.size()) throw data_error(path.string() + ": ragged chain row");
        std::vector<int> idx;
        for (std::size_t i = 1; i + 2 < f.size(); ++i)
            idx.push_back(static_cast<int>(to_double(f[i], path)));
        auto [it, inserted] = cols.try_emplace(idx);
        if (inserted) order.push_back(idx);
        it->second.push_back(to_double(f.back(), path));
    }
    if (order.empty()) {
        s.draws.resize(0, 0);
        return s;
    }
    const std::size_t n_draws = cols.at(order.front()).size();
    s.indices = order;
    s.draws.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(order.size()));
    for (std::size_t e = 0; e < order.size(); ++e) {
        const auto& v = cols.at(order[e]);
        if (v.size() != n_draws) throw data_error(path.string() + ": uneven draw counts");
        for (std::size_t i = 0; i < n_draws; ++i)
            s.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e)) = v[i];
    }
    return s;
}

}  // namespace

void write_chain(const Chain& chain, const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& [name, s] : chain.series)
        write_series_csv(name, s, fs::path(dir) / ("chain_" + name + ".csv"), chain.burnin);
    write_means_csv(chain, fs::path(dir) / "posterior_means.csv");
    std::ofstream mout(fs::path(dir) / "manifest.json");
    if (!mout) throw data_error("cannot write manifest in " + dir);
    mout << chain.manifest.dump(2) << "\n";
    if (!mout) throw data_error("failed writing manifest in " + dir);
}

Chain read_chain(const std::string& dir) {
    Chain chain;
    const fs::path root(dir);
    {
        std::ifstream in(root / "manifest.json");
        if (!in) throw data_error("cannot open manifest: " + (root / "manifest.json").string());
        try {
            in >> chain.manifest;
        } catch (const nlohmann::json::exception& e) {
            throw data_error("manifest.json: invalid JSON: " + std::string(e.what()));
        }
    }
    chain.iterations = chain.manifest.value("iterations", 0);
    chain.burnin = chain.manifest.value("burnin", 0);
    chain.seed = chain.manifest.value("seed", std::uint64_t{0});

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
        const std::string fname = entry.path().filename().string();
        if (fname.rfind("chain_", 0) == 0 && entry.path().extension() == ".csv")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::string name = f.stem().string().substr(6);
        chain.series[name] = read_series_csv(f);
    }

    // Posterior means.
    const fs::path means = root / "posterior_means.csv";
    if (fs::exists(means)) {
        std::ifstream in(means);
        std::string line;
        std::getline(in, line);
        std::map<std::string, std::map<std::pair<int, int>, double>> groups;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto f = split(line, ',');
            if (f.size() != 4) throw data_error(means.string() + ": ragged row");
            groups[f[0]][{static_cast<int>(to_double(f[1], means)),
                          static_cast<int>(to_double(f[2], means))}] = to_double(f[3], means);
        }
        if (groups.count("sigma2")) {
            const auto& g = groups["sigma2"];
            chain.mean_sigma2.resize(static_cast<Eigen::Index>(g.size()));
            for (const auto& [ij, v] : g) chain.mean_sigma2[ij.first - 1] = v;
        }
        if (groups.count("beta")) {
            const auto& g = groups["beta"];
            int rmax = 0, cmax = 0;
            for (const auto& [ij, v] : g) {
                rmax = std::max(rmax, ij.first);
                cmax = std::max(cmax, ij.second);
            }
            chain.mean_beta.setZero(rmax, cmax);
            for (const auto& [ij, v] : g) chain.mean_beta(ij.first - 1, ij.second - 1) = v;
        }
        for (int gidx = 1;; ++gidx) {
            const std::string key = "d" + std::to_string(gidx);
            if (!groups.count(key)) break;
            const auto& g = groups[key];
            int rmax = 0, cmax = 0;
            for (const auto& [ij, v] : g) {
                rmax = std::max(rmax, ij.first);
                cmax = std::max(cmax, ij.second);
            }
            Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rmax, cmax);
            for (const auto& [ij, v] : g) d(ij.first - 1, ij.second - 1) = v;
            chain.mean_d.push_back(std::move(d));
        }
    }
    return chain;
}

}  // namespace mfdlm
