#include "mfdlm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mfdlm/common.hpp"
#include "mfdlm/rng.hpp"

namespace mfdlm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
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

double parse_double(const std::string& s, const char* what, std::size_t line_no) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw data_error(std::string("line ") + std::to_string(line_no) + ": non-numeric " + what +
                         " value '" + s + "'");
    return v;
}

long parse_int(const std::string& s, const char* what, std::size_t line_no) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw data_error(std::string("line ") + std::to_string(line_no) + ": non-integer " + what +
                         " value '" + s + "'");
    return v;
}

}  // namespace

int FunctionalDataset::max_time() const {
    int t_max = 0;
    for (const auto& recs : outcomes)
        for (const auto& r : recs) t_max = std::max(t_max, r.time);
    return t_max;
}

std::size_t FunctionalDataset::total_observations() const {
    std::size_t n = 0;
    for (const auto& recs : outcomes)
        for (const auto& r : recs) n += static_cast<std::size_t>(r.tau.size());
    return n;
}

bool FunctionalDataset::has_labels() const {
    for (const auto& recs : outcomes)
        for (const auto& r : recs)
            if (!r.label.empty()) return true;
    return false;
}

std::vector<double> FunctionalDataset::pooled_points() const {
    std::vector<double> pts;
    pts.reserve(total_observations());
    for (const auto& recs : outcomes)
        for (const auto& r : recs)
            for (Eigen::Index i = 0; i < r.tau.size(); ++i) pts.push_back(r.tau[i]);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

void FunctionalDataset::validate() const {
    if (!(domain_lo < domain_hi)) throw data_error("dataset: requires domain a < b");
    if (outcomes.empty()) throw data_error("dataset: no outcomes");
    for (std::size_t c = 0; c < outcomes.size(); ++c) {
        int prev_time = 0;
        if (outcomes[c].empty())
            throw data_error("dataset: outcome " + std::to_string(c + 1) + " has no records");
        for (const auto& r : outcomes[c]) {
            if (r.time <= prev_time)
                throw data_error("dataset: times must be strictly increasing per outcome");
            prev_time = r.time;
            if (r.tau.size() == 0) throw data_error("dataset: empty observation set");
            if (r.tau.size() != r.y.size()) throw data_error("dataset: tau/y length mismatch");
            for (Eigen::Index i = 0; i < r.tau.size(); ++i) {
                if (r.tau[i] < domain_lo || r.tau[i] > domain_hi)
                    throw data_error("dataset: tau outside domain");
                if (i > 0 && !(r.tau[i] > r.tau[i - 1]))
                    throw data_error("dataset: observation points must be strictly increasing");
            }
        }
    }
}

FunctionalDataset load_long_csv(const std::string& path,
                                std::optional<std::pair<double, double>> domain) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open data file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw data_error(path + ": empty file");
    const auto header = split_csv_line(line);

    int col_outcome = -1, col_time = -1, col_tau = -1, col_y = -1, col_label = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (h == "outcome") col_outcome = static_cast<int>(i);
        else if (h == "time") col_time = static_cast<int>(i);
        else if (h == "tau") col_tau = static_cast<int>(i);
        else if (h == "y") col_y = static_cast<int>(i);
        else if (h == "label") col_label = static_cast<int>(i);
        else throw data_error(path + ": unexpected column '" + h + "'");
    }
    for (auto [col, name] : {std::pair{col_outcome, "outcome"}, {col_time, "time"},
                             {col_tau, "tau"}, {col_y, "y"}}) {
        if (col < 0) throw data_error(path + ": missing column '" + std::string(name) + "'");
    }

    struct Row {
        double tau, y;
        std::size_t line_no;
        std::string label;
    };
    std::map<std::pair<long, long>, std::vector<Row>> groups;  // (outcome, time) -> rows
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (static_cast<int>(f.size()) < static_cast<int>(header.size()))
            throw data_error(path + ": line " + std::to_string(line_no) + ": too few fields");
        const long c = parse_int(f[col_outcome], "outcome", line_no);
        const long t = parse_int(f[col_time], "time", line_no);
        if (c < 1 || t < 1)
            throw data_error(path + ": line " + std::to_string(line_no) +
                             ": outcome and time indices must be >= 1");
        Row row{parse_double(f[col_tau], "tau", line_no), parse_double(f[col_y], "y", line_no),
                line_no, col_label >= 0 ? f[col_label] : std::string()};
        groups[{c, t}].push_back(std::move(row));
    }
    if (groups.empty()) throw data_error(path + ": no data rows");

    long c_max = 0;
    for (const auto& [key, rows] : groups) c_max = std::max(c_max, key.first);
    std::vector<bool> seen(static_cast<std::size_t>(c_max), false);
    for (const auto& [key, rows] : groups) seen[static_cast<std::size_t>(key.first - 1)] = true;
    for (std::size_t c = 0; c < seen.size(); ++c)
        if (!seen[c])
            throw data_error(path + ": outcome indices must be contiguous 1..C; missing outcome " +
                             std::to_string(c + 1));

    FunctionalDataset data;
    data.outcomes.resize(static_cast<std::size_t>(c_max));
    double tau_min = std::numeric_limits<double>::infinity();
    double tau_max = -std::numeric_limits<double>::infinity();
    for (auto& [key, rows] : groups) {
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.tau < b.tau; });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].tau == rows[i - 1].tau) {
                const std::size_t dup = std::max(rows[i].line_no, rows[i - 1].line_no);
                throw data_error(path + ": duplicate (outcome, time, tau) = (" +
                                 std::to_string(key.first) + ", " + std::to_string(key.second) +
                                 ", " + format_double(rows[i].tau) + ") at line " +
                                 std::to_string(dup));
            }
        }
        FunctionalRecord rec;
        rec.time = static_cast<int>(key.second);
        rec.tau.resize(static_cast<Eigen::Index>(rows.size()));
        rec.y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rec.tau[static_cast<Eigen::Index>(i)] = rows[i].tau;
            rec.y[static_cast<Eigen::Index>(i)] = rows[i].y;
            tau_min = std::min(tau_min, rows[i].tau);
            tau_max = std::max(tau_max, rows[i].tau);
        }
        rec.label = rows.front().label;
        data.outcomes[static_cast<std::size_t>(key.first - 1)].push_back(std::move(rec));
    }
    if (domain) {
        data.domain_lo = domain->first;
        data.domain_hi = domain->second;
    } else {
        data.domain_lo = tau_min;
        data.domain_hi = tau_max;
    }
    if (!(data.domain_lo < data.domain_hi))
        throw data_error(path + ": degenerate tau domain [" + format_double(data.domain_lo) + ", " +
                         format_double(data.domain_hi) + "]");
    data.validate();
    return data;
}

void write_long_csv(const FunctionalDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write data file: " + path);
    const bool labels = data.has_labels();
    out << "outcome,time,tau,y" << (labels ? ",label" : "") << "\n";
    for (std::size_t c = 0; c < data.outcomes.size(); ++c) {
        for (const auto& r : data.outcomes[c]) {
            for (Eigen::Index i = 0; i < r.tau.size(); ++i) {
                out << (c + 1) << ',' << r.time << ',' << format_double(r.tau[i]) << ','
                    << format_double(r.y[i]);
                if (labels) out << ',' << r.label;
                out << "\n";
            }
        }
    }
    if (!out) throw data_error("failed writing data file: " + path);
}

namespace {

// J-orthonormalization in factor order (Gram-Schmidt under the basis Gram
// inner product).
void orthonormalize(Eigen::MatrixXd& d, const Eigen::MatrixXd& J) {
    for (Eigen::Index k = 0; k < d.cols(); ++k) {
        Eigen::VectorXd v = d.col(k);
        for (Eigen::Index j = 0; j < k; ++j) v -= (d.col(j).transpose() * J * v)(0) * d.col(j);
        const double norm = std::sqrt((v.transpose() * J * v)(0));
        if (!(norm > 1e-10)) throw numeric_error("synthetic curves: degenerate after orthogonalization");
        d.col(k) = v / norm;
    }
}

Eigen::MatrixXd default_curves(const SplineBasis& basis, int K, RngStream& rng) {
    // Least-squares fits of cos(k pi s) plus a seeded smooth perturbation:
    // roughness increases with k, so the smoothing parameters order cleanly.
    const int grid_n = 201;
    Eigen::VectorXd s(grid_n);
    for (int i = 0; i < grid_n; ++i) s[i] = static_cast<double>(i) / (grid_n - 1);
    const Eigen::MatrixXd Phi = basis.evaluate_matrix(s);
    Eigen::MatrixXd d(basis.dim(), K);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd target(grid_n);
        const double a1 = 0.1 * rng.normal();
        const double a2 = 0.1 * rng.normal();
        for (int i = 0; i < grid_n; ++i) {
            const double x = s[i];
            target[i] = std::cos((k + 1) * M_PI * x) + a1 * std::sin(M_PI * x) +
                        a2 * x * (1.0 - x);
        }
        d.col(k) = (Phi.transpose() * Phi + 1e-10 * Eigen::MatrixXd::Identity(basis.dim(), basis.dim()))
                       .llt()
                       .solve(Phi.transpose() * target);
    }
    orthonormalize(d, basis.gram());
    return d;
}

Eigen::MatrixXd fill_matrix(const Eigen::MatrixXd& given, int K, int C, double fallback) {
    if (given.size() == 0) return Eigen::MatrixXd::Constant(K, C, fallback);
    if (given.size() == 1) return Eigen::MatrixXd::Constant(K, C, given(0, 0));
    if (given.rows() != K || given.cols() != C)
        throw data_error("synthetic spec: parameter matrix must be K x C");
    return given;
}

}  // namespace

std::pair<FunctionalDataset, SynthTruth> generate_synthetic(const SynthSpec& spec) {
    if (spec.C < 1 || spec.K < 1) throw data_error("synthetic spec: C and K must be >= 1");
    const int T = (spec.kind == SynthKind::RandomWalk) ? spec.walk.total() : spec.T;
    if (T < 1) throw data_error("synthetic spec: T must be >= 1");

    KnotSequence knots;
    knots.a = 0.0;
    knots.b = 1.0;
    knots.interior.resize(spec.M);
    for (int j = 1; j <= spec.M; ++j)
        knots.interior[j - 1] = static_cast<double>(j) / (spec.M + 1);
    SplineBasis basis = SplineBasis::build(knots);

    RngStream rng(derive_seed(spec.seed, {0x5eed}));
    Eigen::MatrixXd d;
    if (spec.curves.size() > 0) {
        if (spec.curves.rows() != basis.dim() || spec.curves.cols() != spec.K)
            throw data_error("synthetic spec: curves must be (M+4) x K");
        d = spec.curves;
        const Eigen::MatrixXd JtJ = d.transpose() * basis.gram() * d;
        if ((JtJ - Eigen::MatrixXd::Identity(spec.K, spec.K)).cwiseAbs().maxCoeff() > 1e-10)
            throw data_error("synthetic spec: true curves are not J-orthonormal");
    } else {
        d = default_curves(basis, spec.K, rng);
    }

    const Eigen::MatrixXd gamma = fill_matrix(spec.gamma, spec.K, spec.C, 0.0);
    const Eigen::MatrixXd psi = fill_matrix(spec.psi, spec.K, spec.C, 0.0);
    const Eigen::MatrixXd isd = fill_matrix(spec.innovation_sd, spec.K, spec.C, 1.0);
    Eigen::VectorXd sigma2 = spec.sigma2;
    if (sigma2.size() == 0) sigma2 = Eigen::VectorXd::Constant(spec.C, 0.01);
    else if (sigma2.size() == 1) sigma2 = Eigen::VectorXd::Constant(spec.C, spec.sigma2[0]);
    else if (sigma2.size() != spec.C) throw data_error("synthetic spec: sigma2 must have C entries");

    Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(spec.C * spec.K, T);
    std::vector<std::string> labels(static_cast<std::size_t>(T));

    if (spec.kind == SynthKind::RandomWalk) {
        std::vector<Eigen::MatrixXd> W = spec.walk_cov;
        if (W.empty()) W.assign(spec.K, Eigen::MatrixXd::Identity(spec.C, spec.C));
        if (static_cast<int>(W.size()) != spec.K)
            throw data_error("synthetic spec: walk_cov must have K matrices");
        std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
        for (const auto& Wk : W) {
            chol.emplace_back(Wk);
            if (chol.back().info() != Eigen::Success)
                throw data_error("synthetic spec: walk covariance not positive definite");
        }
        int t = 0;
        for (int i = 0; i < spec.walk.units; ++i) {
            for (int s = 0; s < spec.walk.trials; ++s) {
                for (int b = 0; b < spec.walk.bins; ++b, ++t) {
                    labels[static_cast<std::size_t>(t)] = std::to_string(i + 1) + ":" +
                                                          std::to_string(s + 1) + ":" +
                                                          std::to_string(b + 1);
                    for (int k = 0; k < spec.K; ++k) {
                        Eigen::VectorXd z(spec.C);
                        for (int c = 0; c < spec.C; ++c) z[c] = rng.normal();
                        Eigen::VectorXd step = chol[static_cast<std::size_t>(k)].matrixL() * z;
                        for (int c = 0; c < spec.C; ++c) {
                            const int row = c * spec.K + k;
                            beta(row, t) = (b == 0 ? rng.normal() : beta(row, t - 1)) +
                                           (b == 0 ? 0.0 : step[c]);
                        }
                    }
                }
            }
        }
    } else {
        // Common trend (gamma = 0 gives independent AR(1) factors): the
        // reference outcome drives every other one.
        for (int k = 0; k < spec.K; ++k) {
            Eigen::MatrixXd omega(spec.C, T);
            for (int c = 0; c < spec.C; ++c) {
                const double p = psi(k, c);
                if (std::abs(p) >= 1.0) throw data_error("synthetic spec: |psi| must be < 1");
                const double sd = isd(k, c);
                omega(c, 0) = rng.normal() * sd / std::sqrt(1.0 - p * p);
                for (int t = 1; t < T; ++t) omega(c, t) = p * omega(c, t - 1) + sd * rng.normal();
            }
            for (int t = 0; t < T; ++t) {
                beta(k, t) = omega(0, t);
                for (int c = 1; c < spec.C; ++c) {
                    const double g = (spec.kind == SynthKind::IndependentAr1) ? 0.0 : gamma(k, c);
                    beta(c * spec.K + k, t) = g * beta(k, t) + omega(c, t);
                }
            }
        }
    }

    FunctionalDataset data;
    data.domain_lo = 0.0;
    data.domain_hi = 1.0;
    data.outcomes.resize(static_cast<std::size_t>(spec.C));
    for (int c = 0; c < spec.C; ++c) {
        Eigen::VectorXd grid;
        if (!spec.grid_per_outcome.empty()) {
            if (static_cast<int>(spec.grid_per_outcome.size()) != spec.C)
                throw data_error("synthetic spec: grid_per_outcome must have C entries");
            grid = spec.grid_per_outcome[static_cast<std::size_t>(c)];
        } else {
            grid.resize(spec.m_per_time);
            for (int i = 0; i < spec.m_per_time; ++i)
                grid[i] = spec.m_per_time == 1 ? 0.5 : static_cast<double>(i) / (spec.m_per_time - 1);
        }
        const Eigen::MatrixXd Phi = basis.evaluate_matrix(grid);
        const Eigen::MatrixXd F = Phi * d;  // m x K loading values
        for (int t = 0; t < T; ++t) {
            FunctionalRecord rec;
            rec.time = t + 1;
            rec.tau = grid;
            rec.y = F * beta.block(c * spec.K, t, spec.K, 1);
            const double sd = std::sqrt(sigma2[c]);
            if (sd > 0.0)
                for (Eigen::Index i = 0; i < rec.y.size(); ++i) rec.y[i] += sd * rng.normal();
            rec.label = labels[static_cast<std::size_t>(t)];
            data.outcomes[static_cast<std::size_t>(c)].push_back(std::move(rec));
        }
    }
    data.validate();

    SynthTruth truth{std::move(basis), std::move(d), std::move(beta), gamma, psi, sigma2};
    return {std::move(data), std::move(truth)};
}

SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open synthetic spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": invalid JSON: " + e.what());
    }

    auto matrix_of = [&](const nlohmann::json& v) {
        if (v.is_number()) {
            Eigen::MatrixXd m(1, 1);
            m(0, 0) = v.get<double>();
            return m;
        }
        const auto rows = v.get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != static_cast<std::size_t>(m.cols()))
                throw data_error(path + ": ragged matrix in spec");
            for (std::size_t c = 0; c < rows[r].size(); ++c)
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
        return m;
    };

    SynthSpec spec;
    try {
        spec.C = j.value("C", spec.C);
        spec.K = j.value("K", spec.K);
        spec.T = j.value("T", spec.T);
        spec.M = j.value("M", spec.M);
        spec.seed = j.value("seed", spec.seed);
        spec.m_per_time = j.value("m_per_time", spec.m_per_time);
        const std::string kind = j.value("kind", std::string("common-trend"));
        if (kind == "common-trend") spec.kind = SynthKind::CommonTrend;
        else if (kind == "random-walk") spec.kind = SynthKind::RandomWalk;
        else if (kind == "independent-ar1") spec.kind = SynthKind::IndependentAr1;
        else throw data_error(path + ": unknown kind '" + kind + "'");
        if (j.contains("gamma")) spec.gamma = matrix_of(j["gamma"]);
        if (j.contains("psi")) spec.psi = matrix_of(j["psi"]);
        if (j.contains("innovation_sd")) spec.innovation_sd = matrix_of(j["innovation_sd"]);
        if (j.contains("sigma2")) {
            if (j["sigma2"].is_number()) {
                spec.sigma2.resize(1);
                spec.sigma2[0] = j["sigma2"].get<double>();
            } else {
                const auto v = j["sigma2"].get<std::vector<double>>();
                spec.sigma2 = Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                                static_cast<Eigen::Index>(v.size()));
            }
        }
        if (j.contains("curves")) spec.curves = matrix_of(j["curves"]);
        if (j.contains("walk")) {
            spec.walk.units = j["walk"].value("units", 0);
            spec.walk.trials = j["walk"].value("trials", 0);
            spec.walk.bins = j["walk"].value("bins", 0);
        }
        if (j.contains("walk_cov")) {
            for (const auto& wk : j["walk_cov"]) spec.walk_cov.push_back(matrix_of(wk));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": " + e.what());
    }
    return spec;
}

}  // namespace mfdlm
