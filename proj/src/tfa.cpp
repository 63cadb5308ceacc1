#include "mfdlm/tfa.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "mfdlm/common.hpp"

namespace mfdlm {

void SignalSet::validate() const {
    if (replicates.empty()) throw data_error("signal set: no replicates");
    if (!(rate_hz > 0.0)) throw data_error("signal set: sampling rate must be > 0");
    const Eigen::Index N = replicates.front().samples.rows();
    const Eigen::Index L = replicates.front().samples.cols();
    if (L < 2) throw data_error("signal set: needs at least 2 channels");
    if (N % 16 != 0)
        throw data_error("signal set: series length must be divisible by 16 (bin width N/8 with "
                         "50% overlap), got N = " + std::to_string(N));
    for (const auto& r : replicates)
        if (r.samples.rows() != N || r.samples.cols() != L)
            throw data_error("signal set: replicate shapes differ");
}

SignalSet load_signal_csv(const std::string& path, double rate_hz) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open signal file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error(path + ": empty file");

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty() && tok.back() == '\r') tok.pop_back();
            header.push_back(tok);
        }
    }
    if (header.size() < 5 || header[0] != "unit" || header[1] != "trial" ||
        header[2] != "sample_index")
        throw data_error(path + ": expected header unit,trial,sample_index,ch1,...");
    const int L = static_cast<int>(header.size()) - 3;

    struct Row {
        long sample;
        std::vector<double> ch;
    };
    std::map<std::pair<long, long>, std::vector<Row>> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> f;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty() && tok.back() == '\r') tok.pop_back();
            f.push_back(tok);
        }
        if (static_cast<int>(f.size()) != L + 3)
            throw data_error(path + ": line " + std::to_string(line_no) + ": wrong field count");
        auto to_long = [&](const std::string& s) {
            long v = 0;
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size())
                throw data_error(path + ": line " + std::to_string(line_no) +
                                 ": bad integer '" + s + "'");
            return v;
        };
        Row row;
        row.sample = to_long(f[2]);
        row.ch.resize(static_cast<std::size_t>(L));
        for (int c = 0; c < L; ++c) {
            double v = 0.0;
            const auto& s = f[static_cast<std::size_t>(c + 3)];
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size())
                throw data_error(path + ": line " + std::to_string(line_no) +
                                 ": bad sample value '" + s + "'");
            row.ch[static_cast<std::size_t>(c)] = v;
        }
        groups[{to_long(f[0]), to_long(f[1])}].push_back(std::move(row));
    }
    if (groups.empty()) throw data_error(path + ": no data rows");

    SignalSet set;
    set.rate_hz = rate_hz;
    for (auto& [key, rows] : groups) {
        std::sort(rows.begin(), rows.end(),
                  [](const Row& a, const Row& b) { return a.sample < b.sample; });
        SignalSet::Replicate rep;
        rep.unit = static_cast<int>(key.first);
        rep.trial = static_cast<int>(key.second);
        rep.samples.resize(static_cast<Eigen::Index>(rows.size()), L);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int c = 0; c < L; ++c)
                rep.samples(static_cast<Eigen::Index>(i), c) = rows[i].ch[static_cast<std::size_t>(c)];
        set.replicates.push_back(std::move(rep));
    }
    set.validate();
    return set;
}

std::vector<std::pair<int, int>> bin_bounds(int N) {
    if (N < 16 || N % 16 != 0)
        throw data_error("time binning: series length must be divisible by 16, got N = " +
                         std::to_string(N));
    const int width = N / 8;
    const int hop = N / 16;
    std::vector<std::pair<int, int>> bins;
    for (int start = 0; start + width <= N; start += hop) bins.emplace_back(start, width);
    return bins;  // (N - width)/hop + 1 = 15 of them
}

Eigen::VectorXd detrend(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n < 2) return Eigen::VectorXd::Zero(n);
    double s_i = 0.0, s_ii = 0.0, s_y = 0.0, s_iy = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        s_i += static_cast<double>(i);
        s_ii += static_cast<double>(i) * static_cast<double>(i);
        s_y += x[i];
        s_iy += static_cast<double>(i) * x[i];
    }
    const double den = static_cast<double>(n) * s_ii - s_i * s_i;
    const double slope = (static_cast<double>(n) * s_iy - s_i * s_y) / den;
    const double icept = (s_y - slope * s_i) / static_cast<double>(n);
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = x[i] - icept - slope * static_cast<double>(i);
    return out;
}

namespace {

Eigen::VectorXcd dft_scaled(const Eigen::VectorXd& x) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> freq;
    std::vector<double> time(x.data(), x.data() + x.size());
    fft.fwd(freq, time);
    Eigen::VectorXcd q(static_cast<Eigen::Index>(freq.size()));
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (std::size_t j = 0; j < freq.size(); ++j)
        q[static_cast<Eigen::Index>(j)] = scale * freq[j];
    return q;
}

}  // namespace

Eigen::VectorXd periodogram(const Eigen::VectorXd& x) {
    return dft_scaled(x).cwiseAbs2();
}

BinSpectra smoothed_spectra(const Eigen::MatrixXd& bin, double rate_hz, const TfaConfig& cfg) {
    const int width = static_cast<int>(bin.rows());
    const int L = static_cast<int>(bin.cols());
    const int S = cfg.subsegments;
    if (S < 1) throw data_error("spectra: needs at least one subsegment");
    if (static_cast<int>(cfg.daniell_weights.size()) != S)
        throw data_error("spectra: kernel weights must match the subsegment count");
    double wsum = 0.0;
    for (double w : cfg.daniell_weights) {
        if (!(w > 0.0)) throw data_error("spectra: kernel weights must be positive");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw data_error("spectra: kernel weights must sum to one");
    const int seg = width / S;  // remainder samples are dropped
    if (seg < 2) throw data_error("spectra: subsegments too short (bin width " +
                                  std::to_string(width) + ")");

    const int n_freq = seg / 2 + 1;
    BinSpectra out;
    out.freq_hz.resize(n_freq);
    for (int j = 0; j < n_freq; ++j) out.freq_hz[j] = rate_hz * j / seg;
    out.auto_spectra.assign(static_cast<std::size_t>(L), Eigen::VectorXd::Zero(n_freq));
    const int n_pairs = L * (L - 1) / 2;
    out.cross_spectra.assign(static_cast<std::size_t>(n_pairs), Eigen::VectorXcd::Zero(n_freq));

    std::vector<Eigen::VectorXcd> q(static_cast<std::size_t>(L));
    for (int s = 0; s < S; ++s) {
        const double w = cfg.daniell_weights[static_cast<std::size_t>(s)];
        for (int c = 0; c < L; ++c)
            q[static_cast<std::size_t>(c)] = dft_scaled(detrend(bin.block(s * seg, c, seg, 1)));
        for (int c = 0; c < L; ++c)
            out.auto_spectra[static_cast<std::size_t>(c)] +=
                w * q[static_cast<std::size_t>(c)].head(n_freq).cwiseAbs2();
        int pair = 0;
        for (int c1 = 0; c1 < L; ++c1)
            for (int c2 = c1 + 1; c2 < L; ++c2, ++pair)
                out.cross_spectra[static_cast<std::size_t>(pair)] +=
                    w * (q[static_cast<std::size_t>(c1)].head(n_freq).array() *
                         q[static_cast<std::size_t>(c2)].head(n_freq).array().conjugate())
                            .matrix();
    }
    return out;
}

Eigen::VectorXd squared_coherence(const Eigen::VectorXd& spec1, const Eigen::VectorXd& spec2,
                                  const Eigen::VectorXcd& cross) {
    Eigen::VectorXd out(cross.size());
    for (Eigen::Index j = 0; j < cross.size(); ++j) {
        const double den = spec1[j] * spec2[j];
        if (!(den > 0.0))
            throw numeric_error("squared coherence: zero spectrum denominator at frequency index " +
                                std::to_string(j));
        out[j] = std::clamp(std::norm(cross[j]) / den, 0.0, 1.0);
    }
    return out;
}

Eigen::VectorXd coherence_transform(const Eigen::VectorXd& spec1, const Eigen::VectorXd& spec2,
                                    const Eigen::VectorXcd& cross) {
    const Eigen::VectorXd kappa2 = squared_coherence(spec1, spec2, cross);
    boost::math::normal_distribution<double> std_norm(0.0, 1.0);
    Eigen::VectorXd out(kappa2.size());
    for (Eigen::Index j = 0; j < kappa2.size(); ++j)
        out[j] = boost::math::quantile(std_norm, std::clamp(kappa2[j], 1e-10, 1.0 - 1e-10));
    return out;
}

std::string TfaManifest::to_json() const {
    std::ostringstream os;
    os << "{\n";
    os << "  \"channels\": " << channels << ",\n";
    os << "  \"units\": " << units << ",\n";
    os << "  \"trials\": " << trials << ",\n";
    os << "  \"bins\": " << bins << ",\n";
    os << "  \"bin_width\": " << bin_width << ",\n";
    os << "  \"hop\": " << hop << ",\n";
    os << "  \"segment_length\": " << segment_length << ",\n";
    os << "  \"m\": " << frequencies.size() << ",\n";
    os << "  \"frequencies\": [";
    for (Eigen::Index j = 0; j < frequencies.size(); ++j)
        os << (j ? ", " : "") << format_double(frequencies[j]);
    os << "]\n}\n";
    return os.str();
}

FunctionalDataset build_mfts(const SignalSet& signals, const TfaConfig& cfg,
                             TfaManifest* manifest) {
    signals.validate();
    if (!(cfg.band_lo < cfg.band_hi)) throw data_error("tfa: requires band_lo < band_hi");

    std::vector<const SignalSet::Replicate*> reps;
    for (const auto& r : signals.replicates) reps.push_back(&r);
    std::sort(reps.begin(), reps.end(), [](const auto* a, const auto* b) {
        return std::tie(a->unit, a->trial) < std::tie(b->unit, b->trial);
    });

    const int N = static_cast<int>(reps.front()->samples.rows());
    const int L = static_cast<int>(reps.front()->samples.cols());
    const auto bins = bin_bounds(N);
    const int n_bins = static_cast<int>(bins.size());
    const int C = L * (L + 1) / 2;

    // Band-restricted frequency indices from the first bin's grid (all bins
    // share the segment length).
    const int seg = bins.front().second / cfg.subsegments;
    if (seg < 2) throw data_error("tfa: subsegments too short for this signal length");
    std::vector<int> keep;
    Eigen::VectorXd freqs;
    {
        const int n_freq = seg / 2 + 1;
        std::vector<double> kept;
        for (int j = 0; j < n_freq; ++j) {
            const double f = signals.rate_hz * j / seg;
            if (f >= cfg.band_lo && f <= cfg.band_hi) {
                keep.push_back(j);
                kept.push_back(f);
            }
        }
        if (keep.empty()) throw data_error("tfa: no DFT frequencies inside the band");
        freqs = Eigen::Map<const Eigen::VectorXd>(kept.data(),
                                                  static_cast<Eigen::Index>(kept.size()));
    }

    FunctionalDataset data;
    data.domain_lo = freqs[0];
    data.domain_hi = freqs[freqs.size() - 1];
    if (!(data.domain_lo < data.domain_hi))
        throw data_error("tfa: band keeps fewer than two frequencies");
    data.outcomes.resize(static_cast<std::size_t>(C));

    int t = 0;
    for (const auto* rep : reps) {
        for (int b = 0; b < n_bins; ++b, ++t) {
            const auto [start, width] = bins[static_cast<std::size_t>(b)];
            const BinSpectra spec =
                smoothed_spectra(rep->samples.middleRows(start, width), signals.rate_hz, cfg);
            const std::string label = std::to_string(rep->unit) + ":" +
                                      std::to_string(rep->trial) + ":" + std::to_string(b + 1);
            auto push = [&](int c, const Eigen::VectorXd& values) {
                FunctionalRecord rec;
                rec.time = t + 1;
                rec.tau = freqs;
                rec.y.resize(static_cast<Eigen::Index>(keep.size()));
                for (std::size_t j = 0; j < keep.size(); ++j)
                    rec.y[static_cast<Eigen::Index>(j)] = values[keep[j]];
                rec.label = label;
                data.outcomes[static_cast<std::size_t>(c)].push_back(std::move(rec));
            };
            for (int c = 0; c < L; ++c) {
                // Guarded log: an all-zero subsegment yields zero ordinates.
                Eigen::VectorXd logspec =
                    spec.auto_spectra[static_cast<std::size_t>(c)].cwiseMax(1e-300).array().log();
                push(c, logspec);
            }
            int pair = 0;
            for (int c1 = 0; c1 < L; ++c1)
                for (int c2 = c1 + 1; c2 < L; ++c2, ++pair) {
                    const Eigen::VectorXd probit = coherence_transform(
                        spec.auto_spectra[static_cast<std::size_t>(c1)],
                        spec.auto_spectra[static_cast<std::size_t>(c2)],
                        spec.cross_spectra[static_cast<std::size_t>(pair)]);
                    push(L + pair, probit);
                }
        }
    }
    data.validate();

    if (manifest) {
        manifest->channels = L;
        std::vector<int> units;
        for (const auto* rep : reps) units.push_back(rep->unit);
        std::sort(units.begin(), units.end());
        units.erase(std::unique(units.begin(), units.end()), units.end());
        manifest->units = static_cast<int>(units.size());
        manifest->trials = static_cast<int>(reps.size()) / std::max(1, manifest->units);
        manifest->bins = n_bins;
        manifest->bin_width = bins.front().second;
        manifest->hop = N / 16;
        manifest->segment_length = seg;
        manifest->frequencies = freqs;
    }
    return data;
}

}  // namespace mfdlm
