#include "mfdlm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "mfdlm/basis.hpp"
#include "mfdlm/common.hpp"
#include "mfdlm/flc.hpp"

namespace mfdlm {

std::optional<double> efficiency_factor(const Eigen::VectorXd& draws) {
    const Eigen::Index n = draws.size();
    if (n < 100) throw data_error("efficiency factor: needs at least 100 draws");
    const double mean = draws.mean();
    const Eigen::VectorXd centered = draws.array() - mean;
    const double c0 = centered.squaredNorm() / static_cast<double>(n);
    if (!(c0 > 0.0)) return std::nullopt;  // constant series

    auto autocov = [&](Eigen::Index lag) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i + lag < n; ++i) acc += centered[i] * centered[i + lag];
        return acc / static_cast<double>(n);
    };

    // Geyer initial monotone sequence over pair sums.
    double tau = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; 2 * m + 1 < n - 1; ++m) {
        double pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if (pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
    }
    tau -= 1.0;  // the lag-0 term was counted twice
    tau = std::max(tau, 1e-12);
    return 1.0 / tau;
}

std::pair<double, double> hpd_interval(const Eigen::VectorXd& draws, double mass) {
    const Eigen::Index n = draws.size();
    if (n < 1) throw data_error("hpd interval: empty sample");
    if (!(mass > 0.0 && mass <= 1.0)) throw data_error("hpd interval: mass must be in (0, 1]");
    std::vector<double> sorted(draws.data(), draws.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const Eigen::Index w =
        std::min<Eigen::Index>(n, static_cast<Eigen::Index>(std::ceil(mass * static_cast<double>(n))));
    Eigen::Index best = 0;
    double best_len = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i + w <= n; ++i) {
        const double len = sorted[static_cast<std::size_t>(i + w - 1)] -
                           sorted[static_cast<std::size_t>(i)];
        if (len < best_len) {
            best_len = len;
            best = i;
        }
    }
    return {sorted[static_cast<std::size_t>(best)], sorted[static_cast<std::size_t>(best + w - 1)]};
}

namespace {

SplineBasis basis_from_manifest(const nlohmann::json& manifest) {
    const auto& b = manifest.at("basis");
    KnotSequence ks;
    const auto dom = b.at("domain").get<std::vector<double>>();
    ks.a = dom.at(0);
    ks.b = dom.at(1);
    ks.interior = b.at("interior_knots").get<std::vector<double>>();
    return SplineBasis::build(ks);
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

double dic(const Chain& chain, const FunctionalDataset& data) {
    if (!chain.has("deviance"))
        throw data_error("dic: the chain has no stored deviance; re-run the fit with 'deviance' "
                         "in the monitored quantities");
    const Eigen::VectorXd dev = chain.at("deviance").draws.col(0);
    if (dev.size() == 0) throw data_error("dic: empty deviance series");
    const double mean_dev = dev.mean();

    // Plug-in deviance at the posterior means of (beta, curves, sigma2).
    const SplineBasis basis = basis_from_manifest(chain.manifest);
    const DesignCache cache(data, basis);
    const bool common = chain.manifest.at("config").value("common_flc", true);
    const int K = static_cast<int>(chain.mean_d.front().cols());

    double plug = 0.0;
    for (int c = 0; c < data.num_outcomes(); ++c) {
        const Eigen::MatrixXd& d = chain.mean_d[static_cast<std::size_t>(common ? 0 : c)];
        const double s2 = chain.mean_sigma2[c];
        double ssr = 0.0;
        const auto& recs = cache.records(c);
        const auto& raw = data.outcomes[static_cast<std::size_t>(c)];
        for (std::size_t r = 0; r < recs.size(); ++r) {
            const auto& ps = cache.point_sets()[static_cast<std::size_t>(recs[r].set)];
            const Eigen::VectorXd mu =
                ps.phi * d * chain.mean_beta.block(c * K, recs[r].time - 1, K, 1);
            ssr += (raw[r].y - mu).squaredNorm();
        }
        plug += static_cast<double>(cache.observation_count(c)) * (kLog2Pi + std::log(s2)) +
                ssr / s2;
    }
    return 2.0 * mean_dev - plug;  // mean + (mean - plug-in) effective size
}

OutlierReport outlier_probabilities(const Chain& chain, int aggregate_df) {
    if (!chain.has("resid2"))
        throw data_error("outlier probabilities: the chain has no stored residuals; re-run with "
                         "'resid2' in the monitored quantities");
    const ChainSeries& s = chain.at("resid2");
    const Eigen::Index n_draws = s.draws.rows();
    if (n_draws == 0) throw data_error("outlier probabilities: empty chain");

    int K = 0, C = 0, T = 0;
    for (const auto& idx : s.indices) {
        C = std::max(C, idx[0]);
        K = std::max(K, idx[1]);
        T = std::max(T, idx[2]);
    }
    const int df = std::min(aggregate_df, K);
    boost::math::chi_squared_distribution<double> chi1(1.0);
    boost::math::chi_squared_distribution<double> chidf(static_cast<double>(df));
    const double thresh1 = boost::math::quantile(chi1, 0.95);  // ~3.84
    const double thresh_df = boost::math::quantile(chidf, 0.95);

    OutlierReport rep;
    rep.df = df;
    auto entry = [&](int c, int k, int t) {
        return static_cast<Eigen::Index>(((c - 1) * K + (k - 1)) * T + (t - 1));
    };
    rep.proportion.resize(static_cast<Eigen::Index>(K) * C * T);
    for (int k = 1; k <= K; ++k)
        for (int c = 1; c <= C; ++c)
            for (int t = 1; t <= T; ++t) {
                const Eigen::VectorXd col = s.draws.col(entry(c, k, t));
                rep.indices.push_back({k, c, t});
                rep.proportion[static_cast<Eigen::Index>(rep.indices.size() - 1)] =
                    (col.array() > thresh1).cast<double>().mean();
            }

    rep.agg_proportion.resize(static_cast<Eigen::Index>(C) * T);
    for (int c = 1; c <= C; ++c)
        for (int t = 1; t <= T; ++t) {
            Eigen::VectorXd total = Eigen::VectorXd::Zero(n_draws);
            for (int k = 1; k <= df; ++k) total += s.draws.col(entry(c, k, t));
            rep.agg_indices.push_back({c, t});
            rep.agg_proportion[static_cast<Eigen::Index>(rep.agg_indices.size() - 1)] =
                (total.array() > thresh_df).cast<double>().mean();
        }
    return rep;
}

ContrastGroups ContrastGroups::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open grouping spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": invalid JSON: " + std::string(e.what()));
    }
    ContrastGroups g;
    try {
        for (const auto& [unit, trials] : j.at("group_a").items())
            g.group_a[std::stoi(unit)] = trials.get<std::vector<int>>();
        for (const auto& [unit, trials] : j.at("group_b").items())
            g.group_b[std::stoi(unit)] = trials.get<std::vector<int>>();
        if (j.contains("probit_outcomes"))
            g.probit_outcomes = j["probit_outcomes"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": " + e.what());
    }
    return g;
}

ContrastResult contrast_functionals(const Chain& chain, const ContrastGroups& groups,
                                    int grid_size) {
    if (!chain.has("beta") || !chain.has("d"))
        throw data_error("contrasts: require 'beta' and 'd' in the monitored quantities");
    const auto& cfg = chain.manifest.at("config");
    if (cfg.value("model", std::string()) != "random-walk")
        throw data_error("contrasts: defined for the random-walk (replicated) model");
    const int units = cfg.at("walk").value("units", 0);
    const int trials = cfg.at("walk").value("trials", 0);
    const int bins = cfg.at("walk").value("bins", 0);
    const int K = cfg.value("K", 0);

    const SplineBasis basis = basis_from_manifest(chain.manifest);
    const auto dom = chain.manifest.at("data").at("domain").get<std::vector<double>>();
    ContrastResult out;
    out.tau.resize(grid_size);
    Eigen::VectorXd mapped(grid_size);
    for (int i = 0; i < grid_size; ++i) {
        const double frac = grid_size == 1 ? 0.5 : static_cast<double>(i) / (grid_size - 1);
        out.tau[i] = dom[0] + frac * (dom[1] - dom[0]);
        mapped[i] = basis.domain_lo() + frac * (basis.domain_hi() - basis.domain_lo());
    }
    const Eigen::MatrixXd phi_grid = basis.evaluate_matrix(mapped);
    const int p = basis.dim();

    const ChainSeries& d_series = chain.at("d");
    const ChainSeries& b_series = chain.at("beta");
    const Eigen::Index n_draws = d_series.draws.rows();
    if (b_series.draws.rows() != n_draws) throw data_error("contrasts: draw counts differ");
    const int T = units * trials * bins;
    const int C = static_cast<int>(b_series.indices.size()) / (K * T);

    boost::math::normal_distribution<double> std_norm(0.0, 1.0);
    auto is_probit = [&](int c1) {
        return std::find(groups.probit_outcomes.begin(), groups.probit_outcomes.end(), c1) !=
               groups.probit_outcomes.end();
    };

    for (int c = 0; c < C; ++c)
        for (int b = 0; b < bins; ++b) {
            out.indices.push_back({c + 1, b + 1});
            out.draws.emplace_back(n_draws, grid_size);
        }

    Eigen::MatrixXd d_mat(p, K);
    for (Eigen::Index r = 0; r < n_draws; ++r) {
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < p; ++j) d_mat(j, k) = d_series.draws(r, k * p + j);
        const Eigen::MatrixXd fgrid = phi_grid * d_mat;  // grid x K

        for (int c = 0; c < C; ++c) {
            const bool probit = is_probit(c + 1);
            for (int b = 0; b < bins; ++b) {
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(grid_size);
                int used = 0;
                for (int u = 1; u <= units; ++u) {
                    const auto ita = groups.group_a.find(u);
                    const auto itb = groups.group_b.find(u);
                    if (ita == groups.group_a.end() || itb == groups.group_b.end() ||
                        ita->second.empty() || itb->second.empty())
                        continue;  // unit excluded
                    auto group_mean = [&](const std::vector<int>& trial_list) {
                        Eigen::VectorXd m = Eigen::VectorXd::Zero(grid_size);
                        for (int s : trial_list) {
                            const int t = ((u - 1) * trials + (s - 1)) * bins + b;
                            Eigen::VectorXd beta_k(K);
                            for (int k = 0; k < K; ++k)
                                beta_k[k] = b_series.draws(r, (c * K + k) * T + t);
                            Eigen::VectorXd mu = fgrid * beta_k;
                            if (probit)
                                for (int i = 0; i < grid_size; ++i)
                                    mu[i] = boost::math::cdf(std_norm, mu[i]);
                            m += mu;
                        }
                        return (m / static_cast<double>(trial_list.size())).eval();
                    };
                    acc += group_mean(ita->second) - group_mean(itb->second);
                    ++used;
                }
                if (used == 0) throw data_error("contrasts: every unit lacks a full group pair");
                out.draws[static_cast<std::size_t>(c * bins + b)].row(r) =
                    (acc / static_cast<double>(used)).transpose();
            }
        }
    }
    return out;
}

}  // namespace mfdlm
