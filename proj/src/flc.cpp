#include "mfdlm/flc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/math/distributions/gamma.hpp>

#include "mfdlm/cgls.hpp"
#include "mfdlm/common.hpp"

namespace mfdlm {

DesignCache::DesignCache(const FunctionalDataset& data, const SplineBasis& basis)
    : data_(&data), basis_(&basis) {
    const int C = data.num_outcomes();
    records_.resize(static_cast<std::size_t>(C));
    obs_count_.assign(static_cast<std::size_t>(C), 0);
    num_times_ = data.max_time();

    std::map<std::vector<double>, int> set_index;
    for (int c = 0; c < C; ++c) {
        for (const auto& rec : data.outcomes[static_cast<std::size_t>(c)]) {
            std::vector<double> key(static_cast<std::size_t>(rec.tau.size()));
            Eigen::VectorXd mapped(rec.tau.size());
            for (Eigen::Index i = 0; i < rec.tau.size(); ++i) {
                mapped[i] = map_tau(rec.tau[i]);
                key[static_cast<std::size_t>(i)] = mapped[i];
            }
            auto [it, inserted] = set_index.try_emplace(std::move(key), static_cast<int>(sets_.size()));
            if (inserted) {
                PointSet ps;
                ps.phi = basis.evaluate_matrix(mapped);
                ps.phi_t_phi = ps.phi.transpose() * ps.phi;
                sets_.push_back(std::move(ps));
            }
            Record r;
            r.time = rec.time;
            r.set = it->second;
            r.phi_t_y = sets_[static_cast<std::size_t>(it->second)].phi.transpose() * rec.y;
            records_[static_cast<std::size_t>(c)].push_back(std::move(r));
            obs_count_[static_cast<std::size_t>(c)] += static_cast<std::size_t>(rec.tau.size());
        }
    }
}

double DesignCache::map_tau(double tau) const {
    const double lo = data_->domain_lo, hi = data_->domain_hi;
    const double a = basis_->domain_lo(), b = basis_->domain_hi();
    return a + (b - a) * (tau - lo) / (hi - lo);
}

double sample_lambda(const Eigen::VectorXd& d_k, int num_interior_knots, double sd_lo,
                     double sd_hi, RngStream& rng, FlcSweepLog* log) {
    const Eigen::Index p = d_k.size();
    const double sum_sq = d_k.tail(p - 2).squaredNorm();
    if (!(sum_sq > 1e-12))
        throw numeric_error("smoothing parameter draw: penalized coefficients are degenerate "
                            "(sum of squares <= 1e-12)");
    const double shape = 0.5 * (num_interior_knots + 1);
    const double rate = 0.5 * sum_sq;

    const double lambda_lo = 1.0 / (sd_hi * sd_hi);
    const bool bounded_above = sd_lo > 0.0;
    const double lambda_hi = bounded_above ? 1.0 / (sd_lo * sd_lo)
                                           : std::numeric_limits<double>::infinity();

    boost::math::gamma_distribution<double> dist(shape, 1.0 / rate);
    const double cdf_lo = boost::math::cdf(dist, lambda_lo);
    const double cdf_hi = bounded_above ? boost::math::cdf(dist, lambda_hi) : 1.0;

    if (cdf_hi - cdf_lo < 1e-14) {
        if (log) ++log->degenerate_lambda_windows;
        // All conditional mass sits outside the representable window; the
        // midpoint (or edge, for an unbounded window) is the stable stand-in.
        return bounded_above ? 0.5 * (lambda_lo + lambda_hi) : lambda_lo * (1.0 + 1e-6);
    }
    const double u = std::clamp(cdf_lo + (cdf_hi - cdf_lo) * rng.uniform(), 1e-300, 1.0 - 1e-16);
    double lambda = boost::math::quantile(dist, u);
    const double lo_open = std::nextafter(lambda_lo, std::numeric_limits<double>::infinity());
    const double hi_open = bounded_above ? std::nextafter(lambda_hi, 0.0) : lambda;
    return std::clamp(lambda, lo_open, std::max(lo_open, hi_open));
}

GaussianFactor build_flc_conditional(int k, int group, const FlcState& state,
                                     const Eigen::MatrixXd& beta, const DesignCache& cache,
                                     const Eigen::VectorXd& sigma2_obs, const FlcOptions& opts) {
    const SplineBasis& basis = cache.basis();
    const int p = basis.dim();
    const int K = state.K();
    const int C = cache.num_outcomes();
    const Eigen::MatrixXd& d = state.d[static_cast<std::size_t>(group)];

    Eigen::MatrixXd b_inv = Eigen::MatrixXd::Zero(p, p);
    b_inv(0, 0) = b_inv(1, 1) = 1.0 / opts.diffuse_var;
    const double lambda_k = state.lambda[static_cast<std::size_t>(group)][k];
    for (int j = 2; j < p; ++j) b_inv(j, j) = lambda_k;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);

    const int n_sets = static_cast<int>(cache.point_sets().size());
    Eigen::VectorXd coef(n_sets);      // sum of beta_k^2 per point set
    Eigen::MatrixXd cross(K, n_sets);  // sum of beta_k * beta_j per point set

    for (int c = 0; c < C; ++c) {
        if (state.mode == FlcMode::PerOutcome && c != group) continue;
        const double w = 1.0 / sigma2_obs[c];
        coef.setZero();
        cross.setZero();
        Eigen::VectorXd lin = Eigen::VectorXd::Zero(p);
        for (const auto& rec : cache.records(c)) {
            const double bk = beta(c * K + k, rec.time - 1);
            coef[rec.set] += bk * bk;
            cross.col(rec.set) += bk * beta.block(c * K, rec.time - 1, K, 1);
            lin.noalias() += bk * rec.phi_t_y;
        }
        for (int s = 0; s < n_sets; ++s) {
            if (coef[s] == 0.0) continue;
            b_inv.noalias() +=
                (w * coef[s]) * cache.point_sets()[static_cast<std::size_t>(s)].phi_t_phi;
            // subtract the contribution of the other curves: sum_{j != k} beta_k beta_j d_j
            Eigen::VectorXd dj_mix = d * cross.col(s) - cross(k, s) * d.col(k);
            lin.noalias() -= cache.point_sets()[static_cast<std::size_t>(s)].phi_t_phi * dj_mix;
        }
        b.noalias() += w * lin;
    }

    GaussianFactor g;
    g.precision = 0.5 * (b_inv + b_inv.transpose());
    g.linear = b;
    if (K > 1) {
        const Eigen::MatrixXd& J = basis.gram();
        g.constraints.resize(p, K - 1);
        int col = 0;
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            g.constraints.col(col++) = J * d.col(j);
        }
    }
    return g;
}

double normalize_flc(int k, int group, FlcState& state, Eigen::MatrixXd& beta,
                     const DesignCache& cache, Eigen::VectorXd draw) {
    const Eigen::MatrixXd& J = cache.basis().gram();
    const int K = state.K();
    const double norm2 = draw.dot(J * draw);
    if (!(norm2 > 1e-20))
        throw numeric_error("factor loading curve " + std::to_string(k + 1) +
                            " is degenerate (carries no signal)");
    double scale = std::sqrt(norm2);
    draw /= scale;

    // Deterministic sign: the largest-magnitude coefficient is positive.
    int arg_max = 0;
    draw.cwiseAbs().maxCoeff(&arg_max);
    if (draw[arg_max] < 0.0) {
        draw = -draw;
        scale = -scale;
    }
    state.d[static_cast<std::size_t>(group)].col(k) = draw;
    for (int c = 0; c < cache.num_outcomes(); ++c) {
        if (state.mode == FlcMode::PerOutcome && c != group) continue;
        beta.row(c * K + k) *= scale;
    }
    return scale;
}

void sample_flc_k(int k, int group, FlcState& state, Eigen::MatrixXd& beta,
                  const DesignCache& cache, const Eigen::VectorXd& sigma2_obs,
                  const FlcOptions& opts, RngStream& rng) {
    const GaussianFactor g = build_flc_conditional(k, group, state, beta, cache, sigma2_obs, opts);
    normalize_flc(k, group, state, beta, cache, sample_constrained(g, rng));
}

FlcSweepLog flc_sweep(FlcState& state, Eigen::MatrixXd& beta, const DesignCache& cache,
                      const Eigen::VectorXd& sigma2_obs, int iteration, const FlcOptions& opts,
                      RngStream& rng) {
    FlcSweepLog log;
    const int K = state.K();
    const int M = cache.basis().knots().num_interior();
    const bool unordered = iteration <= opts.unordered_iterations;
    const std::vector<int> order = rng.permutation(K);

    for (int k : order) {
        for (int g = 0; g < state.num_groups(); ++g) {
            const Eigen::VectorXd& lam = state.lambda[static_cast<std::size_t>(g)];
            double sd_lo = 0.0, sd_hi = opts.sd_upper;
            if (!unordered) {
                if (k > 0) sd_lo = 1.0 / std::sqrt(lam[k - 1]);
                if (k < K - 1) sd_hi = 1.0 / std::sqrt(lam[k + 1]);
            }
            state.lambda[static_cast<std::size_t>(g)][k] =
                sample_lambda(state.d[static_cast<std::size_t>(g)].col(k), M, sd_lo, sd_hi, rng,
                              &log);
            sample_flc_k(k, g, state, beta, cache, sigma2_obs, opts, rng);
        }
    }
    return log;
}

}  // namespace mfdlm
