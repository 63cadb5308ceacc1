#include "mfdlm/vol.hpp"

#include <cmath>
#include <limits>

#include "mfdlm/common.hpp"
#include "mfdlm/ssm.hpp"

namespace mfdlm {

double sample_variance(double n, double sum_sq, RngStream& rng, double prior_shape,
                       double prior_rate) {
    double precision = rng.gamma(prior_shape + 0.5 * n, prior_rate + 0.5 * sum_sq);
    // tiny shapes (diffuse prior, no data) put real mass below the smallest
    // representable double; keep the draw strictly positive
    precision = std::max(precision, std::numeric_limits<double>::min());
    if (!std::isfinite(precision)) throw numeric_error("variance draw: non-finite precision");
    return 1.0 / precision;
}

Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, RngStream& rng) {
    const int p = static_cast<int>(scale.rows());
    if (dof < p) throw numeric_error("wishart: dof must be >= dimension");
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success)
        throw numeric_error("wishart: scale matrix is not positive definite");

    // Bartlett decomposition.
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < p; ++i) {
        A(i, i) = std::sqrt(rng.chi_squared(dof - i));
        for (int j = 0; j < i; ++j) A(i, j) = rng.normal();
    }
    const Eigen::MatrixXd LA = llt.matrixL() * A;
    Eigen::MatrixXd X = LA * LA.transpose();
    return 0.5 * (X + X.transpose());
}

Eigen::MatrixXd sample_walk_covariance(const Eigen::MatrixXd& increment_outer, long n_increments,
                                       double rho, RngStream& rng) {
    const int p = static_cast<int>(increment_outer.rows());
    Eigen::MatrixXd inv_scale =
        rho * Eigen::MatrixXd::Identity(p, p) + increment_outer;  // R^{-1} = I
    inv_scale = 0.5 * (inv_scale + inv_scale.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(inv_scale);
    if (llt.info() != Eigen::Success)
        throw numeric_error("walk covariance: degenerate scale matrix");
    const Eigen::MatrixXd scale = llt.solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd precision =
        sample_wishart(0.5 * (scale + scale.transpose()), rho + static_cast<double>(n_increments), rng);
    Eigen::LLT<Eigen::MatrixXd> pllt(precision);
    if (pllt.info() != Eigen::Success)
        throw numeric_error("walk covariance: sampled precision not positive definite");
    Eigen::MatrixXd W = pllt.solve(Eigen::MatrixXd::Identity(p, p));
    return 0.5 * (W + W.transpose());
}

namespace {

// Two-parameter GIG density kernel exponent: (lambda-1) ln x - omega/2 (x + 1/x).
double gig2_log_kernel(double lambda, double omega, double x) {
    return (lambda - 1.0) * std::log(x) - 0.5 * omega * (x + 1.0 / x);
}

double gig2_kernel_deriv(double lambda, double omega, double m, double x) {
    return 2.0 / (x - m) + (lambda - 1.0) / x - 0.5 * omega * (1.0 - 1.0 / (x * x));
}

// Root of d/dx [2 ln|x-m| + ln kernel] on a bracket where the sign changes.
double bisect_root(double lambda, double omega, double m, double lo, double hi) {
    double flo = gig2_kernel_deriv(lambda, omega, m, lo);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = gig2_kernel_deriv(lambda, omega, m, mid);
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Ratio-of-uniforms with mode shift for gig2(lambda, omega), lambda >= 1.
// The density is log-concave there, so the region is bounded by the two
// stationary points of (x - m)^2 f(x).
double sample_gig2(double lambda, double omega, RngStream& rng) {
    const double lm1 = lambda - 1.0;
    const double m = (lm1 + std::sqrt(lm1 * lm1 + omega * omega)) / omega;  // mode
    const double gm = gig2_log_kernel(lambda, omega, m);

    const double eps = 1e-12 * m;
    const double x_lo = bisect_root(lambda, omega, m, eps, m - eps);
    double hi = m + std::max(4.0 / omega, m);
    while (gig2_kernel_deriv(lambda, omega, m, hi) > 0.0) hi *= 2.0;
    const double x_hi = bisect_root(lambda, omega, m, m + eps, hi);

    const double u_lo = (x_lo - m) * std::exp(0.5 * (gig2_log_kernel(lambda, omega, x_lo) - gm));
    const double u_hi = (x_hi - m) * std::exp(0.5 * (gig2_log_kernel(lambda, omega, x_hi) - gm));

    for (int it = 0; it < 100000; ++it) {
        const double u = rng.uniform(u_lo, u_hi);
        const double v = rng.uniform();
        const double x = u / v + m;
        if (x <= 0.0) continue;
        if (2.0 * std::log(v) <= gig2_log_kernel(lambda, omega, x) - gm) return x;
    }
    throw numeric_error("gig sampler failed to accept");
}

}  // namespace

double sample_gig(double lambda, double chi, double psi, RngStream& rng) {
    if (!(psi > 0.0)) throw numeric_error("gig: psi must be > 0");
    if (chi < 1e-300) {
        // chi -> 0 limit is Gamma(lambda, psi/2), valid for lambda > 0.
        if (!(lambda > 0.0)) throw numeric_error("gig: chi ~ 0 requires lambda > 0");
        return rng.gamma(lambda, 0.5 * psi);
    }
    if (lambda <= -1.0) return 1.0 / sample_gig(-lambda, psi, chi, rng);
    if (lambda < 1.0)
        throw numeric_error("gig: |lambda| < 1 not supported (not needed by the volatility block)");
    const double omega = std::sqrt(chi * psi);
    return std::sqrt(chi / psi) * sample_gig2(lambda, omega, rng);
}

void sample_sv_path(const Eigen::VectorXd& innovations, SvState& state, const SvPriors& priors,
                    RngStream& rng, SvCounters* counters) {
    const int T = static_cast<int>(innovations.size());
    if (T < 3) throw numeric_error("sv sampler: needs T >= 3");
    if (state.h.size() != T) throw numeric_error("sv sampler: h path length mismatch");
    const MixtureComponent* mix = log_chisq_mixture();

    Eigen::VectorXd ystar(T);
    for (int t = 0; t < T; ++t) {
        double w = innovations[t];
        if (std::abs(w) < 1e-300) {
            w = 1e-10;  // machine-safe offset before squaring
            if (counters) ++counters->clamped_innovations;
        }
        ystar[t] = std::log(w * w);
    }

    // Mixture indicators, exact discrete conditional given the h path.
    Eigen::VectorXi z(T);
    double logp[kLogChisqComponentCount];
    for (int t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < kLogChisqComponentCount; ++j) {
            const double resid = ystar[t] - state.h[t] - mix[j].mean;
            logp[j] = std::log(mix[j].weight) - 0.5 * std::log(mix[j].variance) -
                      0.5 * resid * resid / mix[j].variance;
            mx = std::max(mx, logp[j]);
        }
        double total = 0.0;
        for (int j = 0; j < kLogChisqComponentCount; ++j) total += std::exp(logp[j] - mx);
        double u = rng.uniform() * total;
        int pick = kLogChisqComponentCount - 1;
        for (int j = 0; j < kLogChisqComponentCount; ++j) {
            u -= std::exp(logp[j] - mx);
            if (u <= 0.0) {
                pick = j;
                break;
            }
        }
        z[t] = pick;
    }

    // h path by FFBS on the auxiliary linear-Gaussian model. The stationary
    // x_0 prior makes h_1 marginally N(xi0, sigma2_h / (1 - xi1^2)).
    const double one_m = 1.0 - state.xi1 * state.xi1;
    StateSpaceSpec spec;
    spec.m0 = Eigen::VectorXd::Constant(1, state.xi0);
    spec.P0 = Eigen::MatrixXd::Constant(1, 1, state.sigma2_h / one_m);
    spec.G.assign(T, Eigen::MatrixXd::Constant(1, 1, state.xi1));
    spec.W.assign(T, Eigen::MatrixXd::Constant(1, 1, state.sigma2_h));
    spec.shift.assign(T, Eigen::VectorXd::Constant(1, state.xi0 * (1.0 - state.xi1)));
    spec.F.assign(T, Eigen::MatrixXd::Ones(1, 1));
    spec.y.resize(T);
    spec.obs_var.resize(T);
    for (int t = 0; t < T; ++t) {
        spec.y[t] = Eigen::VectorXd::Constant(1, ystar[t] - mix[z[t]].mean);
        spec.obs_var[t] = Eigen::VectorXd::Constant(1, mix[z[t]].variance);
    }
    state.h = ffbs(spec, rng).states.row(0).transpose();

    // xi0, Gaussian conjugate (stationary t = 1 term included).
    {
        const double s2 = state.sigma2_h;
        const double om = 1.0 - state.xi1;
        double prec = 1.0 / priors.xi0_var + one_m / s2 + (T - 1) * om * om / s2;
        double lin = one_m / s2 * state.h[0];
        for (int t = 1; t < T; ++t) lin += om / s2 * (state.h[t] - state.xi1 * state.h[t - 1]);
        state.xi0 = rng.normal(lin / prec, std::sqrt(1.0 / prec));
    }

    // sigma2_h: Gamma(a, b) prior and the Gaussian path likelihood combine
    // into GIG(a - T/2, ss, 2b).
    {
        double ss = one_m * (state.h[0] - state.xi0) * (state.h[0] - state.xi0);
        for (int t = 1; t < T; ++t) {
            const double e = state.h[t] - state.xi0 - state.xi1 * (state.h[t - 1] - state.xi0);
            ss += e * e;
        }
        state.sigma2_h =
            sample_gig(priors.sigma_h_shape - 0.5 * T, ss, 2.0 * priors.sigma_h_rate, rng);
    }

    // xi1: Metropolis-Hastings, truncated-normal proposal from the lag
    // regression; the acceptance ratio carries the Beta prior and the
    // stationary h_1 term.
    {
        double sxx = 0.0, sxy = 0.0;
        for (int t = 1; t < T; ++t) {
            const double x = state.h[t - 1] - state.xi0;
            sxx += x * x;
            sxy += x * (state.h[t] - state.xi0);
        }
        if (sxx > 1e-300) {
            const double prop =
                rng.truncated_normal(sxy / sxx, std::sqrt(state.sigma2_h / sxx), -1.0, 1.0);
            auto log_target_extra = [&](double xi) {
                const double om2 = 1.0 - xi * xi;
                const double h1c = state.h[0] - state.xi0;
                return 0.5 * std::log(om2) - 0.5 * om2 * h1c * h1c / state.sigma2_h +
                       (priors.beta_a - 1.0) * std::log1p(xi) +
                       (priors.beta_b - 1.0) * std::log1p(-xi);
            };
            if (counters) ++counters->mh_steps;
            if (std::log(rng.uniform()) <= log_target_extra(prop) - log_target_extra(state.xi1)) {
                state.xi1 = prop;
                if (counters) ++counters->mh_accepts;
            }
        }
    }
}

}  // namespace mfdlm
