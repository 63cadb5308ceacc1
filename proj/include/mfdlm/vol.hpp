#pragma once

#include <Eigen/Dense>

#include "mfdlm/rng.hpp"

namespace mfdlm {

/// One Gaussian component of the log(chi^2_1) approximation.
struct MixtureComponent {
    double weight;
    double mean;
    double variance;
};

/// The fixed 10-component table (see scripts/gen_logchisq_mixture.py).
const MixtureComponent* log_chisq_mixture();
inline constexpr int kLogChisqComponentCount = 10;

/// Priors of the log-volatility AR(1) block:
///   h_t = xi0 + xi1 (h_{t-1} - xi0) + N(0, sigma2_h),
///   h_1 ~ N(xi0, sigma2_h / (1 - xi1^2)),
/// with xi0 ~ N(0, xi0_var), (xi1 + 1)/2 ~ Beta(beta_a, beta_b), and
/// sigma2_h ~ Gamma(sigma_h_shape, sigma_h_rate) (a half-normal on sigma_h
/// at the 1/2, 1/2 default).
struct SvPriors {
    double xi0_var = 1e4;
    double beta_a = 5.0;
    double beta_b = 1.5;
    double sigma_h_shape = 0.5;
    double sigma_h_rate = 0.5;
};

struct SvState {
    Eigen::VectorXd h;  // log-volatility path, length T
    double xi0 = 0.0;
    double xi1 = 0.0;
    double sigma2_h = 0.1;
};

struct SvCounters {
    long clamped_innovations = 0;  // |innovation| < 1e-300, offset before squaring
    long mh_accepts = 0;
    long mh_steps = 0;
};

/// One Gibbs refresh of (mixture indicators, h path, xi0, sigma2_h, xi1)
/// given the innovation series sigma_t z_t. The h path is drawn by FFBS on
/// the auxiliary linear-Gaussian model; sigma2_h from its closed-form GIG
/// full conditional; xi1 by Metropolis-Hastings with a truncated-normal
/// proposal. Requires T >= 3.
void sample_sv_path(const Eigen::VectorXd& innovations, SvState& state, const SvPriors& priors,
                    RngStream& rng, SvCounters* counters = nullptr);

/// Conjugate variance draw: precision ~ Gamma(shape + n/2, rate + ss/2),
/// returns 1/precision. Used for observation variances and for constant
/// (non-SV) innovation variances.
double sample_variance(double n, double sum_sq, RngStream& rng, double prior_shape = 1e-3,
                       double prior_rate = 1e-3);

/// Wishart(scale, dof) via Bartlett decomposition; E[X] = dof * scale.
Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, RngStream& rng);

/// Random-walk covariance update: W^{-1} ~ Wishart((rho R + S)^{-1}, rho + n)
/// with S the summed outer products of the increments and R = I. Returns W.
Eigen::MatrixXd sample_walk_covariance(const Eigen::MatrixXd& increment_outer, long n_increments,
                                       double rho, RngStream& rng);

/// Generalized inverse Gaussian with density proportional to
/// x^{lambda-1} exp(-(chi/x + psi x)/2), x > 0. Requires max(lambda, -lambda)
/// >= 1 (one of X, 1/X is sampled by shifted ratio-of-uniforms).
double sample_gig(double lambda, double chi, double psi, RngStream& rng);

}  // namespace mfdlm
