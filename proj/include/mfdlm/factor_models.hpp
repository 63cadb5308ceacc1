#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mfdlm/rng.hpp"

namespace mfdlm {

/// Factor-model parameters of the common-trend family. Factor (c, k) lives
/// at state index c*K + k. Column 0 of `gamma` is unused (the reference
/// outcome has no slope); slopes with k >= K_linked stay fixed at zero, so
/// those factors evolve as independent AR(1) processes.
struct CommonTrendParams {
    Eigen::MatrixXd gamma;  // K x C
    Eigen::MatrixXd psi;    // K x C, AR(1) coefficients in (-1, 1)
    int K_linked = 0;

    int K() const { return static_cast<int>(gamma.rows()); }
    int C() const { return static_cast<int>(gamma.cols()); }
};

/// Evolution pair (G_t, W_t) of the common-trend hidden Markov model:
/// G_t = (I + Q_t) Psi (I - Q_{t-1}) and W_t = (I + Q_t) diag(sigma2_t)
/// (I + Q_t)', written in their closed block forms. `s_t`/`s_prev` are the
/// K x C state indicators (all ones gives the plain common-trend model);
/// `sigma2_t` holds the K x C innovation variances at time t.
void assemble_common_trend(const CommonTrendParams& params, const Eigen::MatrixXd& sigma2_t,
                           const Eigen::MatrixXi& s_t, const Eigen::MatrixXi& s_prev,
                           Eigen::MatrixXd& G, Eigen::MatrixXd& W);

/// Random-walk evolution: G = I and W with blocks W[(c,k), (c',k)] =
/// walk_cov[k](c, c').
void assemble_random_walk(const std::vector<Eigen::MatrixXd>& walk_cov, int K, int C,
                          Eigen::MatrixXd& W);

/// Conjugate slope draw for factor k of outcome c: quasi-differenced
/// regression of beta_c on s * beta_ref with AR(1) errors and N(0, prior_var)
/// prior. The t = 1 term uses the stationary AR(1) variance.
double sample_slope(const Eigen::VectorXd& beta_c, const Eigen::VectorXd& beta_ref,
                    const Eigen::VectorXi& s, double psi, const Eigen::VectorXd& sigma2_path,
                    double prior_var, RngStream& rng);

/// Truncated-normal conjugate AR(1) coefficient draw on the residual series
/// omega (t >= 2 terms), N(0, prior_var) prior restricted to (-1, 1).
double sample_ar1(const Eigen::VectorXd& omega, const Eigen::VectorXd& sigma2_path,
                  double prior_var, RngStream& rng);

/// Exact joint draw of the two-state path by forward summation and backward
/// sampling. Emissions couple adjacent states through the AR(1) recursion;
/// the initial distribution is the chain's stationary law.
Eigen::VectorXi sample_hmm_path(const Eigen::VectorXd& beta_c, const Eigen::VectorXd& beta_ref,
                                double gamma, double psi, const Eigen::VectorXd& sigma2_path,
                                double q01, double q10, RngStream& rng);

/// Beta-conjugate transition probability update from path transition counts.
std::pair<double, double> sample_transition_probs(const Eigen::VectorXi& path, double a01,
                                                  double b01, double a10, double b10,
                                                  RngStream& rng);

}  // namespace mfdlm
