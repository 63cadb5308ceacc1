#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mfdlm/rng.hpp"

namespace mfdlm {

/// Linear-Gaussian state space over t = 1..T:
///   x_t = G_t x_{t-1} + shift_t + w_t,   w_t ~ N(0, W_t)
///   y_t = F_t x_t + v_t,                 v_t ~ N(0, diag(obs_var_t))
/// with x_0 ~ N(m0, P0). Observation row counts may vary with t (ragged);
/// a 0-row F_t contributes no update. `shift` may be left empty for a
/// zero state intercept.
struct StateSpaceSpec {
    Eigen::VectorXd m0;
    Eigen::MatrixXd P0;
    std::vector<Eigen::MatrixXd> G;
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> shift;
    std::vector<Eigen::MatrixXd> F;
    std::vector<Eigen::VectorXd> y;
    std::vector<Eigen::VectorXd> obs_var;

    int num_times() const { return static_cast<int>(G.size()); }
    int dim() const { return static_cast<int>(m0.size()); }
    void validate() const;
};

struct FfbsResult {
    Eigen::MatrixXd states;  // dim x T
    double log_likelihood = 0.0;
};

/// Joint draw of x_{1:T} from its conditional given all observations, by
/// forward filtering (sequential univariate updates in Joseph form, no
/// matrix inversion) and backward sampling. The filter log-likelihood is
/// returned as a by-product.
FfbsResult ffbs(const StateSpaceSpec& spec, RngStream& rng);

/// Filter pass only; returns the marginal log-likelihood of the stacked
/// observations.
double filter_loglik(const StateSpaceSpec& spec);

}  // namespace mfdlm
