#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfdlm/chain.hpp"
#include "mfdlm/dataset.hpp"

namespace mfdlm {

/// Effective-sample-size / draw-count ratio via Geyer's initial monotone
/// sequence. Values above one are legal (antithetic chains). A constant
/// series has no defined factor.
std::optional<double> efficiency_factor(const Eigen::VectorXd& draws);

/// Shortest contiguous window of the sorted draws containing ceil(mass * N)
/// of them.
std::pair<double, double> hpd_interval(const Eigen::VectorXd& draws, double mass = 0.95);

/// Deviance information criterion: mean stored deviance plus the effective
/// parameter count pD = mean deviance - deviance at the posterior means of
/// (beta, curves, sigma2). Requires the chain to have monitored "deviance".
double dic(const Chain& chain, const FunctionalDataset& data);

struct OutlierReport {
    // exceedance proportion per (k, c, t) of r^2 over the chi^2_1 95th pct
    std::vector<std::vector<int>> indices;   // {k, c, t}, 1-based
    Eigen::VectorXd proportion;
    // aggregate over k = 1..df per (c, t) against the chi^2_df 95th pct
    std::vector<std::vector<int>> agg_indices;  // {c, t}
    Eigen::VectorXd agg_proportion;
    int df = 0;
};

/// MCMC sample proportions of squared standardized residuals exceeding their
/// chi-squared 95th percentiles. Requires the "resid2" monitor.
OutlierReport outlier_probabilities(const Chain& chain, int aggregate_df = 4);

/// Trial grouping per unit for the posterior mean contrasts: group A minus
/// group B, averaged over units.
struct ContrastGroups {
    // unit -> trials (1-based) per group
    std::map<int, std::vector<int>> group_a;
    std::map<int, std::vector<int>> group_b;
    std::vector<int> probit_outcomes;  // outcomes mapped through Phi before averaging, 1-based

    static ContrastGroups load(const std::string& path);
};

struct ContrastResult {
    Eigen::VectorXd tau;                      // evaluation grid (data domain)
    // per (c, bin): draws x grid matrix of the group contrast
    std::vector<std::vector<int>> indices;    // {c, t_bin}
    std::vector<Eigen::MatrixXd> draws;
};

/// Posterior draws of the group-averaged contrasts of mu (and Phi(mu) for
/// probit outcomes) on a tau grid. Requires the "beta" and "d" monitors and
/// a random-walk manifest.
ContrastResult contrast_functionals(const Chain& chain, const ContrastGroups& groups,
                                    int grid_size = 25);

}  // namespace mfdlm
