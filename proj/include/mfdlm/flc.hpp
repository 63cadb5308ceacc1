#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mfdlm/basis.hpp"
#include "mfdlm/cgls.hpp"
#include "mfdlm/dataset.hpp"
#include "mfdlm/rng.hpp"

namespace mfdlm {

/// Per-(outcome, time) basis design, with the heavy products shared across
/// repeated observation-point sets. tau values are mapped onto the basis
/// domain before evaluation. Built once per fit; read-only afterwards.
class DesignCache {
public:
    DesignCache(const FunctionalDataset& data, const SplineBasis& basis);

    struct PointSet {
        Eigen::MatrixXd phi;       // m x p basis rows
        Eigen::MatrixXd phi_t_phi; // p x p
    };
    struct Record {
        int time = 0;       // 1-based global time index
        int set = 0;        // index into point_sets()
        Eigen::VectorXd phi_t_y;  // p
    };

    const std::vector<PointSet>& point_sets() const { return sets_; }
    const std::vector<Record>& records(int c) const { return records_[static_cast<std::size_t>(c)]; }
    const FunctionalDataset& data() const { return *data_; }
    const SplineBasis& basis() const { return *basis_; }

    int num_outcomes() const { return static_cast<int>(records_.size()); }
    int num_times() const { return num_times_; }
    std::size_t observation_count(int c) const { return obs_count_[static_cast<std::size_t>(c)]; }

    /// Maps a data-domain tau onto the basis domain.
    double map_tau(double tau) const;

private:
    const FunctionalDataset* data_;
    const SplineBasis* basis_;
    std::vector<PointSet> sets_;
    std::vector<std::vector<Record>> records_;
    std::vector<std::size_t> obs_count_;
    int num_times_ = 0;
};

enum class FlcMode { Common, PerOutcome };

/// Factor loading curve block state: coefficient vectors and smoothing
/// parameters, either one shared set (common mode) or one per outcome.
struct FlcState {
    FlcMode mode = FlcMode::Common;
    std::vector<Eigen::MatrixXd> d;       // per group: p x K
    std::vector<Eigen::VectorXd> lambda;  // per group: K

    int num_groups() const { return static_cast<int>(d.size()); }
    int group_of(int c) const { return mode == FlcMode::Common ? 0 : c; }
    int K() const { return static_cast<int>(d.front().cols()); }
};

struct FlcOptions {
    double diffuse_var = 1e8;  // prior variance of the two unpenalized coordinates
    double sd_upper = 1e4;     // upper bound of the smallest smoothing sd
    int unordered_iterations = 10;
};

struct FlcSweepLog {
    long degenerate_lambda_windows = 0;
};

/// Full conditional of d_k for one curve group, in information form, with
/// the orthogonality constraints against the other curves attached.
GaussianFactor build_flc_conditional(int k, int group, const FlcState& state,
                                     const Eigen::MatrixXd& beta, const DesignCache& cache,
                                     const Eigen::VectorXd& sigma2_obs, const FlcOptions& opts);

/// Unit J-norm normalization with the deterministic sign rule; writes d_k,
/// rescales the matching beta rows, and returns the (signed) scale so that
/// curve-times-factor products are unchanged.
double normalize_flc(int k, int group, FlcState& state, Eigen::MatrixXd& beta,
                     const DesignCache& cache, Eigen::VectorXd draw);

/// Truncated-Gamma smoothing parameter draw by inverse CDF. Bounds are on
/// the lambda^{-1/2} scale, so the draw lies in (sd_hi^{-2}, sd_lo^{-2});
/// sd_lo = 0 leaves the upper end unbounded. A numerically empty window
/// falls back to the interval midpoint and is counted in `log`.
double sample_lambda(const Eigen::VectorXd& d_k, int num_interior_knots, double sd_lo,
                     double sd_hi, RngStream& rng, FlcSweepLog* log = nullptr);

/// One constrained draw of d_k for the given group: assembles the full
/// conditional from the design cache, samples under the orthogonality
/// constraints against the other curves, normalizes to unit J-norm, and
/// rescales the matching beta rows so the products are unchanged. The sign
/// is fixed by making the largest-magnitude coefficient positive.
void sample_flc_k(int k, int group, FlcState& state, Eigen::MatrixXd& beta,
                  const DesignCache& cache, const Eigen::VectorXd& sigma2_obs,
                  const FlcOptions& opts, RngStream& rng);

/// Full block-1 sweep: smoothing parameters and coefficient vectors for all
/// k in a fresh random order. `iteration` is 1-based; ordering constraints
/// are suspended during the first `unordered_iterations` sweeps.
FlcSweepLog flc_sweep(FlcState& state, Eigen::MatrixXd& beta, const DesignCache& cache,
                      const Eigen::VectorXd& sigma2_obs, int iteration, const FlcOptions& opts,
                      RngStream& rng);

}  // namespace mfdlm
