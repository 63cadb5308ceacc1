#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mfdlm/basis.hpp"

namespace mfdlm {

/// Observations of one outcome at one time index: points tau (strictly
/// increasing within the domain) with their y values.
struct FunctionalRecord {
    int time = 0;
    Eigen::VectorXd tau;
    Eigen::VectorXd y;
    std::string label;
};

/// Ragged multivariate functional time series: C outcomes, each with its own
/// set of observation times, and per-(outcome, time) observation points.
/// Immutable after construction; safe to share read-only across threads.
struct FunctionalDataset {
    double domain_lo = 0.0;
    double domain_hi = 1.0;
    std::vector<std::vector<FunctionalRecord>> outcomes;  // sorted by time within outcome

    int num_outcomes() const { return static_cast<int>(outcomes.size()); }
    int max_time() const;
    std::size_t total_observations() const;
    bool has_labels() const;

    /// Distinct observation points pooled over all (outcome, time).
    std::vector<double> pooled_points() const;

    void validate() const;
};

/// Reads the long interchange format `outcome,time,tau,y[,label]`.
/// The domain defaults to the observed tau range unless overridden.
FunctionalDataset load_long_csv(const std::string& path,
                                std::optional<std::pair<double, double>> domain = std::nullopt);

/// Writes the long format with shortest round-trip number formatting.
void write_long_csv(const FunctionalDataset& data, const std::string& path);

enum class SynthKind { CommonTrend, RandomWalk, IndependentAr1 };

/// Replication structure of the random-walk model: units x trials x bins,
/// concatenated into the global time index.
struct WalkShape {
    int units = 0;
    int trials = 0;
    int bins = 0;
    int total() const { return units * trials * bins; }
};

/// Ground-truth generator configuration. True curves are coefficient vectors
/// on a basis with `M` equally spaced interior knots over [0, 1]; when
/// `curves` is empty, smoothness-ordered orthonormal curves are generated
/// from the seed.
struct SynthSpec {
    int C = 2;
    int K = 2;
    int T = 100;
    int M = 10;
    SynthKind kind = SynthKind::CommonTrend;
    Eigen::MatrixXd gamma;          // K x C slopes (column 0 ignored); empty -> zeros
    Eigen::MatrixXd psi;            // K x C AR(1) coefficients; empty -> zeros
    Eigen::MatrixXd innovation_sd;  // K x C; empty -> ones
    Eigen::VectorXd sigma2;         // C observation variances; empty -> 0.01
    std::vector<Eigen::MatrixXd> walk_cov;  // per factor, C x C; empty -> identity
    WalkShape walk;                 // used when kind == RandomWalk
    int m_per_time = 20;            // uniform grid size per (c, t)
    std::vector<Eigen::VectorXd> grid_per_outcome;  // optional explicit grids
    Eigen::MatrixXd curves;         // optional (M+4) x K coefficients, J-orthonormal
    std::uint64_t seed = 1;
};

/// What generated the data: the basis, true curve coefficients, factors, and
/// the model parameters actually used.
struct SynthTruth {
    SplineBasis basis;
    Eigen::MatrixXd d;      // (M+4) x K
    Eigen::MatrixXd beta;   // (C*K) x T, index (c, k) -> c*K + k
    Eigen::MatrixXd gamma;  // K x C
    Eigen::MatrixXd psi;    // K x C
    Eigen::VectorXd sigma2; // C
};

std::pair<FunctionalDataset, SynthTruth> generate_synthetic(const SynthSpec& spec);

/// Parses a SynthSpec from its JSON file representation.
SynthSpec load_synth_spec(const std::string& path);

}  // namespace mfdlm
