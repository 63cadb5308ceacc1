#pragma once

#include <algorithm>
#include <functional>
#include <iosfwd>
#include <optional>

#include "mfdlm/chain.hpp"
#include "mfdlm/dataset.hpp"
#include "mfdlm/factor_models.hpp"
#include "mfdlm/flc.hpp"
#include "mfdlm/vol.hpp"

namespace mfdlm {

enum class ModelKind { CommonTrend, CommonTrendHmm, RandomWalk };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct Priors {
    double flc_diffuse_var = 1e8;
    double sd_upper = 1e4;
    double slope_var = 1e8;
    double ar_var = 1e8;
    double var_prior_shape = 1e-3;
    double var_prior_rate = 1e-3;
    double hmm_a = 1.0;
    double hmm_b = 3.0;
    double wishart_rho = 0.0;  // 0 -> C
    double state_prior_var = 1e4;
    SvPriors sv;
};

struct FitConfig {
    int K = 2;
    int M = 20;
    bool common_flc = true;
    ModelKind model = ModelKind::CommonTrend;
    int K_linked = -1;  // -1 -> K
    bool sv = false;
    std::vector<int> sv_factors;  // 1-based; empty -> all factors when sv is on
    int iterations = 7000;
    int burnin = 2000;
    std::uint64_t seed = 1;
    std::vector<std::string> monitor = {"lambda", "gamma", "psi", "sigma2", "d", "deviance"};
    KnotStyle knot_style = KnotStyle::Quantile;
    std::optional<std::pair<double, double>> domain;
    int max_grid_size = 0;      // 0 -> full pooled grid for initialization
    int checkpoint_every = 0;   // 0 -> off
    int threads = 1;
    int progress_every = 100;
    WalkShape walk;             // replication structure, random-walk model only
    Priors priors;

    int linked() const { return K_linked < 0 ? K : K_linked; }
    bool sv_on(int k) const {  // 0-based factor index
        if (!sv) return false;
        if (sv_factors.empty()) return true;
        return std::find(sv_factors.begin(), sv_factors.end(), k + 1) != sv_factors.end();
    }
    void validate() const;
    nlohmann::json to_json() const;
    static FitConfig from_json(const nlohmann::json& j);
    static FitConfig load(const std::string& path);
};

/// Full sampler state between iterations. Factor (c, k) lives at row
/// c*K + k of the (C*K) x T matrices.
struct ModelState {
    FlcState flc;
    Eigen::MatrixXd beta;
    Eigen::MatrixXd gamma;         // K x C, column 0 zero
    Eigen::MatrixXd psi;           // K x C
    Eigen::MatrixXi states;        // (C*K) x T hidden Markov states (all ones otherwise)
    Eigen::MatrixXd q01, q10;      // K x C transitions
    Eigen::MatrixXd h;             // (C*K) x T log-volatility paths (SV mode)
    Eigen::MatrixXd sv_xi0, sv_xi1, sv_sigma2h;  // K x C
    Eigen::MatrixXd sigma2_innov;  // K x C constant innovation variances (non-SV)
    Eigen::VectorXd sigma2_obs;    // C
    std::vector<Eigen::MatrixXd> walk_cov;  // K of C x C (random-walk model)
    int iteration = 0;
};

struct KRange {
    int k_min = 0;
    int k_max = 0;
    std::string note;
};

/// Gibbs sampler for the full hierarchy: SVD-based initialization, the
/// four-block sweep, chain collection, and checkpoint/restore. One Fitter is
/// one chain; run several instances (distinct seeds) for multiple chains.
class Fitter {
public:
    Fitter(const FunctionalDataset& data, FitConfig config, std::ostream* log = nullptr);
    Fitter(const Fitter&) = delete;  // the design cache points into this object
    Fitter& operator=(const Fitter&) = delete;

    /// SVD initialization of factors and curves, conditional MLEs elsewhere.
    void init();

    /// One full four-block iteration (1: curves, 2: factors, 3: evolution
    /// parameters, 4: variances).
    void iterate();

    /// init (unless resumed) + remaining iterations + chain assembly.
    Chain run();

    nlohmann::json checkpoint_json() const;
    void restore(const nlohmann::json& snapshot);

    /// Invoked whenever `checkpoint_every` iterations complete; the callee
    /// decides where checkpoint_json() goes.
    std::function<void(const Fitter&)> on_checkpoint;

    const SplineBasis& basis() const { return *basis_; }
    const DesignCache& cache() const { return *cache_; }
    const FitConfig& config() const { return cfg_; }
    ModelState& state() { return state_; }
    const ModelState& state() const { return state_; }

    /// Innovation variance sigma^2_{k,(c),t} under the current state.
    double innovation_variance(int k, int c, int t) const;

private:
    void setup_monitors();
    void record_draw();
    void reorder_by_lambda();
    void refresh_loading_values();
    void run_factor_block(int iter);
    void run_evolution_block(int iter);
    void run_variance_block(int iter);
    Eigen::VectorXd residual_sumsq() const;

    FunctionalDataset data_;
    FitConfig cfg_;
    std::ostream* log_;
    std::optional<SplineBasis> basis_;
    std::optional<DesignCache> cache_;
    ModelState state_;

    // records grouped by global time: (outcome, record index within outcome)
    std::vector<std::vector<std::pair<int, int>>> records_by_time_;
    // loading values per curve group and point set, refreshed each iteration
    std::vector<std::vector<Eigen::MatrixXd>> fvals_;

    // chain accumulation
    struct Monitor {
        ChainSeries skeleton;
        std::vector<std::vector<double>> rows;
    };
    std::map<std::string, Monitor> monitors_;
    double block_seconds_[4] = {0.0, 0.0, 0.0, 0.0};
    Eigen::MatrixXd mean_beta_;
    std::vector<Eigen::MatrixXd> mean_d_;
    Eigen::VectorXd mean_sigma2_;
    long retained_ = 0;
    double last_deviance_ = 0.0;
    SvCounters sv_counters_;
    long degenerate_lambda_ = 0;
};

/// Proportion-of-variance K heuristic on the centered, spline-completed data
/// matrix (stacked over outcomes).
KRange suggest_k_range(const FunctionalDataset& data, double lower_frac, double upper_frac,
                       int max_grid_size = 0);

/// Convenience wrapper: construct, run, return the chain.
Chain fit(const FunctionalDataset& data, const FitConfig& config, std::ostream* log = nullptr);

}  // namespace mfdlm
