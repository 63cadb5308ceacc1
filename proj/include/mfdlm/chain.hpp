#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mfdlm {

/// Post-burn-in draws of one monitored parameter group. Rows are draws,
/// columns are the flattened entries described by `indices`.
struct ChainSeries {
    std::vector<std::string> index_names;       // e.g. {"k", "c"}
    std::vector<std::vector<int>> indices;      // 1-based, one row per entry
    Eigen::MatrixXd draws;                      // n_draws x n_entries

    int entries() const { return static_cast<int>(indices.size()); }
};

/// Stored MCMC output: monitored draws, the run manifest (config snapshot,
/// seed, basis description, version), and the posterior means needed by the
/// plug-in DIC.
struct Chain {
    std::map<std::string, ChainSeries> series;
    nlohmann::json manifest;
    int iterations = 0;
    int burnin = 0;
    std::uint64_t seed = 0;

    Eigen::MatrixXd mean_beta;              // (C*K) x T
    std::vector<Eigen::MatrixXd> mean_d;    // per curve group, p x K
    Eigen::VectorXd mean_sigma2;            // C

    int num_draws() const {
        return series.empty() ? 0 : static_cast<int>(series.begin()->second.draws.rows());
    }
    const ChainSeries& at(const std::string& name) const;
    bool has(const std::string& name) const { return series.count(name) > 0; }
};

/// One CSV per monitored group (`param,index...,iteration,value`), the run
/// manifest, and the posterior means.
void write_chain(const Chain& chain, const std::string& dir);

Chain read_chain(const std::string& dir);

}  // namespace mfdlm
