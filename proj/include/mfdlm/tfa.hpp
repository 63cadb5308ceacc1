#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "mfdlm/dataset.hpp"

namespace mfdlm {

/// Multichannel signal replicates of equal length N (N divisible by 16),
/// indexed by (unit, trial).
struct SignalSet {
    double rate_hz = 1.0;
    struct Replicate {
        int unit = 0;
        int trial = 0;
        Eigen::MatrixXd samples;  // N x channels
    };
    std::vector<Replicate> replicates;

    int channels() const {
        return replicates.empty() ? 0 : static_cast<int>(replicates.front().samples.cols());
    }
    void validate() const;
};

/// Reads `unit,trial,sample_index,ch1,...,chL`.
SignalSet load_signal_csv(const std::string& path, double rate_hz);

struct TfaConfig {
    double band_lo = 0.1;
    double band_hi = 80.0;
    int subsegments = 5;
    std::vector<double> daniell_weights = {0.125, 0.25, 0.25, 0.25, 0.125};
};

/// Output shape bookkeeping written next to the dataset.
struct TfaManifest {
    int channels = 0;
    int units = 0;
    int trials = 0;
    int bins = 0;
    int bin_width = 0;
    int hop = 0;
    int segment_length = 0;
    Eigen::VectorXd frequencies;  // band-restricted grid, Hz
    std::string to_json() const;
};

/// (start, width) of the 15 half-overlapping bins covering a length-N signal
/// (width = N/8, hop = N/16); N must be divisible by 16.
std::vector<std::pair<int, int>> bin_bounds(int N);

/// Least-squares linear detrend on the sample index.
Eigen::VectorXd detrend(const Eigen::VectorXd& x);

/// Raw periodogram ordinates |q|^2 at the DFT frequencies j/n, with q scaled
/// so the ordinates sum to the series' sum of squares.
Eigen::VectorXd periodogram(const Eigen::VectorXd& x);

/// One time bin of multichannel samples -> weighted-average spectra over the
/// detrended subsegments, plus all pairwise cross-spectra.
struct BinSpectra {
    Eigen::VectorXd freq_hz;                     // full one-sided grid
    std::vector<Eigen::VectorXd> auto_spectra;   // per channel
    std::vector<Eigen::VectorXcd> cross_spectra; // pairs (c1 < c2), ordered
};
BinSpectra smoothed_spectra(const Eigen::MatrixXd& bin, double rate_hz, const TfaConfig& cfg);

/// Squared coherence |I12|^2 / (I1 I2), clamped to (0, 1), then the Gaussian
/// quantile transform.
Eigen::VectorXd coherence_transform(const Eigen::VectorXd& spec1, const Eigen::VectorXd& spec2,
                                    const Eigen::VectorXcd& cross);

Eigen::VectorXd squared_coherence(const Eigen::VectorXd& spec1, const Eigen::VectorXd& spec2,
                                  const Eigen::VectorXcd& cross);

/// Full preprocessing pipeline: signals -> C = L(L+1)/2 outcome functional
/// time series (log-spectra, then probit squared coherences) over the
/// concatenated (unit, trial, bin) time index. Replicate coordinates are
/// recorded in the label column as "unit:trial:bin".
FunctionalDataset build_mfts(const SignalSet& signals, const TfaConfig& cfg,
                             TfaManifest* manifest = nullptr);

}  // namespace mfdlm
