#include "mfdlm/ssm.hpp"

#include <cmath>

#include "mfdlm/common.hpp"

namespace mfdlm {

void StateSpaceSpec::validate() const {
    const int T = num_times();
    const int n = dim();
    if (T < 1) throw numeric_error("state space: needs at least one time point");
    if (P0.rows() != n || P0.cols() != n) throw numeric_error("state space: P0 dimension mismatch");
    auto expect = [&](bool ok, const char* what, int t) {
        if (!ok)
            throw numeric_error(std::string("state space: ") + what + " mismatch at t = " +
                                std::to_string(t + 1));
    };
    expect(static_cast<int>(W.size()) == T, "W count", T - 1);
    expect(static_cast<int>(F.size()) == T, "F count", T - 1);
    expect(static_cast<int>(y.size()) == T, "y count", T - 1);
    expect(static_cast<int>(obs_var.size()) == T, "obs_var count", T - 1);
    expect(shift.empty() || static_cast<int>(shift.size()) == T, "shift count", T - 1);
    for (int t = 0; t < T; ++t) {
        expect(G[t].rows() == n && G[t].cols() == n, "G", t);
        expect(W[t].rows() == n && W[t].cols() == n, "W", t);
        expect(F[t].cols() == n || F[t].rows() == 0, "F", t);
        expect(y[t].size() == F[t].rows(), "y", t);
        expect(obs_var[t].size() == F[t].rows(), "obs_var", t);
        for (Eigen::Index i = 0; i < obs_var[t].size(); ++i)
            if (!(obs_var[t][i] > 0.0)) throw numeric_error("state space: observation variance <= 0");
        if (!shift.empty()) expect(shift[t].size() == n, "shift", t);
    }
}

namespace {

struct FilterOutput {
    std::vector<Eigen::VectorXd> mean;  // filtered means, t = 1..T
    std::vector<Eigen::MatrixXd> cov;   // filtered covariances
    double loglik = 0.0;
};

constexpr double kLog2Pi = 1.8378770664093454836;

void check_psd(const Eigen::MatrixXd& P, int t) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8)
        throw numeric_error("kalman filter: covariance lost positive semidefiniteness at t = " +
                            std::to_string(t + 1) + " (min eigenvalue " +
                            std::to_string(es.eigenvalues().minCoeff()) + ")");
}

FilterOutput run_filter(const StateSpaceSpec& spec) {
    spec.validate();
    const int T = spec.num_times();
    const int n = spec.dim();

    FilterOutput out;
    out.mean.resize(static_cast<std::size_t>(T));
    out.cov.resize(static_cast<std::size_t>(T));

    Eigen::VectorXd m = spec.m0;
    Eigen::MatrixXd P = spec.P0;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

    for (int t = 0; t < T; ++t) {
        // Predict.
        m = spec.G[t] * m;
        if (!spec.shift.empty()) m += spec.shift[t];
        P = spec.G[t] * P * spec.G[t].transpose() + spec.W[t];
        P = 0.5 * (P + P.transpose());

        // Update one observation row at a time; diagonal E_t makes the rows
        // conditionally independent, so no matrix inversion is needed.
        const Eigen::MatrixXd& Ft = spec.F[t];
        for (Eigen::Index i = 0; i < Ft.rows(); ++i) {
            const Eigen::VectorXd f = Ft.row(i).transpose();
            const Eigen::VectorXd Pf = P * f;
            const double s = f.dot(Pf) + spec.obs_var[t][i];
            if (!(s > 0.0))
                throw numeric_error("kalman filter: non-positive innovation variance at t = " +
                                    std::to_string(t + 1));
            const double v = spec.y[t][i] - f.dot(m);
            out.loglik += -0.5 * (kLog2Pi + std::log(s) + v * v / s);
            const Eigen::VectorXd gain = Pf / s;
            m += gain * v;
            // Joseph form: (I - gf')P(I - gf')' + e gg'.
            const Eigen::MatrixXd A = eye - gain * f.transpose();
            P = A * P * A.transpose() + spec.obs_var[t][i] * gain * gain.transpose();
            P = 0.5 * (P + P.transpose());
        }
        check_psd(P, t);
        out.mean[static_cast<std::size_t>(t)] = m;
        out.cov[static_cast<std::size_t>(t)] = P;
    }
    return out;
}

// Draw from N(mean, cov) where cov is PSD (possibly singular).
Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                RngStream& rng) {
    const int n = static_cast<int>(mean.size());
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return mean + llt.matrixL() * z;
    // Semi-definite fallback: eigen square root with clamped negatives.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw numeric_error("ffbs: covariance factorization failed");
    Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return mean + es.eigenvectors() * root.asDiagonal() * z;
}

}  // namespace

FfbsResult ffbs(const StateSpaceSpec& spec, RngStream& rng) {
    const FilterOutput filt = run_filter(spec);
    const int T = spec.num_times();
    const int n = spec.dim();

    FfbsResult res;
    res.log_likelihood = filt.loglik;
    res.states.resize(n, T);

    Eigen::VectorXd x = sample_gaussian(filt.mean.back(), filt.cov.back(), rng);
    res.states.col(T - 1) = x;

    for (int t = T - 2; t >= 0; --t) {
        const Eigen::MatrixXd& Gn = spec.G[t + 1];
        const Eigen::MatrixXd& Pt = filt.cov[static_cast<std::size_t>(t)];
        const Eigen::VectorXd& mt = filt.mean[static_cast<std::size_t>(t)];

        Eigen::MatrixXd R = Gn * Pt * Gn.transpose() + spec.W[t + 1];
        R = 0.5 * (R + R.transpose());
        Eigen::VectorXd pred = Gn * mt;
        if (!spec.shift.empty()) pred += spec.shift[t + 1];

        Eigen::LDLT<Eigen::MatrixXd> ldlt(R);
        if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
            throw numeric_error("ffbs: predicted covariance singular in backward pass at t = " +
                                std::to_string(t + 2));
        const Eigen::MatrixXd Jt = ldlt.solve(Gn * Pt).transpose();  // P G' R^{-1}
        const Eigen::VectorXd mean = mt + Jt * (x - pred);
        Eigen::MatrixXd cov = Pt - Jt * R * Jt.transpose();
        cov = 0.5 * (cov + cov.transpose());
        x = sample_gaussian(mean, cov, rng);
        res.states.col(t) = x;
    }
    return res;
}

double filter_loglik(const StateSpaceSpec& spec) { return run_filter(spec).loglik; }

}  // namespace mfdlm
