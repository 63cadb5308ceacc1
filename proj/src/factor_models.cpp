#include "mfdlm/factor_models.hpp"

#include <cmath>

#include "mfdlm/common.hpp"

namespace mfdlm {

void assemble_common_trend(const CommonTrendParams& params, const Eigen::MatrixXd& sigma2_t,
                           const Eigen::MatrixXi& s_t, const Eigen::MatrixXi& s_prev,
                           Eigen::MatrixXd& G, Eigen::MatrixXd& W) {
    const int K = params.K();
    const int C = params.C();
    const int n = K * C;
    G.setZero(n, n);
    W.setZero(n, n);

    for (int k = 0; k < K; ++k) {
        const double psi1 = params.psi(k, 0);
        const double s2_ref = sigma2_t(k, 0);
        G(k, k) = psi1;
        W(k, k) = s2_ref;
        for (int c = 1; c < C; ++c) {
            const int row = c * K + k;
            const double g = params.gamma(k, c);
            const double psic = params.psi(k, c);
            const double st = static_cast<double>(s_t(k, c));
            const double sp = static_cast<double>(s_prev(k, c));
            G(row, row) = psic;
            G(row, k) = g * (st * psi1 - sp * psic);
            W(row, k) = st * g * s2_ref;
            W(k, row) = W(row, k);
            W(row, row) = sigma2_t(k, c) + st * g * g * s2_ref;
            for (int c2 = 1; c2 < c; ++c2) {
                const int row2 = c2 * K + k;
                const double cov = st * static_cast<double>(s_t(k, c2)) * g *
                                   params.gamma(k, c2) * s2_ref;
                W(row, row2) = cov;
                W(row2, row) = cov;
            }
        }
    }
}

void assemble_random_walk(const std::vector<Eigen::MatrixXd>& walk_cov, int K, int C,
                          Eigen::MatrixXd& W) {
    if (static_cast<int>(walk_cov.size()) != K)
        throw numeric_error("random walk assembly: walk_cov must have K matrices");
    const int n = K * C;
    W.setZero(n, n);
    for (int k = 0; k < K; ++k) {
        const Eigen::MatrixXd& Wk = walk_cov[static_cast<std::size_t>(k)];
        if (Wk.rows() != C || Wk.cols() != C)
            throw numeric_error("random walk assembly: walk_cov must be C x C");
        for (int c = 0; c < C; ++c)
            for (int c2 = 0; c2 < C; ++c2) W(c * K + k, c2 * K + k) = Wk(c, c2);
    }
}

double sample_slope(const Eigen::VectorXd& beta_c, const Eigen::VectorXd& beta_ref,
                    const Eigen::VectorXi& s, double psi, const Eigen::VectorXd& sigma2_path,
                    double prior_var, RngStream& rng) {
    const int T = static_cast<int>(beta_c.size());
    double prec = 1.0 / prior_var;
    double lin = 0.0;

    // Stationary t = 1 term, then the quasi-differenced regression.
    {
        const double v1 = sigma2_path[0] / (1.0 - psi * psi);
        const double x = static_cast<double>(s[0]) * beta_ref[0];
        prec += x * x / v1;
        lin += x * beta_c[0] / v1;
    }
    for (int t = 1; t < T; ++t) {
        const double x = static_cast<double>(s[t]) * beta_ref[t] -
                         psi * static_cast<double>(s[t - 1]) * beta_ref[t - 1];
        const double y = beta_c[t] - psi * beta_c[t - 1];
        prec += x * x / sigma2_path[t];
        lin += x * y / sigma2_path[t];
    }
    return rng.normal(lin / prec, std::sqrt(1.0 / prec));
}

double sample_ar1(const Eigen::VectorXd& omega, const Eigen::VectorXd& sigma2_path,
                  double prior_var, RngStream& rng) {
    const int T = static_cast<int>(omega.size());
    double prec = 1.0 / prior_var;
    double lin = 0.0;
    for (int t = 1; t < T; ++t) {
        prec += omega[t - 1] * omega[t - 1] / sigma2_path[t];
        lin += omega[t - 1] * omega[t] / sigma2_path[t];
    }
    return rng.truncated_normal(lin / prec, std::sqrt(1.0 / prec), -1.0, 1.0);
}

namespace {

inline double log_normal_density(double resid, double var) {
    return -0.5 * (std::log(var) + resid * resid / var);
}

}  // namespace

Eigen::VectorXi sample_hmm_path(const Eigen::VectorXd& beta_c, const Eigen::VectorXd& beta_ref,
                                double gamma, double psi, const Eigen::VectorXd& sigma2_path,
                                double q01, double q10, RngStream& rng) {
    const int T = static_cast<int>(beta_c.size());
    auto omega = [&](int t, int s) {
        return beta_c[t] - static_cast<double>(s) * gamma * beta_ref[t];
    };
    // Transition matrix P(s' | s) and stationary initial distribution; all
    // recursions in log space to survive extreme residuals.
    const double log_trans[2][2] = {{std::log(1.0 - q01), std::log(q01)},
                                    {std::log(q10), std::log(1.0 - q10)}};
    const double pi1 = q01 / (q01 + q10);

    Eigen::MatrixXd log_alpha(2, T);
    const double v1 = sigma2_path[0] / (1.0 - psi * psi);
    log_alpha(0, 0) = std::log1p(-pi1) + log_normal_density(omega(0, 0), v1);
    log_alpha(1, 0) = std::log(pi1) + log_normal_density(omega(0, 1), v1);

    // Emissions at t depend on (s_{t-1}, s_t) through the AR(1) residual, so
    // they ride on the transition terms.
    for (int t = 1; t < T; ++t) {
        for (int s = 0; s < 2; ++s) {
            double terms[2];
            for (int sp = 0; sp < 2; ++sp) {
                const double resid = omega(t, s) - psi * omega(t - 1, sp);
                terms[sp] = log_alpha(sp, t - 1) + log_trans[sp][s] +
                            log_normal_density(resid, sigma2_path[t]);
            }
            const double mx = std::max(terms[0], terms[1]);
            log_alpha(s, t) = mx + std::log(std::exp(terms[0] - mx) + std::exp(terms[1] - mx));
        }
        const double mx = std::max(log_alpha(0, t), log_alpha(1, t));
        log_alpha.col(t).array() -= mx;
    }

    // Backward sampling.
    Eigen::VectorXi path(T);
    {
        const double p1 = 1.0 / (1.0 + std::exp(log_alpha(0, T - 1) - log_alpha(1, T - 1)));
        path[T - 1] = (rng.uniform() < p1) ? 1 : 0;
    }
    for (int t = T - 2; t >= 0; --t) {
        const int snext = path[t + 1];
        double lw[2];
        for (int s = 0; s < 2; ++s) {
            const double resid = omega(t + 1, snext) - psi * omega(t, s);
            lw[s] = log_alpha(s, t) + log_trans[s][snext] +
                    log_normal_density(resid, sigma2_path[t + 1]);
        }
        const double p1 = 1.0 / (1.0 + std::exp(lw[0] - lw[1]));
        path[t] = (rng.uniform() < p1) ? 1 : 0;
    }
    return path;
}

std::pair<double, double> sample_transition_probs(const Eigen::VectorXi& path, double a01,
                                                  double b01, double a10, double b10,
                                                  RngStream& rng) {
    long n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    for (int t = 1; t < path.size(); ++t) {
        if (path[t - 1] == 0)
            (path[t] == 1 ? n01 : n00) += 1;
        else
            (path[t] == 0 ? n10 : n11) += 1;
    }
    const double q01 = rng.beta(a01 + static_cast<double>(n01), b01 + static_cast<double>(n00));
    const double q10 = rng.beta(a10 + static_cast<double>(n10), b10 + static_cast<double>(n11));
    return {q01, q10};
}

}  // namespace mfdlm
