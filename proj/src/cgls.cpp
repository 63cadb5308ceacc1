#include "mfdlm/cgls.hpp"

#include "mfdlm/common.hpp"

namespace mfdlm {

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_precision(const GaussianFactor& g) {
    if (g.precision.rows() != g.precision.cols() || g.precision.rows() != g.linear.size())
        throw numeric_error("gaussian factor: inconsistent dimensions");
    Eigen::LLT<Eigen::MatrixXd> llt(g.precision);
    if (llt.info() != Eigen::Success)
        throw numeric_error("gaussian factor: precision matrix is not positive definite");
    return llt;
}

void check_constraint_rank(const Eigen::MatrixXd& L) {
    const int J = static_cast<int>(L.cols());
    if (J == 0) return;
    if (L.rows() < J) throw numeric_error("constraints: more columns than dimensions");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(L);
    qr.setThreshold(1e-12);
    if (qr.rank() < J)
        throw numeric_error("constraints: matrix L is rank deficient (rank " +
                            std::to_string(qr.rank()) + " < " + std::to_string(J) + ")");
}

// Lambda = (L'BL)^{-1} L'Bb given BL and Bb.
Eigen::VectorXd gls_coefficients(const Eigen::MatrixXd& L, const Eigen::MatrixXd& BL,
                                 const Eigen::VectorXd& Bb) {
    Eigen::MatrixXd LtBL = L.transpose() * BL;
    LtBL = 0.5 * (LtBL + LtBL.transpose());
    Eigen::LLT<Eigen::MatrixXd> small(LtBL);
    if (small.info() != Eigen::Success)
        throw numeric_error("constraints: L'BL is singular");
    return small.solve(L.transpose() * Bb);
}

}  // namespace

Eigen::VectorXd solve_unconstrained(const GaussianFactor& g) {
    return factor_precision(g).solve(g.linear);
}

Eigen::VectorXd solve_constrained(const GaussianFactor& g) {
    if (g.num_constraints() == 0) return solve_unconstrained(g);
    check_constraint_rank(g.constraints);
    const auto llt = factor_precision(g);
    const Eigen::VectorXd Bb = llt.solve(g.linear);
    const Eigen::MatrixXd BL = llt.solve(g.constraints);
    const Eigen::VectorXd lambda = gls_coefficients(g.constraints, BL, Bb);
    return llt.solve(g.linear - g.constraints * lambda);
}

Eigen::VectorXd sample_constrained(const GaussianFactor& g, RngStream& rng) {
    const auto llt = factor_precision(g);
    const auto lower = llt.matrixL();
    const int n = g.dim();

    // Unconstrained draw: forward solve for the mean term, then a backward
    // solve of (chol)' d = b~ + z gives d ~ N(Bb, B).
    Eigen::VectorXd bbar = lower.solve(g.linear);
    for (int i = 0; i < n; ++i) bbar[i] += rng.normal();
    Eigen::VectorXd draw = lower.transpose().solve(bbar);

    const int J = g.num_constraints();
    if (J == 0) return draw;
    check_constraint_rank(g.constraints);

    // L~ = B L via the same triangular factors, then project the draw onto
    // {d : d'L = 0}.
    const Eigen::MatrixXd Ltilde = lower.transpose().solve(lower.solve(g.constraints).eval()).eval();
    Eigen::MatrixXd LtLtilde = g.constraints.transpose() * Ltilde;
    LtLtilde = 0.5 * (LtLtilde + LtLtilde.transpose());
    Eigen::LLT<Eigen::MatrixXd> small(LtLtilde);
    if (small.info() != Eigen::Success)
        throw numeric_error("constraints: L'BL is singular");
    draw -= Ltilde * small.solve(g.constraints.transpose() * draw);
    return draw;
}

}  // namespace mfdlm
