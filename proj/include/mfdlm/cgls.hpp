#pragma once

#include <Eigen/Dense>

#include "mfdlm/rng.hpp"

namespace mfdlm {

/// Gaussian in information form: precision B^{-1} (SPD), linear term b, and
/// an optional matrix L of linear constraints d'L = 0 (n x J, full column
/// rank). J = 0 means unconstrained.
struct GaussianFactor {
    Eigen::MatrixXd precision;
    Eigen::VectorXd linear;
    Eigen::MatrixXd constraints;

    int dim() const { return static_cast<int>(precision.rows()); }
    int num_constraints() const {
        return constraints.size() == 0 ? 0 : static_cast<int>(constraints.cols());
    }
};

/// Solution d = B b of the unpenalized problem, via Cholesky of the
/// precision; B is never formed. Constraints, if present, are ignored.
Eigen::VectorXd solve_unconstrained(const GaussianFactor& g);

/// Constrained minimizer d = B(b - L Lambda) with Lambda the GLS
/// coefficients of b on L under inner product B; satisfies d'L = 0.
Eigen::VectorXd solve_constrained(const GaussianFactor& g);

/// Draw from N(Bb, B) conditioned on d'L = 0, i.e. N(B~ b, B~) with
/// B~ = B - B L (L'BL)^{-1} L'B. Implemented as: Cholesky of the precision,
/// an unconstrained draw by two triangular solves, then projection of the
/// draw onto the constraint set.
Eigen::VectorXd sample_constrained(const GaussianFactor& g, RngStream& rng);

}  // namespace mfdlm
