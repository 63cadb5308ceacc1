#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace mfdlm {

/// Cubic B-spline knot sequence on [a, b] with 4-fold boundary knots and
/// M strictly increasing interior knots (M + 8 knots in total).
struct KnotSequence {
    double a = 0.0;
    double b = 1.0;
    std::vector<double> interior;

    int num_interior() const { return static_cast<int>(interior.size()); }

    /// Full padded knot vector of length M + 8.
    std::vector<double> full() const;

    void validate() const;
};

enum class KnotStyle { Quantile, Equal };

/// Interior knots at the j/(M+1) quantiles of the distinct observation
/// points (or equally spaced); boundary knots at the extremes.
KnotSequence place_knots(std::vector<double> points, int M, KnotStyle style = KnotStyle::Quantile);

/// Roughness penalty of the raw cubic B-spline basis on the given knots:
/// Omega[i, j] = integral of the product of second derivatives. Exact
/// (Gauss-Legendre per knot span).
Eigen::MatrixXd penalty_matrix(const KnotSequence& knots);

/// Cubic B-spline basis together with its reparameterized form: the first
/// two coordinates span constants and linears (unpenalized), the remaining
/// M + 2 carry an identity penalty. Immutable once built; evaluation is
/// safe to share across threads.
class SplineBasis {
public:
    static SplineBasis build(const KnotSequence& knots);

    int dim() const { return static_cast<int>(transform_.cols()); }  // M + 4

    const KnotSequence& knots() const { return knots_; }
    double domain_lo() const { return knots_.a; }
    double domain_hi() const { return knots_.b; }

    /// Raw cubic B-spline values at tau; length M + 4, sums to one.
    Eigen::VectorXd evaluate_raw(double tau) const;

    /// Second derivatives of the raw basis at tau.
    Eigen::VectorXd evaluate_raw_deriv2(double tau) const;

    /// Reparameterized basis phi(tau) = [1, tau, penalized block].
    Eigen::VectorXd evaluate(double tau) const;

    /// Rows phi(tau_i)' for a vector of evaluation points.
    Eigen::MatrixXd evaluate_matrix(const Eigen::VectorXd& taus) const;

    /// Raw penalty matrix Omega (symmetric PSD, rank M + 2).
    const Eigen::MatrixXd& penalty_raw() const { return penalty_raw_; }

    /// Gram matrix J of the reparameterized basis (symmetric PD).
    const Eigen::MatrixXd& gram() const { return gram_; }

    /// Maps reparameterized coefficients to raw B-spline coefficients.
    const Eigen::MatrixXd& transform() const { return transform_; }

    /// The M + 2 positive singular values of Omega, decreasing.
    const Eigen::VectorXd& penalty_singular_values() const { return penalty_sv_; }

    /// Knots and penalty spectrum as text, for debugging.
    std::string summary() const;

private:
    SplineBasis() = default;

    KnotSequence knots_;
    Eigen::MatrixXd penalty_raw_;
    Eigen::MatrixXd transform_;
    Eigen::MatrixXd gram_;
    Eigen::VectorXd penalty_sv_;
};

}  // namespace mfdlm
