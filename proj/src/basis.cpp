#include "mfdlm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfdlm/common.hpp"

namespace mfdlm {

namespace {

// Gauss-Legendre nodes/weights on [-1, 1].
constexpr double kGL2Node = 0.5773502691896257;  // 1/sqrt(3)
constexpr double kGL4Nodes[2] = {0.3399810435848563, 0.8611363115940526};
constexpr double kGL4Weights[2] = {0.6521451548625461, 0.3478548451374538};

// Type-7 quantile (linear interpolation at h = (n-1)p) of sorted values.
double quantile_sorted(const std::vector<double>& sorted, double p) {
    const auto n = sorted.size();
    const double h = static_cast<double>(n - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= n) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Index i of the knot span [t[i], t[i+1]) containing x, clamped so the
// boundary x = b falls into the last non-degenerate span.
int find_span(const std::vector<double>& t, double x) {
    const int n = static_cast<int>(t.size()) - 4;  // number of cubic basis functions
    auto it = std::upper_bound(t.begin(), t.end(), x);
    int i = static_cast<int>(it - t.begin()) - 1;
    return std::clamp(i, 3, n - 1);
}

// Order-2 (linear) B-spline values over the full knot vector; only the two
// functions covering the span of x are nonzero.
Eigen::VectorXd linear_bspline_values(const std::vector<double>& t, double x, int span) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<int>(t.size()) - 2);
    const double den = t[span + 1] - t[span];
    if (den > 0.0) {
        if (span - 1 >= 0) v[span - 1] = (t[span + 1] - x) / den;
        v[span] = (x - t[span]) / den;
    }
    return v;
}

// B''_{i,4}(x) for all i, as a fixed combination of order-2 values; terms
// with a zero-length knot difference vanish with their basis function.
Eigen::VectorXd cubic_deriv2_values(const std::vector<double>& t, double x) {
    const int n = static_cast<int>(t.size()) - 4;
    const int span = find_span(t, x);
    const Eigen::VectorXd n2 = linear_bspline_values(t, x, span);
    auto safe = [](double num, double d1, double d2) {
        return (d1 > 0.0 && d2 > 0.0) ? num / (d1 * d2) : 0.0;
    };
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        acc += safe(n2[i], t[i + 3] - t[i], t[i + 2] - t[i]);
        acc -= safe(n2[i + 1], t[i + 3] - t[i], t[i + 3] - t[i + 1]);
        acc -= safe(n2[i + 1], t[i + 4] - t[i + 1], t[i + 3] - t[i + 1]);
        acc += safe(n2[i + 2], t[i + 4] - t[i + 1], t[i + 4] - t[i + 2]);
        out[i] = 6.0 * acc;
    }
    return out;
}

std::vector<double> breakpoints(const KnotSequence& knots) {
    std::vector<double> brk;
    brk.reserve(knots.interior.size() + 2);
    brk.push_back(knots.a);
    brk.insert(brk.end(), knots.interior.begin(), knots.interior.end());
    brk.push_back(knots.b);
    return brk;
}

void check_domain(const KnotSequence& ks, double tau) {
    if (tau < ks.a || tau > ks.b)
        throw numeric_error("spline evaluation outside domain [" + std::to_string(ks.a) + ", " +
                            std::to_string(ks.b) + "]: tau = " + std::to_string(tau));
}

}  // namespace

std::vector<double> KnotSequence::full() const {
    std::vector<double> t;
    t.reserve(interior.size() + 8);
    for (int i = 0; i < 4; ++i) t.push_back(a);
    t.insert(t.end(), interior.begin(), interior.end());
    for (int i = 0; i < 4; ++i) t.push_back(b);
    return t;
}

void KnotSequence::validate() const {
    if (!(a < b)) throw data_error("knot sequence: requires a < b");
    double prev = a;
    for (double k : interior) {
        if (!(k > prev)) throw data_error("knot sequence: interior knots must be strictly increasing inside (a, b)");
        prev = k;
    }
    if (!interior.empty() && !(interior.back() < b))
        throw data_error("knot sequence: interior knots must lie inside (a, b)");
}

KnotSequence place_knots(std::vector<double> points, int M, KnotStyle style) {
    if (points.empty()) throw data_error("place_knots: no observation points");
    if (M < 1) throw data_error("place_knots: M must be >= 1");
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    if (static_cast<int>(points.size()) < M + 2)
        throw data_error("place_knots: need at least M + 2 = " + std::to_string(M + 2) +
                         " distinct observation points, have " + std::to_string(points.size()));

    KnotSequence ks;
    ks.a = points.front();
    ks.b = points.back();
    ks.interior.resize(M);
    for (int j = 1; j <= M; ++j) {
        const double p = static_cast<double>(j) / (M + 1);
        ks.interior[j - 1] = (style == KnotStyle::Quantile)
                                 ? quantile_sorted(points, p)
                                 : ks.a + p * (ks.b - ks.a);
    }
    ks.validate();
    return ks;
}

Eigen::MatrixXd penalty_matrix(const KnotSequence& knots) {
    knots.validate();
    const std::vector<double> t = knots.full();
    const std::vector<double> brk = breakpoints(knots);
    const int n = static_cast<int>(t.size()) - 4;
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n, n);

    // Second derivatives of cubics are piecewise linear, so the product is
    // piecewise quadratic: 2-point Gauss-Legendre per span is exact.
    for (std::size_t s = 0; s + 1 < brk.size(); ++s) {
        const double mid = 0.5 * (brk[s] + brk[s + 1]);
        const double half = 0.5 * (brk[s + 1] - brk[s]);
        if (half <= 0.0) continue;
        for (double xi : {-kGL2Node, kGL2Node}) {
            const Eigen::VectorXd d2 = cubic_deriv2_values(t, mid + half * xi);
            omega.noalias() += half * d2 * d2.transpose();
        }
    }
    return 0.5 * (omega + omega.transpose());
}

SplineBasis SplineBasis::build(const KnotSequence& knots) {
    knots.validate();
    SplineBasis basis;
    basis.knots_ = knots;
    basis.penalty_raw_ = penalty_matrix(knots);

    const int n = static_cast<int>(basis.penalty_raw_.rows());
    const int n_pen = n - 2;  // M + 2 positive singular values

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(basis.penalty_raw_);
    if (es.info() != Eigen::Success)
        throw numeric_error("penalty reparameterization: eigendecomposition failed");
    const Eigen::VectorXd evals = es.eigenvalues();  // ascending
    const double scale = evals[n - 1];
    if (!(scale > 0.0) || evals[1] > 1e-8 * evals[2] + 1e-14 * scale || evals[2] <= 1e-14 * scale) {
        std::ostringstream os;
        os << "penalty reparameterization: spectrum does not split into 2 null + " << n_pen
           << " positive values; eigenvalues " << evals.transpose();
        throw numeric_error(os.str());
    }

    // Positive block in decreasing order, columns sign-fixed for determinism.
    Eigen::MatrixXd u_pen(n, n_pen);
    Eigen::VectorXd sv(n_pen);
    for (int j = 0; j < n_pen; ++j) {
        const int src = n - 1 - j;
        Eigen::VectorXd col = es.eigenvectors().col(src);
        int arg_max = 0;
        col.cwiseAbs().maxCoeff(&arg_max);
        if (col[arg_max] < 0.0) col = -col;
        u_pen.col(j) = col;
        sv[j] = evals[src];
    }
    basis.penalty_sv_ = sv;

    const std::vector<double> t = knots.full();
    basis.transform_.resize(n, n);
    basis.transform_.col(0) = Eigen::VectorXd::Ones(n);  // partition of unity
    for (int i = 0; i < n; ++i)                          // Greville abscissae represent f(tau) = tau
        basis.transform_(i, 1) = (t[i + 1] + t[i + 2] + t[i + 3]) / 3.0;
    basis.transform_.rightCols(n_pen) = u_pen * sv.cwiseSqrt().cwiseInverse().asDiagonal();

    // Gram matrix of the reparameterized basis, exact: entries are piecewise
    // polynomials of degree <= 6, within reach of 4-point Gauss-Legendre.
    const std::vector<double> brk = breakpoints(knots);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t s = 0; s + 1 < brk.size(); ++s) {
        const double mid = 0.5 * (brk[s] + brk[s + 1]);
        const double half = 0.5 * (brk[s + 1] - brk[s]);
        if (half <= 0.0) continue;
        for (int q = 0; q < 2; ++q) {
            for (double sgn : {-1.0, 1.0}) {
                const double x = mid + half * sgn * kGL4Nodes[q];
                const Eigen::VectorXd phi = basis.transform_.transpose() * basis.evaluate_raw(x);
                gram.noalias() += (half * kGL4Weights[q]) * phi * phi.transpose();
            }
        }
    }
    basis.gram_ = 0.5 * (gram + gram.transpose());

    Eigen::LLT<Eigen::MatrixXd> llt(basis.gram_);
    if (llt.info() != Eigen::Success)
        throw numeric_error("gram matrix is not positive definite");
    return basis;
}

Eigen::VectorXd SplineBasis::evaluate_raw(double tau) const {
    check_domain(knots_, tau);
    const std::vector<double> t = knots_.full();
    const int n = static_cast<int>(t.size()) - 4;
    const int i = find_span(t, tau);

    // Cox-de Boor order elevation: N holds B_{i-d..i, d+1}(tau).
    double N[4] = {1.0, 0.0, 0.0, 0.0};
    double left[4], right[4];
    for (int d = 1; d <= 3; ++d) {
        left[d] = tau - t[i + 1 - d];
        right[d] = t[i + d] - tau;
        double saved = 0.0;
        for (int r = 0; r < d; ++r) {
            const double den = right[r + 1] + left[d - r];
            const double tmp = (den != 0.0) ? N[r] / den : 0.0;
            N[r] = saved + right[r + 1] * tmp;
            saved = left[d - r] * tmp;
        }
        N[d] = saved;
    }

    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int r = 0; r <= 3; ++r) {
        const int idx = i - 3 + r;
        if (idx >= 0 && idx < n) out[idx] = N[r];
    }
    return out;
}

Eigen::VectorXd SplineBasis::evaluate_raw_deriv2(double tau) const {
    check_domain(knots_, tau);
    return cubic_deriv2_values(knots_.full(), tau);
}

Eigen::VectorXd SplineBasis::evaluate(double tau) const {
    return transform_.transpose() * evaluate_raw(tau);
}

Eigen::MatrixXd SplineBasis::evaluate_matrix(const Eigen::VectorXd& taus) const {
    Eigen::MatrixXd out(taus.size(), dim());
    for (Eigen::Index i = 0; i < taus.size(); ++i) out.row(i) = evaluate(taus[i]).transpose();
    return out;
}

std::string SplineBasis::summary() const {
    std::ostringstream os;
    os << "cubic B-spline basis on [" << knots_.a << ", " << knots_.b << "], M = "
       << knots_.num_interior() << ", dim = " << dim() << "\n";
    os << "interior knots:";
    for (double k : knots_.interior) os << " " << k;
    os << "\npenalty singular values:";
    for (Eigen::Index i = 0; i < penalty_sv_.size(); ++i) os << " " << penalty_sv_[i];
    os << "\n";
    return os.str();
}

}  // namespace mfdlm
