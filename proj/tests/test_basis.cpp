#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mfdlm/basis.hpp"
#include "mfdlm/common.hpp"
#include "testutil.hpp"

using namespace mfdlm;

TEST_CASE("quantile knot placement") {
    std::vector<double> points;
    for (int i = 0; i <= 10; ++i) points.push_back(i);

    const KnotSequence ks = place_knots(points, 3);
    REQUIRE(ks.num_interior() == 3);
    // frozen from the type-7 quantile oracle at p = 1/4, 2/4, 3/4
    CHECK(ks.interior[0] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(ks.interior[1] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(ks.interior[2] == doctest::Approx(7.5).epsilon(1e-12));
    for (int j = 1; j <= 3; ++j)
        CHECK(ks.interior[static_cast<std::size_t>(j - 1)] ==
              doctest::Approx(oracle::quantile(points, j / 4.0)).epsilon(1e-12));
    CHECK(ks.a == 0.0);
    CHECK(ks.b == 10.0);
    CHECK(ks.full().size() == 3 + 8);
}

TEST_CASE("M = 20 default configuration accepted") {
    std::vector<double> points;
    for (int i = 0; i < 120; ++i) points.push_back(i / 119.0);
    const KnotSequence ks = place_knots(points, 20);
    CHECK(ks.num_interior() == 20);
    CHECK_NOTHROW(SplineBasis::build(ks));
}

TEST_CASE("degenerate support rejected") {
    CHECK_THROWS_AS(place_knots({1.0, 1.0, 1.0}, 2), data_error);
    CHECK_THROWS_AS(place_knots({0.0, 1.0, 2.0}, 3), data_error);  // fewer than M + 2 distinct
}

TEST_CASE("equal knot style") {
    std::vector<double> points;
    for (int i = 0; i <= 40; ++i) points.push_back(std::sqrt(i / 40.0));  // non-uniform
    const KnotSequence ks = place_knots(points, 4, KnotStyle::Equal);
    for (int j = 1; j <= 4; ++j)
        CHECK(ks.interior[static_cast<std::size_t>(j - 1)] == doctest::Approx(j / 5.0).epsilon(1e-12));
}

namespace {

SplineBasis default_basis(int M = 6, double a = 0.0, double b = 1.0) {
    KnotSequence ks;
    ks.a = a;
    ks.b = b;
    for (int j = 1; j <= M; ++j) ks.interior.push_back(a + (b - a) * j / (M + 1));
    return SplineBasis::build(ks);
}

}  // namespace

TEST_CASE("raw evaluation: partition of unity and boundary behavior") {
    const SplineBasis basis = default_basis(7, -1.0, 2.5);
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> unif(-1.0, 2.5);
    for (int rep = 0; rep < 1000; ++rep) {
        const Eigen::VectorXd v = basis.evaluate_raw(unif(gen));
        CHECK(std::abs(v.sum() - 1.0) < 1e-12);
    }
    const Eigen::VectorXd at_a = basis.evaluate_raw(-1.0);
    CHECK(at_a[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(at_a.tail(at_a.size() - 1).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd at_b = basis.evaluate_raw(2.5);
    CHECK(at_b[at_b.size() - 1] == doctest::Approx(1.0).epsilon(1e-14));

    CHECK_THROWS_AS(basis.evaluate_raw(2.5 + 1e-9), numeric_error);
    CHECK_THROWS_AS(basis.evaluate(-1.0 - 1e-9), numeric_error);
}

TEST_CASE("raw evaluation matches the direct recursion oracle") {
    // non-uniform interior knots
    KnotSequence ks;
    ks.a = 0.0;
    ks.b = 1.0;
    ks.interior = {0.15, 0.3, 0.55, 0.8};
    const SplineBasis basis = SplineBasis::build(ks);
    const std::vector<double> t = ks.full();

    std::vector<double> probes = {0.03, 0.15, 0.3, 0.42, 0.55, 0.71, 0.8, 0.97};
    for (double x : probes) {
        const Eigen::VectorXd v = basis.evaluate_raw(x);
        for (int i = 0; i < v.size(); ++i)
            CHECK(v[i] == doctest::Approx(oracle::bspline(t, i, 4, x)).epsilon(1e-12));
    }
}

TEST_CASE("second derivatives match finite differences of the recursion oracle") {
    KnotSequence ks;
    ks.a = 0.0;
    ks.b = 2.0;
    ks.interior = {0.4, 0.9, 1.1, 1.7};
    const SplineBasis basis = SplineBasis::build(ks);
    const std::vector<double> t = ks.full();
    const double h = 1e-5;
    for (double x : {0.2, 0.5, 0.95, 1.4, 1.85}) {
        const Eigen::VectorXd d2 = basis.evaluate_raw_deriv2(x);
        for (int i = 0; i < d2.size(); ++i) {
            const double fd = (oracle::bspline(t, i, 4, x + h) - 2.0 * oracle::bspline(t, i, 4, x) +
                               oracle::bspline(t, i, 4, x - h)) /
                              (h * h);
            CHECK(d2[i] == doctest::Approx(fd).epsilon(5e-5));
        }
    }
}

TEST_CASE("penalty matrix: linear functions unpenalized, trapezoid oracle, rank") {
    const SplineBasis basis = default_basis(5, 0.0, 3.0);
    const Eigen::MatrixXd omega = basis.penalty_raw();
    const int p = basis.dim();

    CHECK((omega - omega.transpose()).cwiseAbs().maxCoeff() < 1e-14);

    // f(tau) = c0 + c1 tau has zero roughness: raw coefficients are
    // c0 * ones + c1 * greville, i.e. the first two transform columns.
    const Eigen::VectorXd lin = 2.0 * basis.transform().col(0) - 0.7 * basis.transform().col(1);
    CHECK(std::abs(lin.dot(omega * lin)) < 1e-10 * omega.norm());

    // dense quadrature oracle on the second derivatives; the integrand kinks
    // at the knots, so the rule runs per knot span (composite Simpson,
    // ~1e4 nodes overall)
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(p, p);
    std::vector<double> brk = {0.0};
    for (double k : basis.knots().interior) brk.push_back(k);
    brk.push_back(3.0);
    const int per_span = 1600;  // even
    for (std::size_t s = 0; s + 1 < brk.size(); ++s) {
        const double h = (brk[s + 1] - brk[s]) / per_span;
        for (int i = 0; i <= per_span; ++i) {
            const double x = brk[s] + h * i;
            const double w = (i == 0 || i == per_span) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            const Eigen::VectorXd d2 = basis.evaluate_raw_deriv2(x);
            dense += (w * h / 3.0) * d2 * d2.transpose();
        }
    }
    CHECK((omega - dense).cwiseAbs().maxCoeff() < 1e-8 * omega.cwiseAbs().maxCoeff());

    // rank M + 2: two eigenvalues vanish, the rest are positive
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
    const Eigen::VectorXd ev = es.eigenvalues();
    CHECK(ev[0] < 1e-10 * ev[p - 1]);
    CHECK(ev[1] < 1e-10 * ev[p - 1]);
    CHECK(ev[2] > 1e-12 * ev[p - 1]);
    CHECK(basis.penalty_singular_values().size() == p - 2);
    CHECK(basis.penalty_singular_values().minCoeff() > 0.0);
}

TEST_CASE("reparameterization: same span, diagonal penalty, exact constants") {
    const SplineBasis basis = default_basis(6, 0.0, 1.0);
    const int p = basis.dim();

    // constant function via the first coordinate only
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(p);
    e1[0] = 1.0;
    for (double x : {0.0, 0.31, 0.77, 1.0})
        CHECK(basis.evaluate(x).dot(e1) == doctest::Approx(1.0).epsilon(1e-12));

    // transformed penalty is diag(0, 0, 1, ..., 1)
    const Eigen::MatrixXd pen =
        basis.transform().transpose() * basis.penalty_raw() * basis.transform();
    Eigen::MatrixXd expect = Eigen::MatrixXd::Identity(p, p);
    expect(0, 0) = expect(1, 1) = 0.0;
    CHECK((pen - expect).cwiseAbs().maxCoeff() < 1e-8);

    // dual-basis least squares fits agree pointwise
    const int n_pts = 50;
    Eigen::VectorXd xs(n_pts), ys(n_pts);
    for (int i = 0; i < n_pts; ++i) {
        xs[i] = static_cast<double>(i) / (n_pts - 1);
        ys[i] = std::sin(3.0 * xs[i]);
    }
    Eigen::MatrixXd raw(n_pts, p), rep(n_pts, p);
    for (int i = 0; i < n_pts; ++i) {
        raw.row(i) = basis.evaluate_raw(xs[i]).transpose();
        rep.row(i) = basis.evaluate(xs[i]).transpose();
    }
    const Eigen::VectorXd fit_raw = raw.colPivHouseholderQr().solve(ys);
    const Eigen::VectorXd fit_rep = rep.colPivHouseholderQr().solve(ys);
    for (int i = 0; i < n_pts; ++i)
        CHECK(raw.row(i).dot(fit_raw) == doctest::Approx(rep.row(i).dot(fit_rep)).epsilon(1e-8));
}

TEST_CASE("space equivalence for random targets") {
    const SplineBasis basis = default_basis(5, 0.0, 2.0);
    const int p = basis.dim();
    std::mt19937_64 gen(7);
    std::normal_distribution<double> norm;

    const int n_pts = 40;
    Eigen::VectorXd xs(n_pts);
    for (int i = 0; i < n_pts; ++i) xs[i] = 2.0 * i / (n_pts - 1);
    Eigen::MatrixXd raw(n_pts, p), rep(n_pts, p);
    for (int i = 0; i < n_pts; ++i) {
        raw.row(i) = basis.evaluate_raw(xs[i]).transpose();
        rep.row(i) = basis.evaluate(xs[i]).transpose();
    }
    for (int target = 0; target < 20; ++target) {
        Eigen::VectorXd y(n_pts);
        for (int i = 0; i < n_pts; ++i) y[i] = norm(gen);
        const Eigen::VectorXd fa = raw.colPivHouseholderQr().solve(y);
        const Eigen::VectorXd fb = rep.colPivHouseholderQr().solve(y);
        CHECK((raw * fa - rep * fb).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("gram matrix: trapezoid oracle, PD, unit-norm constant") {
    const double b = 2.5;
    const SplineBasis basis = default_basis(6, 0.0, b);
    const Eigen::MatrixXd J = basis.gram();
    const int p = basis.dim();

    CHECK((J - J.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    CHECK(es.eigenvalues().minCoeff() > 0.0);

    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(p, p);
    std::vector<double> brk = {0.0};
    for (double k : basis.knots().interior) brk.push_back(k);
    brk.push_back(b);
    const int per_span = 1600;  // even; composite Simpson per knot span
    for (std::size_t s = 0; s + 1 < brk.size(); ++s) {
        const double h = (brk[s + 1] - brk[s]) / per_span;
        for (int i = 0; i <= per_span; ++i) {
            const double x = brk[s] + h * i;
            const double w = (i == 0 || i == per_span) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            const Eigen::VectorXd phi = basis.evaluate(x);
            dense += (w * h / 3.0) * phi * phi.transpose();
        }
    }
    CHECK((J - dense).cwiseAbs().maxCoeff() < 1e-8 * J.cwiseAbs().maxCoeff());

    // the constant 1/sqrt(b - a) has unit L2 norm
    Eigen::VectorXd d = Eigen::VectorXd::Zero(p);
    d[0] = 1.0 / std::sqrt(b);
    CHECK(d.dot(J * d) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("basis summary mentions knots and singular values") {
    const SplineBasis basis = default_basis(3);
    const std::string s = basis.summary();
    CHECK(s.find("interior knots") != std::string::npos);
    CHECK(s.find("singular values") != std::string::npos);
}
