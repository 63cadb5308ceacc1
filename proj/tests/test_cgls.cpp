#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mfdlm/cgls.hpp"
#include "mfdlm/common.hpp"
#include "testutil.hpp"

using namespace mfdlm;

namespace {

Eigen::MatrixXd random_spd(int n, std::mt19937_64& gen) {
    std::normal_distribution<double> norm;
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = norm(gen);
    return A * A.transpose() + n * Eigen::MatrixXd::Identity(n, n);
}

Eigen::MatrixXd random_matrix(int n, int m, std::mt19937_64& gen) {
    std::normal_distribution<double> norm;
    Eigen::MatrixXd A(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) A(i, j) = norm(gen);
    return A;
}

}  // namespace

TEST_CASE("unconstrained solve") {
    GaussianFactor g;
    g.precision = Eigen::MatrixXd::Identity(2, 2);
    g.linear.resize(2);
    g.linear << 3.0, -1.0;
    const Eigen::VectorXd d = solve_unconstrained(g);
    CHECK(d[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(d[1] == doctest::Approx(-1.0).epsilon(1e-14));

    g.linear.setZero();
    CHECK(solve_unconstrained(g).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 gen(11);
    for (int rep = 0; rep < 20; ++rep) {
        GaussianFactor r;
        r.precision = random_spd(5, gen);
        r.linear = random_matrix(5, 1, gen);
        const Eigen::VectorXd via_chol = solve_unconstrained(r);
        const Eigen::VectorXd via_inverse = r.precision.inverse() * r.linear;
        CHECK((via_chol - via_inverse).cwiseAbs().maxCoeff() < 1e-10);
    }

    GaussianFactor bad;
    bad.precision = -Eigen::MatrixXd::Identity(2, 2);
    bad.linear = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(solve_unconstrained(bad), numeric_error);
}

TEST_CASE("constrained solve: coordinate constraint under identity") {
    GaussianFactor g;
    g.precision = Eigen::MatrixXd::Identity(3, 3);
    g.linear.resize(3);
    g.linear << 1.0, 2.0, -4.0;
    g.constraints = Eigen::MatrixXd::Zero(3, 1);
    g.constraints(0, 0) = 1.0;
    const Eigen::VectorXd d = solve_constrained(g);
    CHECK(std::abs(d[0]) < 1e-14);
    CHECK(d[1] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(d[2] == doctest::Approx(-4.0).epsilon(1e-14));
}

TEST_CASE("constrained solve matches the dense KKT oracle") {
    std::mt19937_64 gen(23);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 6;
        GaussianFactor g;
        g.precision = random_spd(n, gen);
        g.linear = random_matrix(n, 1, gen);
        g.constraints = random_matrix(n, 2, gen);
        const Eigen::VectorXd d = solve_constrained(g);
        const Eigen::VectorXd kkt =
            oracle::constrained_solve_kkt(g.precision, g.linear, g.constraints);
        CHECK((d - kkt).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + kkt.cwiseAbs().maxCoeff()));
        CHECK((g.constraints.transpose() * d).cwiseAbs().maxCoeff() < 1e-10 * d.norm());

        // tildeB b = B tildeb: the conditioned mean solves the constrained
        // regression problem
        const Eigen::MatrixXd btilde = oracle::constrained_covariance(g.precision, g.constraints);
        CHECK((btilde * g.linear - d).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + d.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("empty constraints reduce to the unconstrained solve") {
    std::mt19937_64 gen(5);
    GaussianFactor g;
    g.precision = random_spd(4, gen);
    g.linear = random_matrix(4, 1, gen);
    CHECK((solve_constrained(g) - solve_unconstrained(g)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constrained optimality against random feasible perturbations") {
    std::mt19937_64 gen(31);
    std::normal_distribution<double> norm;
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 7;
        GaussianFactor g;
        g.precision = random_spd(n, gen);
        g.linear = random_matrix(n, 1, gen);
        g.constraints = random_matrix(n, 2, gen);
        const Eigen::VectorXd d = solve_constrained(g);
        auto objective = [&](const Eigen::VectorXd& v) {
            return 0.5 * v.dot(g.precision * v) - g.linear.dot(v);
        };
        // projector onto the feasible subspace {v : L'v = 0}
        const Eigen::MatrixXd L = g.constraints;
        const Eigen::MatrixXd proj =
            Eigen::MatrixXd::Identity(n, n) - L * (L.transpose() * L).inverse() * L.transpose();
        const double f0 = objective(d);
        for (int k = 0; k < 1000; ++k) {
            Eigen::VectorXd step(n);
            for (int i = 0; i < n; ++i) step[i] = 0.3 * norm(gen);
            CHECK(objective(d + proj * step) >= f0 - 1e-10);
        }
    }
}

TEST_CASE("rank-deficient constraints are rejected") {
    std::mt19937_64 gen(3);
    GaussianFactor g;
    g.precision = random_spd(5, gen);
    g.linear = random_matrix(5, 1, gen);
    g.constraints.resize(5, 2);
    g.constraints.col(0) = random_matrix(5, 1, gen);
    g.constraints.col(1) = 2.0 * g.constraints.col(0);
    CHECK_THROWS_AS(solve_constrained(g), numeric_error);
}

TEST_CASE("constrained sampler: moments match the conditioned Gaussian") {
    std::mt19937_64 seeder(77);
    const int n_draws = 100000;
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 5;
        GaussianFactor g;
        g.precision = random_spd(n, seeder);
        g.linear = random_matrix(n, 1, seeder);
        g.constraints = random_matrix(n, 1, seeder);

        const Eigen::VectorXd mean_expect = solve_constrained(g);
        const Eigen::MatrixXd cov_expect =
            oracle::constrained_covariance(g.precision, g.constraints);

        RngStream rng(900 + static_cast<std::uint64_t>(rep));
        Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(n);
        Eigen::MatrixXd outer_acc = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n_draws; ++i) {
            const Eigen::VectorXd d = sample_constrained(g, rng);
            CHECK((g.constraints.transpose() * d).cwiseAbs().maxCoeff() <
                  1e-10 * (1.0 + d.norm()));
            mean_acc += d;
            outer_acc += d * d.transpose();
        }
        mean_acc /= n_draws;
        const Eigen::MatrixXd cov_emp =
            outer_acc / n_draws - mean_acc * mean_acc.transpose();

        for (int i = 0; i < n; ++i) {
            const double se = std::sqrt(std::max(cov_expect(i, i), 1e-30) / n_draws);
            CHECK(std::abs(mean_acc[i] - mean_expect[i]) < 5.0 * se + 1e-12);
            for (int j = 0; j < n; ++j) {
                const double se_cov = std::sqrt(
                    (cov_expect(i, i) * cov_expect(j, j) + cov_expect(i, j) * cov_expect(i, j)) /
                    n_draws);
                CHECK(std::abs(cov_emp(i, j) - cov_expect(i, j)) < 5.0 * se_cov + 1e-12);
            }
        }
    }
}

TEST_CASE("unconstrained sampler moments (empty L)") {
    std::mt19937_64 seeder(41);
    const int n = 4;
    GaussianFactor g;
    g.precision = random_spd(n, seeder);
    g.linear = random_matrix(n, 1, seeder);

    const Eigen::VectorXd mean_expect = solve_unconstrained(g);
    const Eigen::MatrixXd cov_expect = g.precision.inverse();

    RngStream rng(123);
    const int n_draws = 100000;
    Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd outer_acc = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n_draws; ++i) {
        const Eigen::VectorXd d = sample_constrained(g, rng);
        mean_acc += d;
        outer_acc += d * d.transpose();
    }
    mean_acc /= n_draws;
    const Eigen::MatrixXd cov_emp = outer_acc / n_draws - mean_acc * mean_acc.transpose();
    for (int i = 0; i < n; ++i) {
        CHECK(std::abs(mean_acc[i] - mean_expect[i]) <
              5.0 * std::sqrt(cov_expect(i, i) / n_draws));
        for (int j = 0; j < n; ++j) {
            const double se_cov = std::sqrt(
                (cov_expect(i, i) * cov_expect(j, j) + cov_expect(i, j) * cov_expect(i, j)) /
                n_draws);
            CHECK(std::abs(cov_emp(i, j) - cov_expect(i, j)) < 5.0 * se_cov);
        }
    }
}
