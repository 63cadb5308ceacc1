#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mfdlm {

/// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and an id path
/// (block, iteration, k, c, ...). Streams are a pure function of the path,
/// so draws do not depend on thread scheduling or on resuming from a
/// checkpoint.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(root);
    for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x100));
    return h;
}

/// Seedable random stream with the distributions used across the samplers.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return unif_(gen_); }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() { return norm_(gen_); }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Gamma with shape/rate parameterization (mean = shape/rate).
    double gamma(double shape, double rate) {
        std::gamma_distribution<double> g(shape, 1.0 / rate);
        return g(gen_);
    }

    double chi_squared(double df) { return gamma(0.5 * df, 0.5); }

    double beta(double a, double b) {
        double x = gamma(a, 1.0);
        double y = gamma(b, 1.0);
        return x / (x + y);
    }

    /// Uniform draw from {0, ..., n-1}.
    int uniform_int(int n) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return d(gen_);
    }

    /// Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
        return p;
    }

    /// N(mean, sd^2) restricted to (lo, hi), drawn by inverse CDF.
    double truncated_normal(double mean, double sd, double lo, double hi);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace mfdlm
