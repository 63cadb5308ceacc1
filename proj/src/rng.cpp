#include "mfdlm/rng.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>

#include "mfdlm/common.hpp"

namespace mfdlm {

double RngStream::truncated_normal(double mean, double sd, double lo, double hi) {
    if (!(lo < hi)) throw numeric_error("truncated_normal: empty interval");
    boost::math::normal_distribution<double> std_norm(0.0, 1.0);
    const double za = (lo - mean) / sd;
    const double zb = (hi - mean) / sd;
    const double pa = boost::math::cdf(std_norm, za);
    const double pb = boost::math::cdf(std_norm, zb);
    if (pb - pa < 1e-14) {
        // Window carries no usable mass; fall back to the nearer bound,
        // nudged inside the open interval.
        const double eps = 1e-12 * (hi - lo);
        return (za > 0.0) ? lo + eps : hi - eps;
    }
    const double u = pa + (pb - pa) * uniform();
    double z = boost::math::quantile(std_norm, std::clamp(u, 1e-300, 1.0 - 1e-16));
    return std::clamp(mean + sd * z, std::nextafter(lo, hi), std::nextafter(hi, lo));
}

}  // namespace mfdlm
