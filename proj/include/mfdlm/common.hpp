#pragma once

#include <charconv>
#include <stdexcept>
#include <string>

namespace mfdlm {

/// Malformed input files, inconsistent shapes, bad configuration.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failures: non-PD matrices, lost positive-definiteness,
/// degenerate draws.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kVersion = "0.1.0";

/// Shortest decimal representation that round-trips exactly; keeps written
/// files byte-stable across runs.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace mfdlm
