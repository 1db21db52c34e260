#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hpm {

// Sentinel for impossible states. Anything at or below kNegInfThreshold is
// treated as the sentinel and stays there under addition.
inline constexpr double kNegInf = -1e30;
inline constexpr double kNegInfThreshold = -1e29;

inline bool is_neg_inf(double v) { return v <= kNegInfThreshold; }

inline double sat_add(double a, double b) {
    if (a <= kNegInfThreshold || b <= kNegInfThreshold) return kNegInf;
    return a + b;
}

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Argument outside the operation's domain.
struct DomainError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
// Bad or missing input data (images, manifests, model files).
struct DataError : Error {
    using Error::Error;
};
struct FormatError : DataError {
    using DataError::DataError;
};
struct NotFoundError : Error {
    using Error::Error;
};
struct ConvergenceError : Error {
    ConvergenceError(const std::string& what, std::vector<double> trace_)
        : Error(what), trace(std::move(trace_)) {}
    std::vector<double> trace;
};

// Seeded generator with platform-independent draws.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}
    uint64_t next() { return eng_(); }
    // Uniform in [0, 1).
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int n) { return int(uniform() * n); }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0;
        while (u1 <= 0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2 * M_PI * u2);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0;
    bool has_spare_ = false;
};

inline constexpr const char* kVersion = "0.4.0";

}  // namespace hpm
