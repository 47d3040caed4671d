#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace obscma {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr Complex kJ{0.0, 1.0};

// Raised for malformed arguments, files and configurations.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Raised when the cyclic prefix cannot absorb the channel memory.
class InterFrameInterference : public std::runtime_error {
public:
    explicit InterFrameInterference(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an exhaustive search would exceed the hypothesis guard.
class EnumerationTooLarge : public std::runtime_error {
public:
    explicit EnumerationTooLarge(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw InvalidInput(message);
    }
}

// Non-negative modulo for cyclic grid indexing.
constexpr std::ptrdiff_t wrap(std::ptrdiff_t value, std::ptrdiff_t modulus) {
    const std::ptrdiff_t r = value % modulus;
    return r < 0 ? r + modulus : r;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double linear) { return 10.0 * std::log10(linear); }
inline double dbm_to_watts(double dbm) { return db_to_linear(dbm - 30.0); }
inline double watts_to_dbm(double watts) { return linear_to_db(watts) + 30.0; }

}  // namespace obscma
