#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sfpn {

// Error taxonomy mirrors the process exit codes: 2 bad arguments,
// 3 data errors, 4 numeric failures.
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// n, c, h, w
using Shape4 = std::array<int, 4>;

inline std::int64_t numel(const Shape4& s) {
  return std::int64_t(s[0]) * s[1] * s[2] * s[3];
}

inline std::string shape_str(const Shape4& s) {
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" +
         std::to_string(s[2]) + "x" + std::to_string(s[3]);
}

template <class T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// log(1 + e^x) without overflow
template <class T>
inline T softplus_scalar(T x) {
  return (x > T(0) ? x : T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace sfpn
