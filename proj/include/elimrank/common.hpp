#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace elimrank {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

/// Malformed input text; carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a documented contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values reached a place that requires finite ones.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: mismatched tape, wrong call order, shape confusion.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(exp(x) + exp(y)) without overflow. Exact when either side is -inf.
inline double logaddexp(double x, double y) {
  if (x == kNegInf) return y;
  if (y == kNegInf) return x;
  const double hi = x > y ? x : y;
  const double lo = x > y ? y : x;
  return hi + std::log1p(std::exp(lo - hi));
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Dense row-major matrix; just enough for the K x p weight blocks used here.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(a.data() + r * cols, cols);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(a.data() + r * cols, cols);
  }
  void set_zero() { std::fill(a.begin(), a.end(), 0.0); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// 17 significant digits: the shortest form guaranteed to round-trip a double.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Little-endian binary IO (model containers)
// ---------------------------------------------------------------------------

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64le(std::ostream& os, double v) {
  write_u64le(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw ValidationError("truncated binary container");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64le(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw ValidationError("truncated binary container");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline double read_f64le(std::istream& is) {
  return std::bit_cast<double>(read_u64le(is));
}

}  // namespace elimrank
