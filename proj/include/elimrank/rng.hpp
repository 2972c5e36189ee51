#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace elimrank {

/// splitmix64 finalizer; used to whiten seeds derived from stream names.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a root seed and a stream name.
/// All randomness in a run flows from one root seed through named streams,
/// so individual components can be replayed in isolation.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(root ^ mix64(h));
}

/// Seeded random stream. Wraps std::mt19937_64 (whose output sequence the
/// standard pins down exactly) and keeps all derived draws in-house so runs
/// are reproducible bit-for-bit from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); safe under log/log-log transforms.
  double u01_open() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + u01() * (hi - lo); }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u = u01_open();
    const double v = u01_open();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double a = 6.283185307179586476925286766559 * v;  // 2*pi*v
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t bounded(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return r % n;
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// First k entries of a random permutation of {0,..,n-1}, draw order fixed.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(bounded(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace elimrank
