#pragma once

// Shared test oracles: central finite differences, floored relative error,
// Kendall tau, and small corpus builders. Everything here is independent of
// the library code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "elimrank/dataset.hpp"
#include "elimrank/rng.hpp"

namespace testsupport {

/// |a - b| <= atol + rtol * max(|a|, |b|). With atol = rtol * floor this is
/// relative error with an absolute floor, the usual gradient-check metric.
inline bool close(double a, double b, double rtol, double atol) {
  return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

/// Central finite difference of f at x along coordinate k.
template <class F>
double central_diff(F&& f, std::vector<double>& x, std::size_t k,
                    double h = 1e-5) {
  const double saved = x[k];
  x[k] = saved + h;
  const double up = f();
  x[k] = saved - h;
  const double down = f();
  x[k] = saved;
  return (up - down) / (2.0 * h);
}

/// Kendall rank correlation between the orderings induced by two score
/// vectors; tied pairs contribute zero.
inline double kendall_tau(std::span<const double> a,
                          std::span<const double> b) {
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da * db > 0) s += 1.0;
      if (da * db < 0) s -= 1.0;
    }
  return s / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

/// Random score vector in [lo, hi].
inline std::vector<double> random_scores(std::size_t n, elimrank::Rng& rng,
                                         double lo = -5.0, double hi = 5.0) {
  std::vector<double> f(n);
  for (auto& v : f) v = rng.uniform(lo, hi);
  return f;
}

/// Tiny corpus with explicit grades; features are one-hot-ish values so
/// scorers can be crafted by hand.
inline elimrank::Corpus corpus_from_grades(
    const std::vector<std::vector<int>>& grades_per_query,
    std::size_t feature_dim = 2) {
  elimrank::Corpus corpus;
  corpus.feature_dim = feature_dim;
  std::size_t qid = 1;
  for (const auto& grades : grades_per_query) {
    elimrank::QueryGroup g;
    g.query_id = std::to_string(qid++);
    for (std::size_t i = 0; i < grades.size(); ++i) {
      elimrank::Item item;
      item.features.assign(feature_dim, 0.0);
      item.features[0] = static_cast<double>(i);
      item.relevance = grades[i];
      g.items.push_back(std::move(item));
    }
    corpus.groups.push_back(std::move(g));
  }
  return corpus;
}

inline elimrank::SyntheticSpec default_synth_spec(std::size_t queries,
                                                  std::size_t items,
                                                  std::size_t dim,
                                                  double noise,
                                                  std::uint64_t seed) {
  elimrank::SyntheticSpec spec;
  spec.num_queries = queries;
  spec.items_per_query = items;
  spec.feature_dim = dim;
  spec.noise_std = noise;
  spec.rng_seed = seed;
  elimrank::Rng wrng(elimrank::derive_seed(seed, "true-weights"));
  spec.true_weights.resize(dim);
  for (auto& w : spec.true_weights) w = wrng.normal();
  return spec;
}

}  // namespace testsupport
