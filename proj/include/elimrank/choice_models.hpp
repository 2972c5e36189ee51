#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "elimrank/common.hpp"

namespace elimrank {

/// A ranking: order[i] is the index of the item placed at rank i
/// (rank 0 = best).
struct Permutation {
  std::vector<std::size_t> order;

  std::size_t size() const { return order.size(); }

  bool is_valid() const {
    std::vector<bool> seen(order.size(), false);
    for (std::size_t v : order) {
      if (v >= order.size() || seen[v]) return false;
      seen[v] = true;
    }
    return true;
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;
};

/// Scalar listwise loss plus the per-rank functional gradient d loss / d f_k.
/// Both losses are shift invariant, so the gradient entries sum to zero.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

enum class ChoiceModel {
  kPlackettLuce,  // forward selection: best item chosen first, prob ~ exp(f)
  kElimination,   // backward elimination: worst removed first, prob ~ exp(-f)
};

// ---------------------------------------------------------------------------
// Plackett-Luce (forward selection) loss
//
//   loss(f) = sum_{i=1}^{N-1} [ -f_i + log sum_{j=i}^{N} exp(f_j) ]
//
// with f aligned to rank positions (f_1 = top item). One O(N) backward sweep
// builds the suffix log-sum-exp values, one O(N) forward sweep accumulates
// the gradient. Everything stays in the log domain, so the result is stable
// for any score magnitude.
// ---------------------------------------------------------------------------

inline LossGrad pl_loss_grad(std::span<const double> scores) {
  const std::size_t n = scores.size();
  LossGrad out;
  out.grad.assign(n, 0.0);
  if (n <= 1) return out;

  // suffix[i] = log sum_{j >= i} exp(f_j), built with a running-max rescale
  std::vector<double> suffix(n);
  suffix[n - 1] = scores[n - 1];
  for (std::size_t i = n - 1; i-- > 0;)
    suffix[i] = logaddexp(suffix[i + 1], scores[i]);

  double loss = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) loss += suffix[i] - scores[i];
  out.loss = loss;

  // grad[k] = -[k < N-1] + exp(f_k) * sum_{i <= min(k, N-2)} exp(-suffix[i]);
  // the cumulative sum is kept as a log so the products cannot overflow.
  double log_cum = kNegInf;
  for (std::size_t k = 0; k < n; ++k) {
    if (k + 1 < n) {
      log_cum = logaddexp(log_cum, -suffix[k]);
      out.grad[k] = -1.0 + std::exp(scores[k] + log_cum);
    } else {
      out.grad[k] = std::exp(scores[k] + log_cum);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Choice-by-elimination (reverse sequential choice) loss
//
//   loss(f) = sum_{i=1}^{N} [ f_i + log Z_i ],   Z_i = sum_{j<=i} exp(-f_j)
//
// The i = 1 term vanishes identically. The gradient is
//
//   grad[k] = 1 - exp(-f_k) * sum_{i>=k} 1/Z_i
//
// (the partition value Z_i contains exp(-f_k) exactly when i >= k, hence the
// suffix sum). One forward pass builds log Z, one backward pass accumulates
// the suffix of 1/Z in the log domain: O(N) total.
// ---------------------------------------------------------------------------

inline LossGrad elim_loss_grad(std::span<const double> scores) {
  const std::size_t n = scores.size();
  LossGrad out;
  out.grad.assign(n, 0.0);
  if (n == 0) return out;

  std::vector<double> log_z(n);
  log_z[0] = -scores[0];
  double loss = 0.0;  // first term is exactly zero
  for (std::size_t i = 1; i < n; ++i) {
    log_z[i] = logaddexp(log_z[i - 1], -scores[i]);
    loss += scores[i] + log_z[i];
  }
  out.loss = loss;

  double log_suffix = kNegInf;  // log sum_{i >= k} 1/Z_i
  for (std::size_t k = n; k-- > 0;) {
    log_suffix = logaddexp(log_suffix, -log_z[k]);
    out.grad[k] = 1.0 - std::exp(-scores[k] + log_suffix);
  }
  return out;
}

inline LossGrad loss_grad(ChoiceModel model, std::span<const double> scores) {
  return model == ChoiceModel::kPlackettLuce ? pl_loss_grad(scores)
                                             : elim_loss_grad(scores);
}

/// Probability that the item at eliminate_index is the one eliminated from
/// the remaining set: exp(-f_e) / sum_j exp(-f_j).
inline double elim_choice_prob(std::span<const double> scores_of_remaining,
                               std::size_t eliminate_index) {
  if (scores_of_remaining.empty())
    throw ValidationError("elim_choice_prob: empty remaining set");
  if (eliminate_index >= scores_of_remaining.size())
    throw ValidationError("elim_choice_prob: eliminate_index out of range");
  double m = kNegInf;
  for (double f : scores_of_remaining) m = std::max(m, -f);
  double denom = 0.0;
  for (double f : scores_of_remaining) denom += std::exp(-f - m);
  return std::exp(-scores_of_remaining[eliminate_index] - m) / denom;
}

// ---------------------------------------------------------------------------
// Exact permutation probabilities (small-N oracles)
// ---------------------------------------------------------------------------

/// log P(pi) as the literal sum of stage-wise log conditionals, each stage
/// normalized independently. Deliberately not routed through the O(N)
/// recurrences above: this is the second leg of the loss/probability
/// cross-check.
inline double permutation_log_prob(ChoiceModel model,
                                   std::span<const double> scores) {
  const std::size_t n = scores.size();
  double lp = 0.0;
  if (model == ChoiceModel::kPlackettLuce) {
    // stage i selects rank i from the suffix {i..n-1}, prob ~ exp(f)
    for (std::size_t i = 0; i < n; ++i) {
      double m = kNegInf;
      for (std::size_t j = i; j < n; ++j) m = std::max(m, scores[j]);
      double denom = 0.0;
      for (std::size_t j = i; j < n; ++j) denom += std::exp(scores[j] - m);
      lp += scores[i] - m - std::log(denom);
    }
  } else {
    // stage i eliminates rank i from the prefix {0..i}, prob ~ exp(-f)
    for (std::size_t i = 0; i < n; ++i) {
      double m = kNegInf;
      for (std::size_t j = 0; j <= i; ++j) m = std::max(m, -scores[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j <= i; ++j) denom += std::exp(-scores[j] - m);
      lp += -scores[i] - m - std::log(denom);
    }
  }
  return lp;
}

constexpr std::size_t kMaxEnumerationItems = 8;

/// Full distribution over all N! orderings of N items. scores[k] is the
/// score of item k (not rank-aligned); keys are rankings item-at-rank-i.
inline std::map<std::vector<std::size_t>, double> enumerate_permutation_dist(
    ChoiceModel model, std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n > kMaxEnumerationItems)
    throw ValidationError("enumerate_permutation_dist: N > 8");
  std::map<std::vector<std::size_t>, double> dist;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::vector<double> aligned(n);
  do {
    for (std::size_t i = 0; i < n; ++i) aligned[i] = scores[perm[i]];
    dist[perm] = std::exp(permutation_log_prob(model, aligned));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return dist;
}

/// Literal O(N^2) evaluation of the elimination loss; the test oracle for
/// elim_loss_grad. Intended for N up to ~1000.
inline double naive_elim_loss(std::span<const double> scores) {
  const std::size_t n = scores.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = kNegInf;
    for (std::size_t j = 0; j <= i; ++j) m = std::max(m, -scores[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) z += std::exp(-scores[j] - m);
    loss += scores[i] + m + std::log(z);
  }
  return loss;
}

}  // namespace elimrank
