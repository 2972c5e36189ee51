#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "elimrank/choice_models.hpp"
#include "elimrank/common.hpp"
#include "elimrank/rng.hpp"

namespace elimrank {

/// Gompertz distribution: CDF F(u) = 1 - exp(-eta (e^{b u} - 1)) on u >= 0,
/// scale b > 0, shape eta > 0.
struct GompertzParams {
  double b = 1.0;
  double eta = 1.0;

  void validate() const {
    if (b <= 0.0 || eta <= 0.0)
      throw ValidationError("GompertzParams: b and eta must be > 0");
  }
};

/// Inverse CDF at U in [0,1): u = (1/b) ln(1 - ln(1-U)/eta). Maps 0 to 0.
inline double gompertz_quantile(double u01, const GompertzParams& params) {
  return std::log1p(-std::log1p(-u01) / params.eta) / params.b;
}

inline double gompertz_cdf(double u, const GompertzParams& params) {
  return -std::expm1(-params.eta * std::expm1(params.b * u));
}

inline double sample_gompertz(const GompertzParams& params, Rng& rng) {
  params.validate();
  return gompertz_quantile(rng.u01(), params);
}

/// Gumbel(location, scale 1) via u = loc - ln(-ln U), U in (0,1).
inline double sample_gumbel(double location, Rng& rng) {
  return location - std::log(-std::log(rng.u01_open()));
}

// ---------------------------------------------------------------------------
// Monte Carlo agreement reports
// ---------------------------------------------------------------------------

/// One checked outcome: empirical frequency against its analytic
/// probability, with the binomial standard error at the sample count.
struct McEntry {
  std::string label;
  double freq = 0.0;
  double prob = 0.0;
  double se = 0.0;
  bool pass = false;
};

struct McReport {
  std::string title;
  std::size_t samples = 0;
  double sigma_band = 4.0;
  std::vector<McEntry> entries;
  bool passed = true;

  std::string to_table() const {
    std::ostringstream os;
    os << "# " << title << " (" << samples << " samples, " << sigma_band
       << " sigma bands)\n";
    os << "outcome\tfreq\tprob\tstderr\tstatus\n";
    for (const auto& e : entries)
      os << e.label << '\t' << fmt_g17(e.freq) << '\t' << fmt_g17(e.prob)
         << '\t' << fmt_g17(e.se) << '\t' << (e.pass ? "ok" : "FAIL") << '\n';
    return os.str();
  }
};

namespace detail {

inline McReport make_report(std::string title, std::size_t samples,
                            double sigma,
                            const std::vector<std::string>& labels,
                            const std::vector<double>& counts,
                            const std::vector<double>& probs) {
  McReport report;
  report.title = std::move(title);
  report.samples = samples;
  report.sigma_band = sigma;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    McEntry e;
    e.label = labels[i];
    e.freq = counts[i] / static_cast<double>(samples);
    e.prob = probs[i];
    e.se = std::sqrt(probs[i] * (1.0 - probs[i]) /
                     static_cast<double>(samples));
    e.pass = std::abs(e.freq - e.prob) < sigma * e.se;
    report.entries.push_back(std::move(e));
    report.passed = report.passed && report.entries.back().pass;
  }
  return report;
}

inline std::vector<double> softmax_of(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  std::vector<double> p(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += p[i] = std::exp(v[i] - m);
  for (double& x : p) x /= z;
  return p;
}

}  // namespace detail

/// Draw per-item Gompertz utilities with shape eta_j = exp(-f_j) and shared
/// scale b; the first eliminated item is the argmin utility. Marginalizing
/// the utilities analytically gives elimination probabilities
/// exp(-f_i)/sum_j exp(-f_j), independent of b, and that is what the
/// frequencies are checked against.
inline McReport mc_elimination_check(std::span<const double> scores,
                                     std::size_t samples, double b, Rng& rng,
                                     double sigma_band = 4.0) {
  const std::size_t n = scores.size();
  if (n < 2) throw ValidationError("mc_elimination_check: need N >= 2");
  if (samples < 10000)
    throw ValidationError("mc_elimination_check: need >= 1e4 samples");

  std::vector<GompertzParams> params(n);
  for (std::size_t j = 0; j < n; ++j)
    params[j] = GompertzParams{b, std::exp(-scores[j])};
  for (const auto& p : params) p.validate();

  std::vector<double> counts(n, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t argmin = 0;
    double best = gompertz_quantile(rng.u01(), params[0]);
    for (std::size_t j = 1; j < n; ++j) {
      const double u = gompertz_quantile(rng.u01(), params[j]);
      if (u < best) {  // ties keep the lower index
        best = u;
        argmin = j;
      }
    }
    counts[argmin] += 1.0;
  }

  std::vector<double> neg(n);
  for (std::size_t j = 0; j < n; ++j) neg[j] = -scores[j];
  const std::vector<double> probs = detail::softmax_of(neg);
  std::vector<std::string> labels(n);
  for (std::size_t j = 0; j < n; ++j)
    labels[j] = "item " + std::to_string(j) + " eliminated";
  return detail::make_report(
      "gompertz elimination, b = " + fmt_g17(b), samples, sigma_band, labels,
      counts, probs);
}

/// Draw Gumbel(f_j, 1) utilities; the chosen item is the argmax. Frequencies
/// are checked against softmax(f).
inline McReport mc_gumbel_pl_check(std::span<const double> scores,
                                   std::size_t samples, Rng& rng,
                                   double sigma_band = 4.0) {
  const std::size_t n = scores.size();
  if (n < 2) throw ValidationError("mc_gumbel_pl_check: need N >= 2");
  if (samples < 10000)
    throw ValidationError("mc_gumbel_pl_check: need >= 1e4 samples");

  std::vector<double> counts(n, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t argmax = 0;
    double best = sample_gumbel(scores[0], rng);
    for (std::size_t j = 1; j < n; ++j) {
      const double u = sample_gumbel(scores[j], rng);
      if (u > best) {
        best = u;
        argmax = j;
      }
    }
    counts[argmax] += 1.0;
  }

  const std::vector<double> probs = detail::softmax_of(scores);
  std::vector<std::string> labels(n);
  for (std::size_t j = 0; j < n; ++j)
    labels[j] = "item " + std::to_string(j) + " chosen";
  return detail::make_report("gumbel top choice", samples, sigma_band, labels,
                             counts, probs);
}

/// Sort full Gumbel utility draws into complete orderings and compare the
/// empirical distribution over all N! rankings with the sequential-choice
/// enumeration. N <= 6.
inline McReport mc_gumbel_ordering_check(std::span<const double> scores,
                                         std::size_t samples, Rng& rng,
                                         double sigma_band = 4.0) {
  const std::size_t n = scores.size();
  if (n < 2 || n > 6)
    throw ValidationError("mc_gumbel_ordering_check: need 2 <= N <= 6");
  if (samples < 10000)
    throw ValidationError("mc_gumbel_ordering_check: need >= 1e4 samples");

  const auto dist =
      enumerate_permutation_dist(ChoiceModel::kPlackettLuce, scores);
  std::map<std::vector<std::size_t>, double> counts;
  for (const auto& [perm, _] : dist) counts[perm] = 0.0;

  std::vector<double> u(n);
  std::vector<std::size_t> order(n);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < n; ++j) u[j] = sample_gumbel(scores[j], rng);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
    counts[order] += 1.0;
  }

  std::vector<std::string> labels;
  std::vector<double> cnt, probs;
  for (const auto& [perm, prob] : dist) {
    std::string label = "(";
    for (std::size_t i = 0; i < perm.size(); ++i)
      label += (i ? "," : "") + std::to_string(perm[i]);
    label += ")";
    labels.push_back(std::move(label));
    cnt.push_back(counts[perm]);
    probs.push_back(prob);
  }
  return detail::make_report("gumbel full ordering vs sequential choice",
                             samples, sigma_band, labels, cnt, probs);
}

}  // namespace elimrank
