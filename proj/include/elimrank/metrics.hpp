#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "elimrank/common.hpp"

namespace elimrank {

/// Gain of a relevance grade: 2^r - 1.
inline double grade_gain(int r) {
  return static_cast<double>((1 << r) - 1);
}

/// NDCG@T over relevance grades listed in predicted rank order. The ideal
/// normalizer is the grade-descending ordering truncated at the same T.
/// Queries with no relevant item (all grades zero) score 0.
inline double ndcg_at(std::span<const int> ranked_relevances, std::size_t t) {
  if (t < 1) throw ValidationError("ndcg_at: T must be >= 1");
  const std::size_t n = ranked_relevances.size();
  const std::size_t top = std::min(t, n);

  double dcg = 0.0;
  for (std::size_t i = 0; i < top; ++i)
    dcg += grade_gain(ranked_relevances[i]) /
           std::log2(static_cast<double>(i + 2));

  std::vector<int> ideal(ranked_relevances.begin(), ranked_relevances.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<int>());
  double ideal_dcg = 0.0;
  for (std::size_t i = 0; i < top; ++i)
    ideal_dcg += grade_gain(ideal[i]) / std::log2(static_cast<double>(i + 2));

  if (ideal_dcg == 0.0) return 0.0;
  return dcg / ideal_dcg;
}

/// Expected reciprocal rank under the cascade user model with stop
/// probability R(r) = (2^r - 1) / 16: the user walks down the list and the
/// discount for position i is the probability that no earlier item
/// satisfied them.
inline double err(std::span<const int> ranked_relevances) {
  double not_stopped = 1.0;
  double value = 0.0;
  for (std::size_t i = 0; i < ranked_relevances.size(); ++i) {
    const double r = grade_gain(ranked_relevances[i]) / 16.0;
    value += not_stopped * r / static_cast<double>(i + 1);
    not_stopped *= 1.0 - r;
  }
  return value;
}

// ---------------------------------------------------------------------------
// Metric specs and reports
// ---------------------------------------------------------------------------

struct MetricSpec {
  enum class Kind { kNdcg, kErr };
  Kind kind = Kind::kErr;
  std::size_t t = 1;  // cutoff, NDCG only

  std::string name() const {
    return kind == Kind::kErr ? std::string("err")
                              : "ndcg@" + std::to_string(t);
  }

  double evaluate(std::span<const int> ranked_relevances) const {
    return kind == Kind::kErr ? err(ranked_relevances)
                              : ndcg_at(ranked_relevances, t);
  }
};

/// Parse "ndcg@5" or "err".
inline MetricSpec parse_metric(const std::string& text) {
  if (text == "err") return MetricSpec{MetricSpec::Kind::kErr, 0};
  if (text.rfind("ndcg@", 0) == 0) {
    const std::string num = text.substr(5);
    try {
      const long t = std::stol(num);
      if (t >= 1) return MetricSpec{MetricSpec::Kind::kNdcg,
                                    static_cast<std::size_t>(t)};
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("unknown metric '" + text +
                        "' (expected err or ndcg@<T>)");
}

/// Parse a comma-separated metric list, e.g. "ndcg@1,ndcg@5,err".
inline std::vector<MetricSpec> parse_metric_list(const std::string& text) {
  std::vector<MetricSpec> specs;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ','))
    if (!token.empty()) specs.push_back(parse_metric(token));
  if (specs.empty()) throw ValidationError("empty metric list");
  return specs;
}

/// Averaged metric values plus the per-query breakdown, in corpus order.
struct MetricReport {
  std::vector<std::string> metric_names;
  std::map<std::string, double> averages;
  std::vector<std::pair<std::string, std::map<std::string, double>>>
      per_query;

  /// Human-readable fixed table.
  std::string to_table() const {
    std::ostringstream os;
    os << "metric\tmean\n";
    for (const auto& name : metric_names)
      os << name << '\t' << fmt_g17(averages.at(name)) << '\n';
    return os.str();
  }

  /// Machine-readable key-value lines: `mean.<metric> <value>` then
  /// `query.<qid>.<metric> <value>`.
  std::string to_kv() const {
    std::ostringstream os;
    for (const auto& name : metric_names)
      os << "mean." << name << ' ' << fmt_g17(averages.at(name)) << '\n';
    for (const auto& [qid, values] : per_query)
      for (const auto& name : metric_names)
        os << "query." << qid << '.' << name << ' '
           << fmt_g17(values.at(name)) << '\n';
    return os.str();
  }
};

}  // namespace elimrank
