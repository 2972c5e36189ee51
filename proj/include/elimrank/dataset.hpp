#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "elimrank/common.hpp"
#include "elimrank/rng.hpp"

namespace elimrank {

using FeatureVector = std::vector<double>;

constexpr int kMinGrade = 0;
constexpr int kMaxGrade = 4;

struct Item {
  FeatureVector features;
  int relevance = 0;

  friend bool operator==(const Item&, const Item&) = default;
};

/// All items answering one query; the unit of batching and of metric
/// computation. Item order is the file order.
struct QueryGroup {
  std::string query_id;
  std::vector<Item> items;

  friend bool operator==(const QueryGroup&, const QueryGroup&) = default;
};

/// Per-feature z-score statistics fitted on a training corpus.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t dim() const { return mean.size(); }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct Corpus {
  std::vector<QueryGroup> groups;
  std::size_t feature_dim = 0;
  std::optional<NormStats> norm_stats;  // present once normalized

  std::size_t num_items() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.items.size();
    return n;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct SyntheticSpec {
  std::size_t num_queries = 0;
  std::size_t items_per_query = 1;
  std::size_t feature_dim = 1;
  std::vector<double> true_weights;  // length feature_dim
  double noise_std = 0.0;
  std::uint64_t rng_seed = 0;
};

// ---------------------------------------------------------------------------
// LETOR / svmlight text format
//
//   <grade> qid:<id> <fid>:<val> ... # optional comment
//
// Feature ids are 1-based and strictly increasing within a line; absent ids
// are 0.0. Lines of one query must be contiguous.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool parse_int(std::string_view tok, long& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool parse_double(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

/// Parse a LETOR stream. When declared_dim is 0 the feature dimension is
/// inferred as the maximum feature id seen; otherwise any id above
/// declared_dim is rejected.
inline Corpus parse_letor(std::istream& in, std::size_t declared_dim = 0) {
  Corpus corpus;
  std::unordered_set<std::string> closed_qids;
  std::string current_qid;
  bool in_group = false;

  // Sparse rows are collected first; vectors are densified once p is known.
  struct Row {
    std::vector<std::pair<std::size_t, double>> feats;  // (0-based id, value)
    int grade = 0;
    std::size_t group = 0;
  };
  std::vector<Row> rows;
  std::size_t max_fid = 0;

  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line(raw);
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    std::size_t pos = 0;
    auto next_token = [&]() -> std::string_view {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t'))
        ++pos;
      const std::size_t start = pos;
      while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
      return line.substr(start, pos - start);
    };

    const std::string_view grade_tok = next_token();
    long grade = 0;
    if (!detail::parse_int(grade_tok, grade))
      throw ParseError("expected integer relevance grade, got '" +
                           std::string(grade_tok) + "'",
                       lineno);
    if (grade < kMinGrade || grade > kMaxGrade)
      throw ValidationError("line " + std::to_string(lineno) +
                            ": relevance grade " + std::to_string(grade) +
                            " outside {0..4}");

    const std::string_view qid_tok = next_token();
    if (qid_tok.substr(0, 4) != "qid:" || qid_tok.size() == 4)
      throw ParseError("expected qid:<id>, got '" + std::string(qid_tok) + "'",
                       lineno);
    const std::string qid(qid_tok.substr(4));

    if (!in_group || qid != current_qid) {
      if (closed_qids.count(qid))
        throw ValidationError("line " + std::to_string(lineno) +
                              ": non-contiguous qid blocks for qid " + qid);
      if (in_group) closed_qids.insert(current_qid);
      corpus.groups.push_back(QueryGroup{qid, {}});
      current_qid = qid;
      in_group = true;
    }

    Row row;
    row.grade = static_cast<int>(grade);
    row.group = corpus.groups.size() - 1;
    std::size_t prev_fid = 0;
    for (std::string_view tok = next_token(); !tok.empty();
         tok = next_token()) {
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError("expected <fid>:<val>, got '" + std::string(tok) +
                             "'",
                         lineno);
      long fid = 0;
      double val = 0.0;
      if (!detail::parse_int(tok.substr(0, colon), fid) || fid < 1)
        throw ParseError("bad feature id in '" + std::string(tok) + "'",
                         lineno);
      if (!detail::parse_double(tok.substr(colon + 1), val))
        throw ParseError("bad feature value in '" + std::string(tok) + "'",
                         lineno);
      if (!std::isfinite(val))
        throw ValidationError("line " + std::to_string(lineno) +
                              ": non-finite feature value");
      if (static_cast<std::size_t>(fid) <= prev_fid)
        throw ParseError("feature ids must be strictly increasing", lineno);
      if (declared_dim && static_cast<std::size_t>(fid) > declared_dim)
        throw ValidationError("line " + std::to_string(lineno) +
                              ": feature id " + std::to_string(fid) +
                              " exceeds declared dimension " +
                              std::to_string(declared_dim));
      prev_fid = static_cast<std::size_t>(fid);
      row.feats.emplace_back(static_cast<std::size_t>(fid) - 1, val);
    }
    max_fid = std::max(max_fid, prev_fid);
    rows.push_back(std::move(row));
  }

  corpus.feature_dim = declared_dim ? declared_dim : max_fid;
  for (auto& row : rows) {
    Item item;
    item.relevance = row.grade;
    item.features.assign(corpus.feature_dim, 0.0);
    for (const auto& [idx, val] : row.feats) item.features[idx] = val;
    corpus.groups[row.group].items.push_back(std::move(item));
  }
  return corpus;
}

inline Corpus parse_letor_file(const std::string& path,
                               std::size_t declared_dim = 0) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open input file: " + path);
  return parse_letor(in, declared_dim);
}

/// Emit LETOR text: ascending feature ids, zero values omitted, 17
/// significant digit floats. parse_letor(serialize_letor(c)) == c whenever
/// the last feature is nonzero somewhere in the corpus.
inline void serialize_letor(const Corpus& corpus, std::ostream& out) {
  for (const auto& g : corpus.groups) {
    for (const auto& item : g.items) {
      out << item.relevance << " qid:" << g.query_id;
      for (std::size_t j = 0; j < item.features.size(); ++j) {
        if (item.features[j] == 0.0) continue;
        out << ' ' << (j + 1) << ':' << fmt_g17(item.features[j]);
      }
      out << '\n';
    }
  }
}

inline std::string serialize_letor(const Corpus& corpus) {
  std::ostringstream os;
  serialize_letor(corpus, os);
  return os.str();
}

// ---------------------------------------------------------------------------
// z-score normalization
// ---------------------------------------------------------------------------

/// Population std floor: constant features normalize to exactly zero instead
/// of dividing by zero.
constexpr double kStdFloor = 1e-8;

/// Per-feature mean and population standard deviation over every item of
/// every group. Fit on the training corpus only; test corpora reuse the
/// training stats.
inline NormStats fit_normalization(const Corpus& corpus) {
  if (corpus.groups.empty())
    throw ValidationError("fit_normalization: empty corpus");
  const std::size_t p = corpus.feature_dim;
  NormStats stats;
  stats.mean.assign(p, 0.0);
  stats.stddev.assign(p, 0.0);

  std::size_t n = 0;
  for (const auto& g : corpus.groups)
    for (const auto& item : g.items) {
      ++n;
      for (std::size_t j = 0; j < p; ++j) stats.mean[j] += item.features[j];
    }
  for (std::size_t j = 0; j < p; ++j) stats.mean[j] /= static_cast<double>(n);

  for (const auto& g : corpus.groups)
    for (const auto& item : g.items)
      for (std::size_t j = 0; j < p; ++j) {
        const double d = item.features[j] - stats.mean[j];
        stats.stddev[j] += d * d;
      }
  for (std::size_t j = 0; j < p; ++j) {
    stats.stddev[j] = std::sqrt(stats.stddev[j] / static_cast<double>(n));
    if (stats.stddev[j] < kStdFloor) stats.stddev[j] = kStdFloor;
  }
  return stats;
}

inline Corpus apply_normalization(const Corpus& corpus,
                                  const NormStats& stats) {
  if (stats.dim() != corpus.feature_dim)
    throw ValidationError(
        "apply_normalization: stats dimension " + std::to_string(stats.dim()) +
        " != corpus dimension " + std::to_string(corpus.feature_dim));
  Corpus out = corpus;
  for (auto& g : out.groups)
    for (auto& item : g.items)
      for (std::size_t j = 0; j < out.feature_dim; ++j)
        item.features[j] =
            (item.features[j] - stats.mean[j]) / stats.stddev[j];
  out.norm_stats = stats;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora with known ground truth
// ---------------------------------------------------------------------------

/// Features are i.i.d. standard normal; the latent score is
/// <true_weights, x> plus Gaussian noise; grades are per-query quantile
/// buckets of the latent score, so every query mixes grades. Deterministic
/// given the seed.
inline Corpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.items_per_query < 1)
    throw ValidationError("generate_synthetic: items_per_query must be >= 1");
  if (spec.feature_dim < 1)
    throw ValidationError("generate_synthetic: feature_dim must be >= 1");
  if (spec.true_weights.size() != spec.feature_dim)
    throw ValidationError("generate_synthetic: true_weights length mismatch");
  if (spec.noise_std < 0)
    throw ValidationError("generate_synthetic: noise_std must be >= 0");

  Rng rng(derive_seed(spec.rng_seed, "synthetic"));
  Corpus corpus;
  corpus.feature_dim = spec.feature_dim;
  corpus.groups.reserve(spec.num_queries);

  const std::size_t n = spec.items_per_query;
  std::vector<double> latent(n);
  std::vector<std::size_t> order(n);
  for (std::size_t q = 0; q < spec.num_queries; ++q) {
    QueryGroup group;
    group.query_id = std::to_string(q + 1);
    group.items.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& item = group.items[i];
      item.features.resize(spec.feature_dim);
      for (std::size_t j = 0; j < spec.feature_dim; ++j)
        item.features[j] = rng.normal();
      latent[i] = dot(item.features, spec.true_weights);
      if (spec.noise_std > 0) latent[i] += spec.noise_std * rng.normal();
    }
    // Quantile bucketing: sorted ascending by latent score, position j of n
    // maps to grade floor(j*5/n).
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return latent[a] < latent[b];
                     });
    for (std::size_t j = 0; j < n; ++j)
      group.items[order[j]].relevance = static_cast<int>(j * 5 / n);
    corpus.groups.push_back(std::move(group));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// NormStats sidecar file (text; used by the CLI to carry training stats)
// ---------------------------------------------------------------------------

inline void write_norm_stats(const NormStats& stats, std::ostream& out) {
  out << stats.dim() << '\n';
  for (std::size_t j = 0; j < stats.dim(); ++j)
    out << fmt_g17(stats.mean[j]) << '\t' << fmt_g17(stats.stddev[j]) << '\n';
}

inline NormStats read_norm_stats(std::istream& in) {
  std::size_t p = 0;
  if (!(in >> p)) throw ParseError("stats file: missing feature count");
  NormStats stats;
  stats.mean.resize(p);
  stats.stddev.resize(p);
  for (std::size_t j = 0; j < p; ++j)
    if (!(in >> stats.mean[j] >> stats.stddev[j]))
      throw ParseError("stats file: truncated at feature " +
                       std::to_string(j + 1));
  return stats;
}

}  // namespace elimrank
