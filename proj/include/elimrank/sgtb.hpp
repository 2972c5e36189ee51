#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "elimrank/choice_models.hpp"
#include "elimrank/common.hpp"
#include "elimrank/dataset.hpp"
#include "elimrank/rng.hpp"
#include "elimrank/training.hpp"

namespace elimrank {

struct SgtbConfig {
  std::size_t num_trees = 300;
  double lr_init = 0.1;
  double row_subsample = 0.5;        // fraction of queries per tree
  double feature_subsample = 1.0 / 3.0;  // fraction of features per node
  std::size_t max_leaves = 512;
  std::size_t min_node_size = 40;    // nodes below this are never split
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (row_subsample <= 0.0 || row_subsample > 1.0 ||
        feature_subsample <= 0.0 || feature_subsample > 1.0)
      throw ValidationError("SgtbConfig: subsample fractions must be (0,1]");
    if (max_leaves < 1 || min_node_size < 1)
      throw ValidationError("SgtbConfig: counts must be >= 1");
    if (lr_init <= 0.0) throw ValidationError("SgtbConfig: lr_init must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Regression tree with randomized split thresholds
// ---------------------------------------------------------------------------

struct TreeNode {
  bool is_leaf = true;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  double value = 0.0;       // leaf prediction (mean target)
  std::int32_t left = -1;   // node indices; -1 for leaves
  std::int32_t right = -1;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const {
    if (nodes.empty()) return 0.0;
    std::size_t at = 0;
    while (!nodes[at].is_leaf) {
      const TreeNode& n = nodes[at];
      if (n.feature >= x.size())
        throw ValidationError("tree predict: feature index out of range");
      at = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left
                                                                : n.right);
    }
    return nodes[at].value;
  }

  std::size_t leaf_count() const {
    std::size_t c = 0;
    for (const auto& n : nodes) c += n.is_leaf;
    return c;
  }
};

struct SgtbRow {
  const double* x = nullptr;  // feature_dim values
  double target = 0.0;
};

namespace detail {

struct SplitCandidate {
  std::size_t node = 0;       // index into the growth node table
  std::size_t seq = 0;        // creation order, the deterministic tie-break
  double reduction = 0.0;     // parent SSE minus child SSE
  std::uint32_t feature = 0;
  double threshold = 0.0;
};

struct CandidateOrder {
  bool operator()(const SplitCandidate& a, const SplitCandidate& b) const {
    if (a.reduction != b.reduction) return a.reduction < b.reduction;
    return a.seq > b.seq;  // earlier-created node wins ties
  }
};

struct GrowthNode {
  std::vector<std::size_t> rows;
  double sum = 0.0;
  double sse = 0.0;
};

inline void node_stats(const std::vector<SgtbRow>& rows,
                       const std::vector<std::size_t>& idx, double& sum,
                       double& sse) {
  sum = 0.0;
  for (std::size_t i : idx) sum += rows[i].target;
  const double mean = sum / static_cast<double>(idx.size());
  sse = 0.0;
  for (std::size_t i : idx) {
    const double d = rows[i].target - mean;
    sse += d * d;
  }
}

}  // namespace detail

/// Grow one regression tree. At every candidate node a random subset of
/// ceil(p * feature_subsample) features is drawn; each sampled feature gets
/// ONE uniformly random threshold between its min and max inside the node,
/// and the (feature, threshold) pair with the largest variance reduction
/// wins. Growth is best-first by variance reduction (ties by node creation
/// order) until the leaf budget or the node-size floor stops it.
inline RegressionTree grow_tree(const std::vector<SgtbRow>& rows,
                                std::size_t feature_dim,
                                const SgtbConfig& cfg, Rng& rng) {
  if (rows.empty()) throw ValidationError("grow_tree: no rows");
  const std::size_t n_features_sampled = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(static_cast<double>(feature_dim) *
                       cfg.feature_subsample)));

  std::vector<detail::GrowthNode> table;
  std::priority_queue<detail::SplitCandidate,
                      std::vector<detail::SplitCandidate>,
                      detail::CandidateOrder>
      heap;
  std::size_t seq_counter = 0;

  // Evaluate the best split of a growth node; returns false for a forced
  // leaf (too small, constant in the sampled features, or no reduction).
  auto propose = [&](std::size_t node_id) -> bool {
    detail::GrowthNode& node = table[node_id];
    if (node.rows.size() < cfg.min_node_size) return false;

    const auto feats =
        rng.sample_without_replacement(feature_dim, n_features_sampled);
    detail::SplitCandidate best;
    best.node = node_id;
    best.seq = seq_counter++;
    best.reduction = 0.0;
    bool found = false;

    for (std::size_t f : feats) {
      double lo = rows[node.rows.front()].x[f];
      double hi = lo;
      for (std::size_t i : node.rows) {
        lo = std::min(lo, rows[i].x[f]);
        hi = std::max(hi, rows[i].x[f]);
      }
      if (!(hi > lo)) continue;  // constant in this node
      const double thr = lo + rng.u01() * (hi - lo);

      double sum_l = 0.0, sq_l = 0.0;
      std::size_t n_l = 0;
      double sum_r = 0.0, sq_r = 0.0;
      std::size_t n_r = 0;
      for (std::size_t i : node.rows) {
        const double t = rows[i].target;
        if (rows[i].x[f] <= thr) {
          sum_l += t;
          sq_l += t * t;
          ++n_l;
        } else {
          sum_r += t;
          sq_r += t * t;
          ++n_r;
        }
      }
      // thr lies in [lo, hi), so both sides are nonempty
      const double sse_l = sq_l - sum_l * sum_l / static_cast<double>(n_l);
      const double sse_r = sq_r - sum_r * sum_r / static_cast<double>(n_r);
      const double reduction = node.sse - sse_l - sse_r;
      if (reduction > best.reduction) {
        best.reduction = reduction;
        best.feature = static_cast<std::uint32_t>(f);
        best.threshold = thr;
        found = true;
      }
    }
    if (!found) return false;
    heap.push(best);
    return true;
  };

  table.emplace_back();
  table[0].rows.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) table[0].rows[i] = i;
  detail::node_stats(rows, table[0].rows, table[0].sum, table[0].sse);
  propose(0);

  struct SplitInfo {
    std::size_t left = 0, right = 0;
    std::uint32_t feature = 0;
    double threshold = 0.0;
    bool split = false;
  };
  std::vector<SplitInfo> info(1);

  std::size_t leaves = 1;
  while (!heap.empty() && leaves < cfg.max_leaves) {
    const detail::SplitCandidate cand = heap.top();
    heap.pop();

    const std::size_t li = table.size();
    const std::size_t ri = li + 1;
    table.emplace_back();
    table.emplace_back();
    info.resize(table.size());
    for (std::size_t i : table[cand.node].rows) {
      if (rows[i].x[cand.feature] <= cand.threshold)
        table[li].rows.push_back(i);
      else
        table[ri].rows.push_back(i);
    }
    detail::node_stats(rows, table[li].rows, table[li].sum, table[li].sse);
    detail::node_stats(rows, table[ri].rows, table[ri].sum, table[ri].sse);

    info[cand.node] = {li, ri, cand.feature, cand.threshold, true};
    ++leaves;

    if (leaves < cfg.max_leaves) {
      propose(li);
      propose(ri);
    }
  }

  // Emit the finished tree with nodes in preorder.
  RegressionTree tree;
  // (growth node, slot) where slot encodes 2*emitted_parent + is_right, -1
  // for the root
  std::vector<std::pair<std::size_t, std::int64_t>> todo;
  todo.emplace_back(0, -1);
  while (!todo.empty()) {
    const auto [node_id, slot] = todo.back();
    todo.pop_back();
    const std::int32_t out = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (slot >= 0) {
      TreeNode& parent = tree.nodes[static_cast<std::size_t>(slot / 2)];
      (slot % 2 == 0 ? parent.left : parent.right) = out;
    }
    TreeNode& tn = tree.nodes.back();
    if (info[node_id].split) {
      tn.is_leaf = false;
      tn.feature = info[node_id].feature;
      tn.threshold = info[node_id].threshold;
      // right pushed first so the left subtree is emitted first
      todo.emplace_back(info[node_id].right, std::int64_t(out) * 2 + 1);
      todo.emplace_back(info[node_id].left, std::int64_t(out) * 2 + 0);
    } else {
      tn.is_leaf = true;
      tn.value =
          table[node_id].sum / static_cast<double>(table[node_id].rows.size());
    }
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Boosted ensemble
// ---------------------------------------------------------------------------

struct Ensemble {
  struct Entry {
    RegressionTree tree;
    double lr = 0.0;
  };
  std::vector<Entry> trees;

  double predict(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& e : trees) s += e.lr * e.tree.predict(x);
    return s;
  }
};

inline double predict_ensemble(const Ensemble& ensemble,
                               std::span<const double> x) {
  return ensemble.predict(x);
}

/// One boosting iteration's bookkeeping, kept for tests and diagnostics.
struct SgtbIter {
  double lr = 0.0;      // rate the tree was added with
  double loss = 0.0;    // mean training loss after adding the tree
  std::vector<std::size_t> sampled_queries;
};

struct SgtbTrace {
  double initial_loss = 0.0;  // mean training loss of the zero ensemble
  std::vector<SgtbIter> iters;
};

/// Stochastic gradient tree boosting on the listwise functional gradients.
/// Each iteration fits a tree to the negative gradients of a random query
/// subsample and adds it with the current rate; the rate is halved whenever
/// the full training loss increased relative to the previous iteration.
/// Label-tie permutations are drawn once per fit so the tracked loss refers
/// to a fixed objective.
inline Ensemble fit_sgtb(const Corpus& corpus, ChoiceModel loss_kind,
                         const SgtbConfig& cfg, SgtbTrace* trace = nullptr) {
  cfg.validate();
  if (corpus.groups.empty()) throw ValidationError("fit_sgtb: empty corpus");

  Rng tie_rng(derive_seed(cfg.rng_seed, "sgtb-ties"));
  Rng rng(derive_seed(cfg.rng_seed, "sgtb"));

  const std::size_t nq = corpus.groups.size();
  std::vector<Permutation> pis;
  pis.reserve(nq);
  std::vector<std::size_t> item_offset(nq, 0);
  std::size_t total_items = 0;
  for (std::size_t q = 0; q < nq; ++q) {
    item_offset[q] = total_items;
    total_items += corpus.groups[q].items.size();
    pis.push_back(label_permutation(corpus.groups[q], tie_rng));
  }

  std::vector<double> scores(total_items, 0.0);
  std::vector<double> grads(total_items, 0.0);
  std::vector<double> aligned;

  // Mean per-query loss and per-item functional gradients at the current
  // scores.
  auto eval_state = [&](double& mean_loss) {
    double sum = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& pi = pis[q];
      aligned.resize(pi.size());
      for (std::size_t k = 0; k < pi.size(); ++k)
        aligned[k] = scores[item_offset[q] + pi.order[k]];
      const LossGrad lg = loss_grad(loss_kind, aligned);
      if (!std::isfinite(lg.loss))
        throw NumericalError("fit_sgtb: non-finite loss for query id " +
                             corpus.groups[q].query_id);
      sum += lg.loss;
      for (std::size_t k = 0; k < pi.size(); ++k)
        grads[item_offset[q] + pi.order[k]] = lg.grad[k];
    }
    mean_loss = sum / static_cast<double>(nq);
  };

  Ensemble ensemble;
  double prev_loss = 0.0;
  eval_state(prev_loss);
  if (trace) trace->initial_loss = prev_loss;

  double lr = cfg.lr_init;
  const std::size_t sample_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(static_cast<double>(nq) * cfg.row_subsample)));

  std::vector<SgtbRow> tree_rows;
  for (std::size_t t = 0; t < cfg.num_trees; ++t) {
    auto sampled = rng.sample_without_replacement(nq, sample_count);
    std::sort(sampled.begin(), sampled.end());

    tree_rows.clear();
    for (std::size_t q : sampled)
      for (std::size_t i = 0; i < corpus.groups[q].items.size(); ++i)
        tree_rows.push_back(
            {corpus.groups[q].items[i].features.data(),
             -grads[item_offset[q] + i]});

    RegressionTree tree = grow_tree(tree_rows, corpus.feature_dim, cfg, rng);

    std::size_t flat = 0;
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t i = 0; i < corpus.groups[q].items.size(); ++i, ++flat)
        scores[flat] += lr * tree.predict(corpus.groups[q].items[i].features);

    double new_loss = 0.0;
    eval_state(new_loss);
    const double used_lr = lr;
    if (new_loss > prev_loss) lr *= 0.5;
    prev_loss = new_loss;

    ensemble.trees.push_back({std::move(tree), used_lr});
    if (trace) trace->iters.push_back({used_lr, new_loss, std::move(sampled)});
  }
  return ensemble;
}

// ---------------------------------------------------------------------------
// Ensemble binary container
//
//   magic   "SGTB"         4 bytes
//   version u32            currently 1
//   count   u64            number of trees
//   per tree: lr f64, node_count u64, then node_count preorder records
//     { is_leaf u8, feature u32, threshold f64, value f64 }
// ---------------------------------------------------------------------------

constexpr char kEnsembleMagic[4] = {'S', 'G', 'T', 'B'};
constexpr std::uint32_t kEnsembleFormatVersion = 1;

inline void save_ensemble(const Ensemble& ensemble, std::ostream& os) {
  os.write(kEnsembleMagic, 4);
  write_u32le(os, kEnsembleFormatVersion);
  write_u64le(os, ensemble.trees.size());
  for (const auto& e : ensemble.trees) {
    write_f64le(os, e.lr);
    write_u64le(os, e.tree.nodes.size());
    // nodes are already stored in preorder
    for (const auto& n : e.tree.nodes) {
      os.put(n.is_leaf ? 1 : 0);
      write_u32le(os, n.feature);
      write_f64le(os, n.threshold);
      write_f64le(os, n.value);
    }
  }
  if (!os) throw ValidationError("save_ensemble: write failed");
}

namespace detail {

inline std::int32_t link_preorder(std::vector<TreeNode>& nodes,
                                  std::size_t& cursor) {
  if (cursor >= nodes.size())
    throw ValidationError("ensemble container: truncated tree");
  const std::int32_t at = static_cast<std::int32_t>(cursor++);
  if (!nodes[static_cast<std::size_t>(at)].is_leaf) {
    nodes[static_cast<std::size_t>(at)].left = link_preorder(nodes, cursor);
    nodes[static_cast<std::size_t>(at)].right = link_preorder(nodes, cursor);
  }
  return at;
}

}  // namespace detail

inline Ensemble load_ensemble(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kEnsembleMagic, 4) != 0)
    throw ValidationError("load_ensemble: bad magic");
  const std::uint32_t version = read_u32le(is);
  if (version != kEnsembleFormatVersion)
    throw ValidationError("load_ensemble: unsupported format version " +
                          std::to_string(version));
  const std::uint64_t count = read_u64le(is);
  Ensemble ensemble;
  ensemble.trees.resize(static_cast<std::size_t>(count));
  for (auto& e : ensemble.trees) {
    e.lr = read_f64le(is);
    const std::uint64_t n = read_u64le(is);
    e.tree.nodes.resize(static_cast<std::size_t>(n));
    for (auto& node : e.tree.nodes) {
      const int flag = is.get();
      if (flag < 0) throw ValidationError("load_ensemble: truncated node");
      node.is_leaf = flag != 0;
      node.feature = read_u32le(is);
      node.threshold = read_f64le(is);
      node.value = read_f64le(is);
      node.left = node.right = -1;
    }
    std::size_t cursor = 0;
    if (!e.tree.nodes.empty()) detail::link_preorder(e.tree.nodes, cursor);
    if (cursor != e.tree.nodes.size())
      throw ValidationError("load_ensemble: malformed preorder tree");
  }
  return ensemble;
}

inline void save_ensemble_file(const Ensemble& ensemble,
                               const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open ensemble file for write: " + path);
  save_ensemble(ensemble, os);
}

inline Ensemble load_ensemble_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open ensemble file: " + path);
  return load_ensemble(is);
}

}  // namespace elimrank
