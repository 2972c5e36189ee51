#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "elimrank/choice_models.hpp"
#include "elimrank/common.hpp"
#include "elimrank/dataset.hpp"
#include "elimrank/metrics.hpp"
#include "elimrank/rank_functions.hpp"
#include "elimrank/rng.hpp"

namespace elimrank {

struct TrainConfig {
  std::size_t batch_queries = 2;
  double lr_init = 0.1;
  double lr_stop = 1e-4;
  double improvement_tol = 1e-6;
  std::size_t max_epochs = 500;
  ChoiceModel loss = ChoiceModel::kElimination;
  DropoutConfig dropout;
  std::optional<double> maxnorm_cap = 1.0;  // nullopt disables the projection
  std::uint64_t rng_seed = 0;

  void validate() const {
    // lr_init == 0 is admitted as a degenerate no-op run.
    if (lr_stop <= 0.0 || (lr_init != 0.0 && lr_init <= lr_stop))
      throw ValidationError("TrainConfig: need lr_init > lr_stop > 0");
    if (batch_queries < 1)
      throw ValidationError("TrainConfig: batch_queries must be >= 1");
    if (improvement_tol < 0.0)
      throw ValidationError("TrainConfig: improvement_tol must be >= 0");
    dropout.validate();
    if (maxnorm_cap && *maxnorm_cap <= 0.0)
      throw ValidationError("TrainConfig: maxnorm cap must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;   // 1-based
  double mean_loss = 0.0;  // mean per-query training loss
  double lr = 0.0;         // learning rate used during this epoch
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// Line-delimited text: `epoch<TAB>mean_loss<TAB>lr`, one record per line,
  /// after a single `#`-prefixed header.
  void write(std::ostream& os) const {
    os << "# epoch\tmean_loss\tlr\n";
    for (const auto& r : epochs)
      os << r.epoch << '\t' << fmt_g17(r.mean_loss) << '\t' << fmt_g17(r.lr)
         << '\n';
  }
};

/// Learning-rate halving: the rate is halved after any epoch whose mean loss
/// failed to improve on the best seen so far by at least tol.
struct LrSchedule {
  double lr;
  double tol;
  double best = std::numeric_limits<double>::infinity();

  /// Returns true when this observation triggered a halving.
  bool observe(double mean_loss) {
    const bool halve = !(mean_loss < best - tol);
    if (halve) lr *= 0.5;
    if (mean_loss < best) best = mean_loss;
    return halve;
  }
};

/// Ground-truth permutation for a graded query: items sorted by relevance
/// descending, ties broken by a fresh uniform shuffle so no arbitrary order
/// is baked into the loss.
inline Permutation label_permutation(const QueryGroup& group, Rng& rng) {
  if (group.items.empty())
    throw ValidationError("label_permutation: empty query group");
  Permutation pi;
  pi.order.resize(group.items.size());
  for (std::size_t i = 0; i < pi.order.size(); ++i) pi.order[i] = i;
  rng.shuffle(pi.order);
  std::stable_sort(pi.order.begin(), pi.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return group.items[a].relevance >
                            group.items[b].relevance;
                   });
  return pi;
}

// ---------------------------------------------------------------------------
// SGD trainers: one per rank function family. Both expose the same surface
// to the shared mini-batch loop below.
// ---------------------------------------------------------------------------

class LinearTrainer {
 public:
  explicit LinearTrainer(std::size_t p)
      : params_(p), batch_grad_(p), query_grad_(p) {}

  void zero_batch() { batch_grad_.set_zero(); }

  /// Score every item of the group in permutation order. The linear scorer
  /// takes no dropout.
  void begin_query(const QueryGroup& group, const Permutation& pi,
                   const DropoutConfig*, Rng*) {
    query_grad_.set_zero();
    items_ = &group.items;
    pi_ = &pi;
    scores_.resize(pi.size());
    for (std::size_t k = 0; k < pi.size(); ++k)
      scores_[k] = linear_forward(params_, group.items[pi.order[k]].features);
  }

  std::span<const double> scores() const { return scores_; }

  void backward_item(std::size_t rank, double dscore) {
    linear_backward((*items_)[pi_->order[rank]].features, dscore,
                    query_grad_);
  }

  void commit_query(double inv_items) {
    batch_grad_.add_scaled(query_grad_, inv_items);
  }

  void step(double scaled_lr) { params_.add_scaled(batch_grad_, -scaled_lr); }

  void project(double) {}  // max-norm constrains hidden units only

  const LinearParams& params() const { return params_; }
  RankModel release() && { return RankModel{std::move(params_)}; }

 private:
  LinearParams params_, batch_grad_, query_grad_;
  std::vector<double> scores_;
  const std::vector<Item>* items_ = nullptr;
  const Permutation* pi_ = nullptr;
};

class HighwayTrainer {
 public:
  explicit HighwayTrainer(HighwayParams params)
      : params_(std::move(params)),
        batch_grad_(params_.p, params_.K, params_.L),
        query_grad_(params_.p, params_.K, params_.L) {}

  void zero_batch() { batch_grad_.set_zero(); }

  void begin_query(const QueryGroup& group, const Permutation& pi,
                   const DropoutConfig* dropout, Rng* rng) {
    query_grad_.set_zero();
    scores_.resize(pi.size());
    if (tapes_.size() < pi.size()) tapes_.resize(pi.size());
    for (std::size_t k = 0; k < pi.size(); ++k)
      scores_[k] =
          highway_forward(params_, group.items[pi.order[k]].features,
                          tapes_[k], RunMode::kTrain, dropout, rng);
  }

  std::span<const double> scores() const { return scores_; }

  void backward_item(std::size_t rank, double dscore) {
    highway_backward(params_, tapes_[rank], dscore, query_grad_);
  }

  void commit_query(double inv_items) {
    batch_grad_.add_scaled(query_grad_, inv_items);
  }

  void step(double scaled_lr) { params_.add_scaled(batch_grad_, -scaled_lr); }

  void project(double cap) { project_maxnorm(params_, cap); }

  const HighwayParams& params() const { return params_; }
  RankModel release() && { return RankModel{std::move(params_)}; }

 private:
  HighwayParams params_, batch_grad_, query_grad_;
  std::vector<double> scores_;
  std::vector<HighwayTape> tapes_;
};

// ---------------------------------------------------------------------------
// Mini-batch SGD loop
// ---------------------------------------------------------------------------

/// Run mini-batch SGD over queries. Per query the parameter gradient is the
/// mean over that query's items of the functional gradient pulled back
/// through the rank function; batches then average over their queries, so
/// step size is independent of list length and batch size. Accumulation
/// order is fixed, making runs bit-reproducible given the seed.
template <class Trainer>
TrainLog run_sgd(const Corpus& corpus, Trainer& trainer,
                 const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.groups.empty()) throw ValidationError("train: empty corpus");

  Rng shuffle_rng(derive_seed(cfg.rng_seed, "sgd-shuffle"));
  Rng tie_rng(derive_seed(cfg.rng_seed, "sgd-ties"));
  Rng dropout_rng(derive_seed(cfg.rng_seed, "sgd-dropout"));

  const std::size_t nq = corpus.groups.size();
  std::vector<std::size_t> order(nq);
  for (std::size_t i = 0; i < nq; ++i) order[i] = i;

  LrSchedule schedule{cfg.lr_init, cfg.improvement_tol};
  TrainLog log;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < nq; start += cfg.batch_queries) {
      const std::size_t end = std::min(start + cfg.batch_queries, nq);
      trainer.zero_batch();
      for (std::size_t b = start; b < end; ++b) {
        const QueryGroup& group = corpus.groups[order[b]];
        const Permutation pi = label_permutation(group, tie_rng);
        trainer.begin_query(group, pi, &cfg.dropout, &dropout_rng);
        const LossGrad lg = loss_grad(cfg.loss, trainer.scores());
        if (!std::isfinite(lg.loss))
          throw NumericalError("non-finite training loss at epoch " +
                               std::to_string(epoch) + ", query id " +
                               group.query_id);
        loss_sum += lg.loss;
        for (std::size_t k = 0; k < lg.grad.size(); ++k)
          trainer.backward_item(k, lg.grad[k]);
        trainer.commit_query(1.0 / static_cast<double>(group.items.size()));
      }
      trainer.step(schedule.lr / static_cast<double>(end - start));
      if (cfg.maxnorm_cap) trainer.project(*cfg.maxnorm_cap);
    }
    const double mean_loss = loss_sum / static_cast<double>(nq);
    log.epochs.push_back({epoch, mean_loss, schedule.lr});
    schedule.observe(mean_loss);
    if (schedule.lr < cfg.lr_stop) break;
  }
  return log;
}

struct ModelSpec {
  ModelKind kind = ModelKind::kHighway;
  std::size_t K = 10;
  std::size_t L = 3;
};

/// Train a rank function from scratch on a (normalized) corpus.
inline std::pair<RankModel, TrainLog> train(const Corpus& corpus,
                                            const ModelSpec& spec,
                                            const TrainConfig& cfg) {
  if (corpus.groups.empty()) throw ValidationError("train: empty corpus");
  if (spec.kind == ModelKind::kLinear) {
    LinearTrainer trainer(corpus.feature_dim);
    TrainLog log = run_sgd(corpus, trainer, cfg);
    return {std::move(trainer).release(), std::move(log)};
  }
  HighwayTrainer trainer(init_highway(corpus.feature_dim, spec.K, spec.L,
                                      derive_seed(cfg.rng_seed, "init")));
  TrainLog log = run_sgd(corpus, trainer, cfg);
  return {std::move(trainer).release(), std::move(log)};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Rank a query's items by descending score, ties broken by ascending
/// original index.
inline std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return idx;
}

/// Score every item in infer mode, rank, compute each metric per query and
/// average across queries.
inline MetricReport evaluate(const RankModel& model, const Corpus& corpus,
                             const std::vector<MetricSpec>& specs) {
  MetricReport report;
  for (const auto& s : specs) {
    report.metric_names.push_back(s.name());
    report.averages[s.name()] = 0.0;
  }
  std::vector<double> scores;
  std::vector<int> ranked_grades;
  for (const auto& group : corpus.groups) {
    scores.resize(group.items.size());
    for (std::size_t i = 0; i < group.items.size(); ++i)
      scores[i] = score_item(model, group.items[i].features);
    const std::vector<std::size_t> ranking = rank_by_score(scores);
    ranked_grades.resize(group.items.size());
    for (std::size_t i = 0; i < ranking.size(); ++i)
      ranked_grades[i] = group.items[ranking[i]].relevance;

    std::map<std::string, double> values;
    for (const auto& s : specs) {
      const double v = s.evaluate(ranked_grades);
      values[s.name()] = v;
      report.averages[s.name()] += v;
    }
    report.per_query.emplace_back(group.query_id, std::move(values));
  }
  if (!corpus.groups.empty())
    for (auto& [name, sum] : report.averages)
      sum /= static_cast<double>(corpus.groups.size());
  return report;
}

}  // namespace elimrank
