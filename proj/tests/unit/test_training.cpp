#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "elimrank/training.hpp"
#include "support/checks.hpp"

using namespace elimrank;

namespace {

TrainConfig quiet_config() {
  TrainConfig cfg;
  cfg.dropout = DropoutConfig{0.0, 0.0, 0};
  cfg.maxnorm_cap = std::nullopt;
  return cfg;
}

std::string serialize(const RankModel& model) {
  std::stringstream buffer;
  save_model(model, buffer);
  return buffer.str();
}

std::string serialize(const TrainLog& log) {
  std::stringstream buffer;
  log.write(buffer);
  return buffer.str();
}

double corpus_loss(const RankModel& model, const Corpus& corpus,
                   ChoiceModel loss, Rng& tie_rng) {
  double sum = 0.0;
  for (const auto& g : corpus.groups) {
    const Permutation pi = label_permutation(g, tie_rng);
    std::vector<double> f(g.items.size());
    for (std::size_t k = 0; k < pi.size(); ++k)
      f[k] = score_item(model, g.items[pi.order[k]].features);
    sum += loss_grad(loss, f).loss;
  }
  return sum / static_cast<double>(corpus.groups.size());
}

}  // namespace

TEST_CASE("label permutation") {
  Rng rng(17);
  SECTION("strict grades sort descending") {
    const Corpus c = testsupport::corpus_from_grades({{4, 0, 2}});
    const Permutation pi = label_permutation(c.groups[0], rng);
    CHECK(pi.order == std::vector<std::size_t>{0, 2, 1});
    CHECK(pi.is_valid());
  }
  SECTION("single item") {
    const Corpus c = testsupport::corpus_from_grades({{3}});
    CHECK(label_permutation(c.groups[0], rng).order ==
          std::vector<std::size_t>{0});
  }
  SECTION("full ties shuffle uniformly") {
    const Corpus c = testsupport::corpus_from_grades({{2, 2, 2, 2}});
    const int rounds = 10000;
    std::vector<int> first_count(4, 0);
    for (int i = 0; i < rounds; ++i)
      ++first_count[label_permutation(c.groups[0], rng).order[0]];
    // each item leads with frequency 1/4 within 3 binomial sigmas
    const double expect = rounds / 4.0;
    const double sigma = std::sqrt(rounds * 0.25 * 0.75);
    for (int cnt : first_count)
      CHECK(std::abs(cnt - expect) < 3.0 * sigma);
  }
}

TEST_CASE("learning rate schedule") {
  SECTION("halves exactly when improvement stalls") {
    LrSchedule sched{0.1, 1e-6};
    CHECK_FALSE(sched.observe(1.0));  // first epoch always improves on inf
    CHECK(sched.lr == 0.1);
    CHECK(sched.observe(1.0));  // flat loss triggers the halving
    CHECK(sched.lr == 0.05);
  }
  SECTION("comparison is against the best epoch so far") {
    LrSchedule sched{0.4, 1e-6};
    sched.observe(1.0);
    sched.observe(2.0);   // worse than best: halve
    CHECK(sched.lr == 0.2);
    sched.observe(0.5);   // new best: no halve
    CHECK(sched.lr == 0.2);
  }
}

TEST_CASE("sgd training") {
  const auto spec = testsupport::default_synth_spec(12, 8, 4, 0.0, 5);
  Corpus corpus = generate_synthetic(spec);
  corpus = apply_normalization(corpus, fit_normalization(corpus));

  SECTION("zero learning rate leaves parameters at their initialization") {
    TrainConfig cfg = quiet_config();
    cfg.lr_init = 0.0;
    cfg.max_epochs = 1;
    cfg.rng_seed = 3;
    const ModelSpec spec_hw{ModelKind::kHighway, 5, 3};
    auto [model, log] = train(corpus, spec_hw, cfg);
    CHECK(log.epochs.size() == 1);
    const HighwayParams init = init_highway(corpus.feature_dim, 5, 3,
                                            derive_seed(cfg.rng_seed, "init"));
    CHECK(std::get<HighwayParams>(model.params) == init);
  }

  SECTION("one small full-batch step reduces the loss") {
    // five items per query means one item per grade bucket: no label ties,
    // so the loss does not depend on the tie-break stream
    const auto tie_free = testsupport::default_synth_spec(10, 5, 4, 0.0, 8);
    Corpus small = generate_synthetic(tie_free);
    small = apply_normalization(small, fit_normalization(small));
    for (auto loss : {ChoiceModel::kPlackettLuce, ChoiceModel::kElimination}) {
      for (auto kind : {ModelKind::kLinear, ModelKind::kHighway}) {
        TrainConfig cfg = quiet_config();
        cfg.loss = loss;
        cfg.batch_queries = small.groups.size();  // one batch per epoch
        cfg.lr_init = 1e-3;
        cfg.lr_stop = 1e-4;
        cfg.max_epochs = 1;
        cfg.rng_seed = 11;
        const ModelSpec mspec{kind, 6, 3};
        auto [model, log] = train(small, mspec, cfg);

        Rng tie_rng(derive_seed(cfg.rng_seed, "sgd-ties"));
        RankModel at_init =
            kind == ModelKind::kLinear
                ? RankModel{LinearParams(small.feature_dim)}
                : RankModel{init_highway(small.feature_dim, 6, 3,
                                         derive_seed(cfg.rng_seed, "init"))};
        const double before = corpus_loss(at_init, small, loss, tie_rng);
        const double after = corpus_loss(model, small, loss, tie_rng);
        INFO("loss kind " << int(loss) << " model " << int(kind));
        CHECK(after < before);
        CHECK(log.epochs.front().mean_loss ==
              Catch::Approx(before).epsilon(1e-12));
      }
    }
  }

  SECTION("training is reproducible from the seed") {
    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 8;
    cfg.rng_seed = 21;
    cfg.dropout = DropoutConfig{0.1, 0.2, 21};
    cfg.maxnorm_cap = 1.0;
    const ModelSpec mspec{ModelKind::kHighway, 4, 3};
    auto [m1, l1] = train(corpus, mspec, cfg);
    auto [m2, l2] = train(corpus, mspec, cfg);
    CHECK(serialize(m1) == serialize(m2));
    CHECK(serialize(l1) == serialize(l2));
    CHECK(l1.epochs.size() == 8);
  }

  SECTION("learning rate never increases and halvings line up with stalls") {
    TrainConfig cfg = quiet_config();
    cfg.max_epochs = 40;
    cfg.rng_seed = 2;
    const ModelSpec mspec{ModelKind::kLinear, 0, 0};
    auto [model, log] = train(corpus, mspec, cfg);
    LrSchedule replay{cfg.lr_init, cfg.improvement_tol};
    for (std::size_t i = 0; i < log.epochs.size(); ++i) {
      CHECK(log.epochs[i].lr == replay.lr);
      if (i) CHECK(log.epochs[i].lr <= log.epochs[i - 1].lr);
      replay.observe(log.epochs[i].mean_loss);
    }
  }

  SECTION("max-norm invariant holds after every epoch") {
    TrainConfig cfg = quiet_config();
    cfg.maxnorm_cap = 1.0;
    cfg.max_epochs = 5;
    cfg.lr_init = 5.0;  // large steps so the projection actually binds
    cfg.lr_stop = 1e-4;
    cfg.rng_seed = 31;
    const ModelSpec mspec{ModelKind::kHighway, 4, 3};
    auto [model, log] = train(corpus, mspec, cfg);
    const auto& hw = std::get<HighwayParams>(model.params);
    auto check_rows = [](const Matrix& m) {
      for (std::size_t r = 0; r < m.rows; ++r) {
        double sq = 0.0;
        for (double v : m.row(r)) sq += v * v;
        CHECK(std::sqrt(sq) <= 1.0 + 1e-9);
      }
    };
    check_rows(hw.W_X);
    check_rows(hw.W_H);
    check_rows(hw.W_T);
  }

  SECTION("non-finite loss aborts with a diagnostic") {
    Corpus bad = testsupport::corpus_from_grades({{4, 0}}, 1);
    bad.groups[0].items[0].features = {1e160};
    bad.groups[0].items[1].features = {-1e160};
    TrainConfig cfg = quiet_config();
    cfg.lr_init = 10.0;
    cfg.max_epochs = 10;
    const ModelSpec mspec{ModelKind::kLinear, 0, 0};
    CHECK_THROWS_MATCHES(
        train(bad, mspec, cfg), NumericalError,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("query id 1") &&
            Catch::Matchers::ContainsSubstring("epoch")));
  }

  SECTION("config validation") {
    TrainConfig cfg = quiet_config();
    cfg.lr_init = 1e-5;
    cfg.lr_stop = 1e-4;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = quiet_config();
    cfg.batch_queries = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}

TEST_CASE("evaluation") {
  SECTION("a perfect scorer gets NDCG@1 of 1") {
    // feature 0 holds the item index; grades strictly decrease with it
    Corpus c = testsupport::corpus_from_grades({{4, 3, 1}, {3, 2, 0}});
    const RankModel model{LinearParams({-1.0, 0.0}, 0.0)};
    const auto report = evaluate(model, c, parse_metric_list("ndcg@1"));
    CHECK(report.averages.at("ndcg@1") == 1.0);
  }
  SECTION("constant scorer keeps the input order via the index tie-break") {
    Corpus c = testsupport::corpus_from_grades({{4, 0}});
    const RankModel model{LinearParams(2)};  // scores identically zero
    const auto report = evaluate(model, c, parse_metric_list("err,ndcg@1"));
    // input order [4,0] is already ideal
    CHECK(report.averages.at("err") == 0.9375);
    CHECK(report.averages.at("ndcg@1") == 1.0);
  }
  SECTION("a perfect scorer beats a bad one on ERR") {
    Corpus c = testsupport::corpus_from_grades(
        {{4, 2, 0, 1}, {0, 3, 4, 2}, {1, 0, 2, 4}});
    const RankModel good{LinearParams({0.0, 1.0}, 0.0)};   // feature 1 below
    const RankModel bad{LinearParams({-1.0, 0.0}, 0.0)};
    Corpus scored = c;
    for (auto& g : scored.groups)
      for (auto& item : g.items)
        item.features[1] = static_cast<double>(item.relevance);
    const auto specs = parse_metric_list("err");
    const double good_err =
        evaluate(good, scored, specs).averages.at("err");
    const double bad_err = evaluate(bad, scored, specs).averages.at("err");
    CHECK(good_err > bad_err);
  }
  SECTION("per-query breakdown is preserved in corpus order") {
    Corpus c = testsupport::corpus_from_grades({{4, 0}, {0, 4}});
    const RankModel model{LinearParams(2)};
    const auto report = evaluate(model, c, parse_metric_list("err"));
    REQUIRE(report.per_query.size() == 2);
    CHECK(report.per_query[0].first == "1");
    CHECK(report.per_query[1].first == "2");
    CHECK(report.per_query[0].second.at("err") == 0.9375);
    CHECK(report.per_query[1].second.at("err") == 0.46875);
  }
}

TEST_CASE("synthetic recovery smoke test") {
  // small version of the full acceptance run: noiseless linear recovery
  const auto spec = testsupport::default_synth_spec(30, 10, 6, 0.0, 99);
  Corpus corpus = generate_synthetic(spec);
  const NormStats stats = fit_normalization(corpus);
  corpus = apply_normalization(corpus, stats);

  TrainConfig cfg = quiet_config();
  cfg.loss = ChoiceModel::kElimination;
  cfg.rng_seed = 1;
  const ModelSpec mspec{ModelKind::kLinear, 0, 0};
  auto [model, log] = train(corpus, mspec, cfg);

  const Corpus raw = generate_synthetic(spec);
  double min_tau = 1.0;
  for (std::size_t q = 0; q < corpus.groups.size(); ++q) {
    std::vector<double> learned, truth;
    for (std::size_t i = 0; i < corpus.groups[q].items.size(); ++i) {
      learned.push_back(
          score_item(model, corpus.groups[q].items[i].features));
      truth.push_back(
          dot(raw.groups[q].items[i].features, spec.true_weights));
    }
    min_tau = std::min(min_tau, testsupport::kendall_tau(learned, truth));
  }
  CHECK(min_tau >= 0.9);
}
