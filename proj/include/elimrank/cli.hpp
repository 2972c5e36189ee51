#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "elimrank/choice_models.hpp"
#include "elimrank/common.hpp"
#include "elimrank/dataset.hpp"
#include "elimrank/metrics.hpp"
#include "elimrank/rank_functions.hpp"
#include "elimrank/rng.hpp"
#include "elimrank/rut.hpp"
#include "elimrank/sgtb.hpp"
#include "elimrank/training.hpp"

namespace elimrank {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

namespace cli_detail {

inline ChoiceModel parse_loss(const std::string& name) {
  if (name == "elimination" || name == "elim")
    return ChoiceModel::kElimination;
  if (name == "plackett_luce" || name == "pl")
    return ChoiceModel::kPlackettLuce;
  throw ValidationError("unknown loss '" + name +
                        "' (expected elimination or plackett_luce)");
}

inline ModelKind parse_model_kind(const std::string& name) {
  if (name == "linear") return ModelKind::kLinear;
  if (name == "highway") return ModelKind::kHighway;
  throw ValidationError("unknown model '" + name +
                        "' (expected linear or highway)");
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    std::istringstream conv(token);
    T value{};
    if (!(conv >> value))
      throw ValidationError("bad list element '" + token + "'");
    out.push_back(value);
  }
  if (out.empty()) throw ValidationError("empty list");
  return out;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open output file: " + path);
  return os;
}

inline NormStats read_stats_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open stats file: " + path);
  return read_norm_stats(is);
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommand options
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string train_path;
  std::string model_out = "model.bin";
  std::string log_out = "train_log.txt";
  std::string stats_out;  // default: <model_out>.stats
  std::string loss = "elimination";
  std::string model = "highway";
  std::size_t k = 10;
  std::size_t layers = 3;
  double p_vis = 0.0;
  double p_hid = 0.3;
  double maxnorm = 1.0;
  bool no_maxnorm = false;
  std::size_t batch = 2;
  double lr = 0.1;
  double lr_stop = 1e-4;
  double tol = 1e-6;
  std::size_t max_epochs = 500;
  std::uint64_t seed = 42;
  bool no_normalize = false;
};

struct EvalOpts {
  std::string test_path;
  std::string model_path;
  std::string stats_path;
  std::string metrics = "ndcg@1,ndcg@5,err";
  std::string out;  // key-value report file, optional
};

struct PredictOpts {
  std::string in_path;
  std::string model_path;
  std::string stats_path;
  std::string out;  // empty = stdout
};

struct SynthOpts {
  std::size_t queries = 100;
  std::size_t items = 20;
  std::size_t dim = 10;
  double noise = 0.0;
  std::uint64_t seed = 42;
  std::string out;
  std::string weights_out;
};

struct ValidateRutOpts {
  std::size_t samples = 1000000;
  std::uint64_t seed = 42;
  double sigma = 4.0;
};

struct SweepOpts {
  std::string train_path;
  std::string test_path;
  std::string k_grid = "10";
  std::string p_hid_grid = "0,0.3";
  std::string p_vis_grid = "0";
  std::size_t layers = 3;
  std::string loss = "elimination";
  std::string metrics = "ndcg@1,ndcg@5,err";
  std::uint64_t seed = 42;
  std::string out;  // table file, optional
  std::size_t max_epochs = 500;
};

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

inline TrainConfig make_train_config(const TrainOpts& o) {
  TrainConfig cfg;
  cfg.batch_queries = o.batch;
  cfg.lr_init = o.lr;
  cfg.lr_stop = o.lr_stop;
  cfg.improvement_tol = o.tol;
  cfg.max_epochs = o.max_epochs;
  cfg.loss = cli_detail::parse_loss(o.loss);
  cfg.dropout = DropoutConfig{o.p_vis, o.p_hid, o.seed};
  cfg.maxnorm_cap =
      o.no_maxnorm ? std::nullopt : std::optional<double>(o.maxnorm);
  cfg.rng_seed = o.seed;
  return cfg;
}

inline int cmd_train(const TrainOpts& o, std::ostream& console) {
  Corpus corpus = parse_letor_file(o.train_path);
  if (corpus.groups.empty())
    throw ValidationError("training corpus has no queries");
  if (!o.no_normalize) {
    const NormStats stats = fit_normalization(corpus);
    corpus = apply_normalization(corpus, stats);
    const std::string stats_path =
        o.stats_out.empty() ? o.model_out + ".stats" : o.stats_out;
    auto os = cli_detail::open_out(stats_path);
    write_norm_stats(stats, os);
  }
  const TrainConfig cfg = make_train_config(o);
  const ModelSpec spec{cli_detail::parse_model_kind(o.model), o.k, o.layers};
  auto [model, log] = train(corpus, spec, cfg);
  save_model_file(model, o.model_out);
  {
    auto os = cli_detail::open_out(o.log_out);
    log.write(os);
  }
  const auto& last = log.epochs.back();
  console << "trained " << o.model << " model on " << corpus.groups.size()
          << " queries: " << log.epochs.size()
          << " epochs, final mean loss " << fmt_g17(last.mean_loss) << '\n';
  return kExitOk;
}

inline int cmd_eval(const EvalOpts& o, std::ostream& console) {
  const RankModel model = load_model_file(o.model_path);
  Corpus corpus = parse_letor_file(o.test_path, model.feature_dim());
  if (!o.stats_path.empty())
    corpus =
        apply_normalization(corpus, cli_detail::read_stats_file(o.stats_path));
  const auto specs = parse_metric_list(o.metrics);
  const MetricReport report = evaluate(model, corpus, specs);
  console << report.to_table();
  if (!o.out.empty()) {
    auto os = cli_detail::open_out(o.out);
    os << report.to_kv();
  }
  return kExitOk;
}

inline int cmd_predict(const PredictOpts& o, std::ostream& console) {
  const RankModel model = load_model_file(o.model_path);
  Corpus corpus = parse_letor_file(o.in_path, model.feature_dim());
  if (!o.stats_path.empty())
    corpus =
        apply_normalization(corpus, cli_detail::read_stats_file(o.stats_path));
  std::ofstream file;
  if (!o.out.empty()) file = cli_detail::open_out(o.out);
  std::ostream& os = o.out.empty() ? console : file;
  for (const auto& group : corpus.groups)
    for (const auto& item : group.items)
      os << group.query_id << '\t'
         << fmt_g17(score_item(model, item.features)) << '\n';
  return kExitOk;
}

inline int cmd_synth(const SynthOpts& o, std::ostream& console) {
  if (o.out.empty()) throw ValidationError("synth: --out is required");
  SyntheticSpec spec;
  spec.num_queries = o.queries;
  spec.items_per_query = o.items;
  spec.feature_dim = o.dim;
  spec.noise_std = o.noise;
  spec.rng_seed = o.seed;
  Rng wrng(derive_seed(o.seed, "synth-weights"));
  spec.true_weights.resize(o.dim);
  for (auto& w : spec.true_weights) w = wrng.normal();

  const Corpus corpus = generate_synthetic(spec);
  {
    auto os = cli_detail::open_out(o.out);
    serialize_letor(corpus, os);
  }
  if (!o.weights_out.empty()) {
    auto os = cli_detail::open_out(o.weights_out);
    for (double w : spec.true_weights) os << fmt_g17(w) << '\n';
  }
  console << "wrote " << corpus.groups.size() << " queries ("
          << corpus.num_items() << " items, dim " << corpus.feature_dim
          << ") to " << o.out << '\n';
  return kExitOk;
}

inline int cmd_validate_rut(const ValidateRutOpts& o, std::ostream& console) {
  Rng rng(derive_seed(o.seed, "validate-rut"));
  bool all_pass = true;
  auto show = [&](const McReport& r) {
    console << r.to_table() << '\n';
    all_pass = all_pass && r.passed;
  };

  const std::vector<std::vector<double>> instances = {
      {0.0, 0.0},
      {0.0, std::log(2.0)},
      {0.5, -0.25, 1.0},
      {1.5, 0.0, -1.5, 0.75},
  };
  for (const auto& scores : instances)
    for (double b : {0.5, 1.0, 2.0})
      show(mc_elimination_check(scores, o.samples, b, rng, o.sigma));
  for (const auto& scores : instances)
    show(mc_gumbel_pl_check(scores, o.samples, rng, o.sigma));
  show(mc_gumbel_ordering_check(std::vector<double>{0.3, -0.6, 0.9},
                                o.samples, rng, o.sigma));

  console << (all_pass ? "all Monte Carlo checks passed\n"
                       : "MONTE CARLO CHECK FAILURES\n");
  return all_pass ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// Dropout sweep: train one highway model per (K, p_vis, p_hid) grid point
// and tabulate the test metrics.
// ---------------------------------------------------------------------------

struct SweepRow {
  std::size_t k = 0;
  double p_vis = 0.0;
  double p_hid = 0.0;
  std::map<std::string, double> metrics;
};

inline std::vector<SweepRow> dropout_sweep(
    const Corpus& train_corpus, const Corpus& test_corpus,
    const std::vector<std::size_t>& k_grid,
    const std::vector<double>& p_vis_grid,
    const std::vector<double>& p_hid_grid, std::size_t layers,
    ChoiceModel loss, const std::vector<MetricSpec>& specs,
    const TrainConfig& base_cfg) {
  std::vector<SweepRow> rows;
  for (std::size_t k : k_grid)
    for (double pv : p_vis_grid)
      for (double ph : p_hid_grid) {
        TrainConfig cfg = base_cfg;
        cfg.loss = loss;
        cfg.dropout = DropoutConfig{pv, ph, base_cfg.rng_seed};
        const ModelSpec spec{ModelKind::kHighway, k, layers};
        auto [model, log] = train(train_corpus, spec, cfg);
        const MetricReport report = evaluate(model, test_corpus, specs);
        SweepRow row;
        row.k = k;
        row.p_vis = pv;
        row.p_hid = ph;
        row.metrics = report.averages;
        rows.push_back(std::move(row));
      }
  return rows;
}

inline std::string sweep_table(const std::vector<SweepRow>& rows,
                               const std::vector<MetricSpec>& specs) {
  std::ostringstream os;
  os << "K\tp_vis\tp_hid";
  for (const auto& s : specs) os << '\t' << s.name();
  os << '\n';
  for (const auto& row : rows) {
    os << row.k << '\t' << fmt_g17(row.p_vis) << '\t' << fmt_g17(row.p_hid);
    for (const auto& s : specs) os << '\t' << fmt_g17(row.metrics.at(s.name()));
    os << '\n';
  }
  return os.str();
}

inline int cmd_sweep(const SweepOpts& o, std::ostream& console) {
  Corpus train_corpus = parse_letor_file(o.train_path);
  const NormStats stats = fit_normalization(train_corpus);
  train_corpus = apply_normalization(train_corpus, stats);
  Corpus test_corpus =
      parse_letor_file(o.test_path, train_corpus.feature_dim);
  test_corpus = apply_normalization(test_corpus, stats);

  const auto k_grid = cli_detail::parse_list<std::size_t>(o.k_grid);
  const auto pv_grid = cli_detail::parse_list<double>(o.p_vis_grid);
  const auto ph_grid = cli_detail::parse_list<double>(o.p_hid_grid);
  const auto specs = parse_metric_list(o.metrics);

  TrainConfig base;
  base.rng_seed = o.seed;
  base.max_epochs = o.max_epochs;
  const auto rows =
      dropout_sweep(train_corpus, test_corpus, k_grid, pv_grid, ph_grid,
                    o.layers, cli_detail::parse_loss(o.loss), specs, base);
  const std::string table = sweep_table(rows, specs);
  console << table;
  if (!o.out.empty()) {
    auto os = cli_detail::open_out(o.out);
    os << table;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Run one subcommand. args excludes the program name. All subcommands also
/// accept `--config <file>` with flat `key=value` lines mirroring the long
/// option names; explicit flags override file values.
inline int run_cli(const std::vector<std::string>& args,
                   std::ostream& console = std::cout,
                   std::ostream& errors = std::cerr) {
  CLI::App app{"listwise learning-to-rank with sequential choice models"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  auto* train_cmd =
      app.add_subcommand("train", "train a rank function on LETOR data");
  train_cmd->set_config("--config");
  train_cmd->add_option("--train", train_opts.train_path, "training LETOR file")
      ->required();
  train_cmd->add_option("--model-out", train_opts.model_out,
                        "model checkpoint path");
  train_cmd->add_option("--log-out", train_opts.log_out, "training log path");
  train_cmd->add_option("--stats-out", train_opts.stats_out,
                        "normalization stats path (default <model-out>.stats)");
  train_cmd->add_option("--loss", train_opts.loss,
                        "elimination | plackett_luce");
  train_cmd->add_option("--model", train_opts.model, "highway | linear");
  train_cmd->add_option("--K", train_opts.k, "hidden units");
  train_cmd->add_option("--L", train_opts.layers, "layers");
  train_cmd->add_option("--p-vis", train_opts.p_vis,
                        "visible dropout probability");
  train_cmd->add_option("--p-hid", train_opts.p_hid,
                        "hidden dropout probability");
  train_cmd->add_option("--maxnorm", train_opts.maxnorm,
                        "max-norm cap per hidden unit");
  train_cmd->add_flag("--no-maxnorm", train_opts.no_maxnorm,
                      "disable the max-norm projection");
  train_cmd->add_option("--batch", train_opts.batch, "queries per mini-batch");
  train_cmd->add_option("--lr", train_opts.lr, "initial learning rate");
  train_cmd->add_option("--lr-stop", train_opts.lr_stop,
                        "stop once the rate falls below this");
  train_cmd->add_option("--tol", train_opts.tol,
                        "improvement tolerance for the halving rule");
  train_cmd->add_option("--max-epochs", train_opts.max_epochs, "epoch cap");
  train_cmd->add_option("--seed", train_opts.seed, "root RNG seed");
  train_cmd->add_flag("--no-normalize", train_opts.no_normalize,
                      "train on raw features");

  EvalOpts eval_opts;
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a model with rank metrics");
  eval_cmd->set_config("--config");
  eval_cmd->add_option("--test", eval_opts.test_path, "test LETOR file")
      ->required();
  eval_cmd->add_option("--model", eval_opts.model_path, "model checkpoint")
      ->required();
  eval_cmd->add_option("--stats", eval_opts.stats_path,
                       "training normalization stats");
  eval_cmd->add_option("--metric", eval_opts.metrics,
                       "comma-separated metric list");
  eval_cmd->add_option("--out", eval_opts.out, "key-value report file");

  PredictOpts predict_opts;
  auto* predict_cmd =
      app.add_subcommand("predict", "score items, one qid<TAB>score per line");
  predict_cmd->set_config("--config");
  predict_cmd->add_option("--in", predict_opts.in_path, "input LETOR file")
      ->required();
  predict_cmd->add_option("--model", predict_opts.model_path,
                          "model checkpoint")
      ->required();
  predict_cmd->add_option("--stats", predict_opts.stats_path,
                          "training normalization stats");
  predict_cmd->add_option("--out", predict_opts.out,
                          "output path (default stdout)");

  SynthOpts synth_opts;
  auto* synth_cmd = app.add_subcommand(
      "synth", "generate a synthetic LETOR corpus with known weights");
  synth_cmd->set_config("--config");
  synth_cmd->add_option("--queries", synth_opts.queries, "query count");
  synth_cmd->add_option("--items", synth_opts.items, "items per query");
  synth_cmd->add_option("--dim", synth_opts.dim, "feature dimension");
  synth_cmd->add_option("--noise", synth_opts.noise, "latent noise stddev");
  synth_cmd->add_option("--seed", synth_opts.seed, "root RNG seed");
  synth_cmd->add_option("--out", synth_opts.out, "output LETOR path")
      ->required();
  synth_cmd->add_option("--weights-out", synth_opts.weights_out,
                        "write the true weights here");

  ValidateRutOpts rut_opts;
  auto* rut_cmd = app.add_subcommand(
      "validate-rut",
      "Monte Carlo checks of the latent-utility derivations");
  rut_cmd->set_config("--config");
  rut_cmd->add_option("--samples", rut_opts.samples, "samples per check");
  rut_cmd->add_option("--seed", rut_opts.seed, "root RNG seed");
  rut_cmd->add_option("--sigma", rut_opts.sigma, "acceptance band width");

  SweepOpts sweep_opts;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "train/evaluate a grid of (K, p_vis, p_hid) settings");
  sweep_cmd->set_config("--config");
  sweep_cmd->add_option("--train", sweep_opts.train_path, "training LETOR file")
      ->required();
  sweep_cmd->add_option("--test", sweep_opts.test_path, "test LETOR file")
      ->required();
  sweep_cmd->add_option("--K-grid", sweep_opts.k_grid, "comma list of K");
  sweep_cmd->add_option("--p-hid-grid", sweep_opts.p_hid_grid,
                        "comma list of hidden dropout rates");
  sweep_cmd->add_option("--p-vis-grid", sweep_opts.p_vis_grid,
                        "comma list of visible dropout rates");
  sweep_cmd->add_option("--L", sweep_opts.layers, "layers");
  sweep_cmd->add_option("--loss", sweep_opts.loss,
                        "elimination | plackett_luce");
  sweep_cmd->add_option("--metric", sweep_opts.metrics, "metric list");
  sweep_cmd->add_option("--seed", sweep_opts.seed, "root RNG seed");
  sweep_cmd->add_option("--max-epochs", sweep_opts.max_epochs, "epoch cap");
  sweep_cmd->add_option("--out", sweep_opts.out, "table output file");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("elimrank");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, console, errors);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(train_opts, console);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_opts, console);
    if (app.got_subcommand(predict_cmd))
      return cmd_predict(predict_opts, console);
    if (app.got_subcommand(synth_cmd)) return cmd_synth(synth_opts, console);
    if (app.got_subcommand(rut_cmd))
      return cmd_validate_rut(rut_opts, console);
    if (app.got_subcommand(sweep_cmd)) return cmd_sweep(sweep_opts, console);
  } catch (const NumericalError& e) {
    errors << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ParseError& e) {
    errors << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ValidationError& e) {
    errors << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    errors << "error: " << e.what() << '\n';
    return kExitData;
  }
  errors << "no command given\n";
  return kExitUsage;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace elimrank
