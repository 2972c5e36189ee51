#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elimrank/cli.hpp"

using namespace elimrank;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           fs::path("elimrank-test-" +
                    std::to_string(Catch::rngSeed()) + "-" +
                    std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

int run(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream console, errors;
  const int code = run_cli(args, console, errors);
  if (out) *out = console.str();
  return code;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("cli synth and train round trip") {
  TempDir dir;
  const auto data = dir.file("corpus.txt");

  std::string console;
  REQUIRE(run({"synth", "--queries", "12", "--items", "5", "--dim", "4",
               "--seed", "9", "--out", data},
              &console) == 0);
  CHECK(console.find("12 queries") != std::string::npos);

  const Corpus corpus = parse_letor_file(data);
  CHECK(corpus.groups.size() == 12);
  CHECK(corpus.num_items() == 60);

  SECTION("training writes model, log and stats") {
    const auto model_path = dir.file("model.bin");
    const auto log_path = dir.file("log.txt");
    REQUIRE(run({"train", "--train", data, "--model-out", model_path,
                 "--log-out", log_path, "--model", "linear", "--loss",
                 "elimination", "--max-epochs", "30", "--seed", "4"}) == 0);
    CHECK(fs::exists(model_path));
    CHECK(fs::exists(log_path));
    CHECK(fs::exists(model_path + ".stats"));

    const RankModel model = load_model_file(model_path);
    CHECK(model.kind() == ModelKind::kLinear);

    SECTION("predict emits one qid<TAB>score line per item, in order") {
      const auto pred_path = dir.file("pred.tsv");
      REQUIRE(run({"predict", "--in", data, "--model", model_path, "--stats",
                   model_path + ".stats", "--out", pred_path}) == 0);
      const std::string pred = slurp(pred_path);
      CHECK(count_lines(pred) == corpus.num_items());
      std::istringstream lines(pred);
      std::string line;
      std::size_t at = 0;
      for (const auto& g : corpus.groups)
        for (std::size_t i = 0; i < g.items.size(); ++i) {
          REQUIRE(std::getline(lines, line));
          CHECK(line.substr(0, line.find('\t')) == g.query_id);
          ++at;
        }
      CHECK(at == corpus.num_items());
    }

    SECTION("eval prints a table and writes key-value reports") {
      const auto report_path = dir.file("report.kv");
      std::string table;
      REQUIRE(run({"eval", "--test", data, "--model", model_path, "--stats",
                   model_path + ".stats", "--metric", "ndcg@1,ndcg@5,err",
                   "--out", report_path},
                  &table) == 0);
      CHECK(table.find("ndcg@1") != std::string::npos);
      CHECK(table.find("err") != std::string::npos);
      const std::string kv = slurp(report_path);
      CHECK(kv.find("mean.ndcg@1 ") != std::string::npos);
      CHECK(kv.find("query.1.err ") != std::string::npos);
    }
  }
}

TEST_CASE("cli reruns are byte-identical") {
  TempDir dir;
  const auto data = dir.file("corpus.txt");
  const auto data2 = dir.file("corpus2.txt");
  REQUIRE(run({"synth", "--queries", "8", "--items", "5", "--dim", "3",
               "--seed", "123", "--out", data}) == 0);
  REQUIRE(run({"synth", "--queries", "8", "--items", "5", "--dim", "3",
               "--seed", "123", "--out", data2}) == 0);
  CHECK(slurp(data) == slurp(data2));

  auto train_once = [&](const std::string& tag) {
    const auto model_path = dir.file("model-" + tag + ".bin");
    const auto log_path = dir.file("log-" + tag + ".txt");
    REQUIRE(run({"train", "--train", data, "--model-out", model_path,
                 "--log-out", log_path, "--model", "highway", "--K", "4",
                 "--L", "2", "--p-hid", "0.2", "--max-epochs", "10", "--seed",
                 "77"}) == 0);
    return slurp(model_path) + "||" + slurp(log_path);
  };
  CHECK(train_once("a") == train_once("b"));
}

TEST_CASE("cli exit codes") {
  TempDir dir;
  SECTION("unknown flag is a usage error") {
    CHECK(run({"train", "--no-such-flag"}) == 1);
    CHECK(run({"frobnicate"}) == 1);
  }
  SECTION("missing input file is a data error") {
    CHECK(run({"train", "--train", dir.file("absent.txt")}) == 2);
    CHECK(run({"eval", "--test", dir.file("absent.txt"), "--model",
               dir.file("absent.bin")}) == 2);
  }
  SECTION("malformed data is a data error") {
    const auto bad = dir.file("bad.txt");
    std::ofstream(bad) << "9 qid:1 1:0.5\n";
    CHECK(run({"train", "--train", bad}) == 2);
  }
}

TEST_CASE("cli config file supplies defaults, flags override") {
  TempDir dir;
  const auto data = dir.file("corpus.txt");
  REQUIRE(run({"synth", "--queries", "6", "--items", "5", "--dim", "3",
               "--seed", "5", "--out", data}) == 0);

  const auto config = dir.file("train.cfg");
  const auto model_a = dir.file("a.bin");
  const auto model_b = dir.file("b.bin");
  std::ofstream(config) << "train=" << data << "\n"
                        << "model=linear\n"
                        << "max-epochs=5\n"
                        << "seed=42\n"
                        << "model-out=" << model_a << "\n"
                        << "log-out=" << dir.file("a.log") << "\n";
  REQUIRE(run({"train", "--config", config}) == 0);
  CHECK(fs::exists(model_a));

  // same config, one value overridden on the command line
  REQUIRE(run({"train", "--config", config, "--model-out", model_b,
               "--log-out", dir.file("b.log")}) == 0);
  CHECK(slurp(model_a) == slurp(model_b));
}

TEST_CASE("cli validate-rut passes at a modest sample count") {
  std::string console;
  CHECK(run({"validate-rut", "--samples", "20000", "--seed", "3"},
            &console) == 0);
  CHECK(console.find("all Monte Carlo checks passed") != std::string::npos);
}

TEST_CASE("cli sweep") {
  TempDir dir;
  const auto train_data = dir.file("train.txt");
  const auto test_data = dir.file("test.txt");
  REQUIRE(run({"synth", "--queries", "8", "--items", "5", "--dim", "3",
               "--seed", "1", "--out", train_data}) == 0);
  REQUIRE(run({"synth", "--queries", "4", "--items", "5", "--dim", "3",
               "--seed", "2", "--out", test_data}) == 0);

  SECTION("grid rows carry metrics in [0,1], reruns identical") {
    std::string table1, table2;
    const std::vector<std::string> args{
        "sweep",        "--train",      train_data, "--test", test_data,
        "--K-grid",     "3",            "--p-hid-grid", "0,0.3,0.8",
        "--p-vis-grid", "0",            "--L", "2", "--max-epochs", "5",
        "--seed",       "6"};
    REQUIRE(run(args, &table1) == 0);
    REQUIRE(run(args, &table2) == 0);
    CHECK(table1 == table2);
    CHECK(count_lines(table1) == 4);  // header + three grid rows
    std::istringstream lines(table1);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
      std::istringstream cells(line);
      double k, pv, ph, m;
      cells >> k >> pv >> ph;
      while (cells >> m) {
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);
      }
    }
  }

  SECTION("a 1x1 grid reproduces a single train plus eval") {
    std::string table;
    REQUIRE(run({"sweep", "--train", train_data, "--test", test_data,
                 "--K-grid", "3", "--p-hid-grid", "0.3", "--p-vis-grid", "0",
                 "--L", "2", "--max-epochs", "5", "--seed", "6", "--metric",
                 "err"},
                &table) == 0);

    const auto model_path = dir.file("single.bin");
    REQUIRE(run({"train", "--train", train_data, "--model-out", model_path,
                 "--log-out", dir.file("single.log"), "--model", "highway",
                 "--K", "3", "--L", "2", "--p-hid", "0.3", "--max-epochs",
                 "5", "--seed", "6"}) == 0);
    std::string eval_out;
    REQUIRE(run({"eval", "--test", test_data, "--model", model_path,
                 "--stats", model_path + ".stats", "--metric", "err"},
                &eval_out) == 0);

    // the sweep table's err cell equals the standalone eval's err value
    const auto sweep_err = table.substr(table.rfind('\t') + 1);
    const auto eval_err = eval_out.substr(eval_out.rfind('\t') + 1);
    CHECK(sweep_err == eval_err);
  }
}
