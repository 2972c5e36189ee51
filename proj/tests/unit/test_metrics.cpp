#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "elimrank/metrics.hpp"
#include "elimrank/rng.hpp"

using namespace elimrank;

TEST_CASE("ndcg golden values") {
  CHECK(ndcg_at(std::vector<int>{4, 0}, 1) == 1.0);
  CHECK_THAT(ndcg_at(std::vector<int>{0, 4}, 2),
             Catch::Matchers::WithinAbs(1.0 / std::log2(3.0), 1e-6));
  CHECK(ndcg_at(std::vector<int>{0, 0, 0}, 5) == 0.0);
  CHECK_THROWS_AS(ndcg_at(std::vector<int>{1}, 0), ValidationError);
}

TEST_CASE("err golden values") {
  CHECK(err(std::vector<int>{4, 0}) == 0.9375);
  CHECK(err(std::vector<int>{0, 4}) == 0.46875);
  CHECK(err(std::vector<int>{0, 0}) == 0.0);
}

TEST_CASE("metric ranges and monotonicity") {
  Rng rng(5150);
  for (int round = 0; round < 200; ++round) {
    const std::size_t n = 2 + rng.bounded(5);
    std::vector<int> grades(n);
    for (auto& g : grades) g = static_cast<int>(rng.bounded(5));

    const std::size_t t = 1 + rng.bounded(n);
    const double nd = ndcg_at(grades, t);
    const double er = err(grades);
    CHECK((nd >= 0.0 && nd <= 1.0));
    CHECK((er >= 0.0 && er <= 1.0));

    // ideal ordering scores NDCG exactly 1 whenever any grade is positive
    std::vector<int> ideal = grades;
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    if (ideal.front() > 0) CHECK(ndcg_at(ideal, t) == 1.0);

    // moving a higher-graded item one slot up never hurts either metric
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (grades[i + 1] <= grades[i]) continue;
      std::vector<int> swapped = grades;
      std::swap(swapped[i], swapped[i + 1]);
      CHECK(ndcg_at(swapped, t) >= nd);
      CHECK(err(swapped) >= er);
    }
  }
}

TEST_CASE("err cascade discount bounds each contribution") {
  Rng rng(31337);
  for (int round = 0; round < 50; ++round) {
    const std::size_t n = 2 + rng.bounded(5);
    std::vector<int> grades(n);
    for (auto& g : grades) g = static_cast<int>(rng.bounded(5));
    double discount = 1.0;
    double prev_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> prefix(grades.begin(),
                              grades.begin() + static_cast<long>(i) + 1);
      const double contribution = err(prefix) - prev_total;
      CHECK(contribution <= discount + 1e-15);
      prev_total = err(prefix);
      discount *= 1.0 - grade_gain(grades[i]) / 16.0;
    }
  }
}

TEST_CASE("metric spec parsing") {
  const auto specs = parse_metric_list("ndcg@1,ndcg@5,err");
  REQUIRE(specs.size() == 3);
  CHECK(specs[0].name() == "ndcg@1");
  CHECK(specs[1].name() == "ndcg@5");
  CHECK(specs[2].name() == "err");
  CHECK_THROWS_AS(parse_metric("map"), ValidationError);
  CHECK_THROWS_AS(parse_metric("ndcg@0"), ValidationError);
  CHECK_THROWS_AS(parse_metric_list(""), ValidationError);
}

TEST_CASE("metric report serialization") {
  MetricReport report;
  report.metric_names = {"err"};
  report.averages["err"] = 0.5;
  report.per_query.emplace_back(
      "q1", std::map<std::string, double>{{"err", 0.5}});
  CHECK(report.to_table() == "metric\tmean\nerr\t0.5\n");
  CHECK(report.to_kv() == "mean.err 0.5\nquery.q1.err 0.5\n");
}
