#include <doctest.h>

#include <random>

#include "mtseg/error.hpp"
#include "mtseg/metrics.hpp"

using namespace mtseg;

namespace {

Mask mask_of(std::initializer_list<int> v) {
  Mask m(1, static_cast<int>(v.size()));
  std::size_t i = 0;
  for (int x : v) m.values[i++] = static_cast<std::uint8_t>(x);
  return m;
}

}  // namespace

TEST_CASE("confusion counts by enumeration") {
  const auto c = confusion(mask_of({1, 1, 0, 0}), mask_of({1, 0, 1, 0}));
  CHECK(c == ConfusionCounts{1, 1, 1, 1});
  const auto same = confusion(mask_of({1, 0, 1}), mask_of({1, 0, 1}));
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  CHECK(confusion(mask_of({0, 0, 0}), mask_of({0, 0, 0})).tn == 3);
  CHECK_THROWS_AS((void)confusion(mask_of({2, 0}), mask_of({1, 0})), ContractViolation);
  CHECK_THROWS_AS((void)confusion(mask_of({1, 0}), mask_of({1, 0, 0})), ContractViolation);
}

TEST_CASE("metric formulas on hand-evaluated counts") {
  const auto r = compute_metrics({1, 1, 1, 1});
  CHECK(r.dice == doctest::Approx(50));
  CHECK(r.miou == doctest::Approx(100.0 / 3.0));
  CHECK(r.accuracy == doctest::Approx(50));
  CHECK(r.precision == doctest::Approx(50));
  CHECK(r.recall == doctest::Approx(50));
  CHECK(r.specificity == doctest::Approx(50));
}

TEST_CASE("degenerate denominators") {
  const auto perfect = compute_metrics({5, 0, 20, 0});
  for (double v : perfect.values()) CHECK(v == 100.0);
  const auto empty = compute_metrics({0, 0, 10, 0});
  for (double v : empty.values()) CHECK(v == 100.0);
  const auto background_only = compute_metrics({0, 0, 90, 10});
  CHECK(background_only.recall == 0.0);
  CHECK(background_only.specificity == 100.0);
  CHECK(background_only.precision == 0.0);
  CHECK(background_only.dice == 0.0);
  CHECK_THROWS_AS((void)compute_metrics({}), ContractViolation);
}

TEST_CASE("metrics match a brute-force oracle and satisfy the identities") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Mask p(8, 8), g(8, 8);
    std::bernoulli_distribution bp(density(rng)), bg(density(rng));
    for (int i = 0; i < 64; ++i) {
      p.values[i] = bp(rng);
      g.values[i] = bg(rng);
    }
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) {
        const bool pp = p.at(r, c) == 1, gg = g.at(r, c) == 1;
        tp += pp && gg;
        fp += pp && !gg;
        tn += !pp && !gg;
        fn += !pp && gg;
      }
    const auto c = confusion(p, g);
    REQUIRE(c == ConfusionCounts{tp, fp, tn, fn});
    const auto r = compute_metrics(c);
    const double j = (tp + fp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp + fn);
    CHECK(r.dice / 100.0 == doctest::Approx(2 * j / (1 + j)).epsilon(1e-12));
    const double prevalence = static_cast<double>(tp + fn) / 64.0;
    if (tp + fn > 0 && tn + fp > 0)
      CHECK(r.accuracy / 100.0 ==
            doctest::Approx(r.recall / 100.0 * prevalence + r.specificity / 100.0 * (1 - prevalence)).epsilon(1e-12));
  }
}

TEST_CASE("high class imbalance decouples accuracy from Dice") {
  // 2% foreground, half of it found, as many false positives.
  const ConfusionCounts c{100, 100, 9700, 100};
  const auto r = compute_metrics(c);
  CHECK(r.accuracy > 97.9);
  CHECK(r.dice == doctest::Approx(50));
}

TEST_CASE("aggregation uses the sample standard deviation") {
  MetricsReport a, b;
  a.dice = 60;
  b.dice = 80;
  const auto agg = aggregate({a, b});
  CHECK(agg.mean.dice == 70);
  CHECK(agg.std.dice == doctest::Approx(14.1421356));
  CHECK(aggregate({a}).std.dice == 0.0);
  CHECK(aggregate({a, a, a}).std.dice == 0.0);
  CHECK_THROWS_AS((void)aggregate({}), ContractViolation);
}

TEST_CASE("table layout and per-run CSV round trip") {
  const auto rows = paper_reference_rows();
  const std::string csv = format_table_csv(rows);
  CHECK(csv.rfind("method,runs,Dice_mean,Dice_std,mIoU_mean,mIoU_std,Accuracy_mean,Accuracy_std,Precision_mean,"
                  "Precision_std,Recall_mean,Recall_std,Specificity_mean,Specificity_std,notes\n",
                  0) == 0);
  CHECK(csv.find("67.915,0.313") != std::string::npos);
  CHECK(csv.find("70.209,0.229") != std::string::npos);
  const std::string text = format_table_text(rows);
  CHECK(text.find("70.209 (0.229)") != std::string::npos);

  MetricsReport r{71.25, 55.5, 99.8, 64.125, 86.0, 99.85};
  CHECK(parse_report_csv(report_csv(r)) == r);
  CHECK_FALSE(parse_report_csv("Dice,mIoU\n1,2\n").has_value());
}
