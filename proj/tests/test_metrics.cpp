#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "cbamnet/metrics.hpp"

using namespace cbamnet;

namespace {

// Fixture consistent with the published figures: rows = true class.
ConfusionMatrix paper_matrix() {
  ConfusionMatrix cm;
  cm.counts = {{539, 0, 1}, {8, 124, 2}, {31, 3, 310}};
  cm.class_names = {"healthy", "rot", "spot"};
  return cm;
}

}  // namespace

TEST_CASE("confusion_matrix: construction, trivial cases, range checks") {
  auto cm = confusion_matrix({0, 1, 2, 0}, {0, 1, 2, 0}, 3);
  CHECK(cm.trace() == 4);
  CHECK(cm.total() == 4);
  CHECK(accuracy(cm) == 1.0);

  auto empty = confusion_matrix({}, {}, 3);
  CHECK(empty.total() == 0);
  CHECK_THROWS_AS(accuracy(empty), ValueError);

  CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 0}, 3), ValueError);
  CHECK_THROWS_AS(confusion_matrix({0}, {0, 1}, 2), ValueError);

  auto off = confusion_matrix({0, 1}, {1, 0}, 2);
  CHECK(accuracy(off) == 0.0);
}

TEST_CASE("paper fixture: accuracy 973/1018 = 0.9558") {
  auto cm = paper_matrix();
  CHECK(cm.total() == 1018);
  CHECK(cm.trace() == 973);
  CHECK(accuracy(cm) == doctest::Approx(0.9558).epsilon(5e-5));
}

TEST_CASE("paper fixture: per-class and macro precision/recall/F1") {
  auto m = precision_recall_f1(paper_matrix());
  CHECK(m.precision[0] == doctest::Approx(0.93).epsilon(0.011));
  CHECK(m.recall[0] == doctest::Approx(1.00).epsilon(0.011));
  CHECK(m.precision[1] == doctest::Approx(0.98).epsilon(0.011));
  CHECK(m.recall[1] == doctest::Approx(0.92).epsilon(0.011));
  CHECK(m.precision[2] == doctest::Approx(0.99).epsilon(0.011));
  CHECK(m.recall[2] == doctest::Approx(0.90).epsilon(0.011));
  CHECK(m.macro_precision == doctest::Approx(0.97).epsilon(0.016));
  CHECK(m.macro_recall == doctest::Approx(0.94).epsilon(0.016));
  CHECK(m.macro_f1 == doctest::Approx(0.95).epsilon(0.016));
  CHECK(m.support == std::vector<std::int64_t>{540, 134, 344});
}

TEST_CASE("precision_recall_f1: diagonal matrix is perfect") {
  ConfusionMatrix cm;
  cm.counts = {{5, 0}, {0, 7}};
  cm.class_names = {"a", "b"};
  auto m = precision_recall_f1(cm);
  for (int c = 0; c < 2; ++c) {
    CHECK(m.precision[c] == 1.0);
    CHECK(m.recall[c] == 1.0);
    CHECK(m.f1[c] == 1.0);
  }
}

TEST_CASE("precision_recall_f1: brute-force recount on random matrices") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> count(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 3;
    std::vector<int> t, p;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int n = count(rng); n > 0; --n) {
          t.push_back(a);
          p.push_back(b);
        }
    if (t.empty()) continue;
    auto cm = confusion_matrix(t, p, k);
    auto m = precision_recall_f1(cm);
    // recount per sample
    std::int64_t correct = 0;
    for (size_t i = 0; i < t.size(); ++i) correct += t[i] == p[i];
    CHECK(m.accuracy ==
          doctest::Approx(static_cast<double>(correct) / t.size()));
    for (int c = 0; c < k; ++c) {
      std::int64_t tp = 0, row = 0, col = 0;
      for (size_t i = 0; i < t.size(); ++i) {
        tp += t[i] == c && p[i] == c;
        row += t[i] == c;
        col += p[i] == c;
      }
      CHECK(m.recall[c] ==
            doctest::Approx(row ? static_cast<double>(tp) / row : 0.0));
      CHECK(m.precision[c] ==
            doctest::Approx(col ? static_cast<double>(tp) / col : 0.0));
      // harmonic-mean bounds
      CHECK(m.f1[c] <= std::sqrt(m.precision[c] * m.recall[c]) + 1e-12);
      CHECK(m.f1[c] <= (m.precision[c] + m.recall[c]) / 2 + 1e-12);
    }
  }
}

TEST_CASE("metrics: relabeling equivariance under a class permutation") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> lab(0, 2);
  std::vector<int> t, p;
  for (int i = 0; i < 200; ++i) {
    t.push_back(lab(rng));
    p.push_back(lab(rng));
  }
  const int perm[3] = {2, 0, 1};
  std::vector<int> tp, pp;
  for (size_t i = 0; i < t.size(); ++i) {
    tp.push_back(perm[t[i]]);
    pp.push_back(perm[p[i]]);
  }
  auto m1 = precision_recall_f1(confusion_matrix(t, p, 3));
  auto m2 = precision_recall_f1(confusion_matrix(tp, pp, 3));
  for (int c = 0; c < 3; ++c) {
    CHECK(m1.precision[c] == doctest::Approx(m2.precision[perm[c]]));
    CHECK(m1.recall[c] == doctest::Approx(m2.recall[perm[c]]));
    CHECK(m1.f1[c] == doctest::Approx(m2.f1[perm[c]]));
  }
  CHECK(m1.accuracy == doctest::Approx(m2.accuracy));
  CHECK(m1.macro_f1 == doctest::Approx(m2.macro_f1));
}

TEST_CASE("roc_auc_ovr: hand case gives 8/9") {
  // positives score .9 .8 .4 on class 1; negatives .7 .3 .2
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  for (float s : {0.9f, 0.8f, 0.4f}) {
    rows.push_back({1 - s, s});
    labels.push_back(1);
  }
  for (float s : {0.7f, 0.3f, 0.2f}) {
    rows.push_back({1 - s, s});
    labels.push_back(0);
  }
  auto auc = roc_auc_ovr(rows, labels);
  REQUIRE(auc[0].has_value());
  REQUIRE(auc[1].has_value());
  CHECK(*auc[1] == doctest::Approx(8.0 / 9.0));
  CHECK(*auc[0] == doctest::Approx(8.0 / 9.0));  // mirrored scores
}

TEST_CASE("roc_auc_ovr: constants, perfect separation, absent classes") {
  std::vector<std::vector<float>> rows(6, {0.5f, 0.5f});
  std::vector<int> labels{0, 1, 0, 1, 0, 1};
  auto tied = roc_auc_ovr(rows, labels);
  CHECK(*tied[0] == doctest::Approx(0.5));
  CHECK(*tied[1] == doctest::Approx(0.5));

  rows = {{0.9f, 0.1f}, {0.8f, 0.2f}, {0.2f, 0.8f}, {0.1f, 0.9f}};
  labels = {0, 0, 1, 1};
  auto perfect = roc_auc_ovr(rows, labels);
  CHECK(*perfect[0] == doctest::Approx(1.0));
  CHECK(*perfect[1] == doctest::Approx(1.0));

  labels = {0, 0, 0, 0};  // class 1 has no positives
  auto absent = roc_auc_ovr(rows, labels);
  CHECK_FALSE(absent[1].has_value());
  CHECK_FALSE(absent[0].has_value());  // and class 0 has no negatives
}

TEST_CASE("roc_auc_ovr: invariant under strictly monotone transforms") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::uniform_int_distribution<int> lab(0, 1);
  std::vector<std::vector<float>> rows, warped;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    const float s = uni(rng);
    rows.push_back({1 - s, s});
    // monotone warp of both columns
    warped.push_back({std::exp(3.0f * (1 - s)), std::exp(3.0f * s)});
    labels.push_back(lab(rng));
  }
  auto a = roc_auc_ovr(rows, labels);
  auto b = roc_auc_ovr(warped, labels);
  CHECK(*a[0] == doctest::Approx(*b[0]));
  CHECK(*a[1] == doctest::Approx(*b[1]));
}

TEST_CASE("metrics_report_json: documented key set") {
  auto cm = paper_matrix();
  auto m = precision_recall_f1(cm);
  std::vector<std::optional<double>> auc{1.0, std::nullopt, 0.9};
  auto parsed = nlohmann::json::parse(metrics_report_json(cm, m, auc));
  CHECK(parsed.contains("accuracy"));
  CHECK(parsed.contains("confusion_matrix"));
  CHECK(parsed["confusion_matrix"].size() == 3);
  CHECK(parsed["per_class"].size() == 3);
  for (const auto& entry : parsed["per_class"]) {
    CHECK(entry.contains("name"));
    CHECK(entry.contains("precision"));
    CHECK(entry.contains("recall"));
    CHECK(entry.contains("f1"));
    CHECK(entry.contains("support"));
    CHECK(entry.contains("auc"));
  }
  CHECK(parsed["per_class"][1]["auc"].is_null());
  CHECK(parsed["macro"].contains("precision"));
  CHECK(parsed["macro"].contains("recall"));
  CHECK(parsed["macro"].contains("f1"));
  CHECK(parsed["accuracy"].get<double>() == doctest::Approx(973.0 / 1018.0));
}
