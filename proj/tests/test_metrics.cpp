// Copyright 2026 The medfuse Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>

#include "json.hpp"
#include "medfuse/errors.hpp"
#include "medfuse/metrics.hpp"
#include "medfuse/rng.hpp"

namespace medfuse {
namespace {

BoolMatrix random_bools(int n, int l, double p, Rng& rng) {
  BoolMatrix m(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(l)));
  for (auto& row : m)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = rng.bernoulli(p);
  return m;
}

struct Oracle {
  double precision, recall, f1_macro, f1_weighted, accuracy;
};

// Textbook definitions, one label column at a time.
Oracle loop_oracle(const BoolMatrix& pred, const BoolMatrix& truth) {
  const std::size_t n = pred.size(), l = pred[0].size();
  double p_sum = 0, r_sum = 0, f_sum = 0, fw_sum = 0, support_sum = 0, correct = 0;
  for (std::size_t j = 0; j < l; ++j) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pred[i][j] && truth[i][j]) tp += 1;
      if (pred[i][j] && !truth[i][j]) fp += 1;
      if (!pred[i][j] && truth[i][j]) fn += 1;
      if (pred[i][j] == truth[i][j]) correct += 1;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    p_sum += p;
    r_sum += r;
    f_sum += f;
    fw_sum += f * (tp + fn);
    support_sum += tp + fn;
  }
  const double L = static_cast<double>(l);
  return {p_sum / L, r_sum / L, f_sum / L, support_sum > 0 ? fw_sum / support_sum : 0.0,
          correct / (static_cast<double>(n) * L)};
}

TEST(Metrics, TextbookConfusionCounts) {
  const BoolMatrix pred = {{true}, {true}}, truth = {{true}, {false}};
  const auto m = compute_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(m.precision, 0.5);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.f1_macro, 2.0 / 3.0);
  EXPECT_EQ(m.per_label[0].tp, 1);
  EXPECT_EQ(m.per_label[0].fp, 1);
  EXPECT_EQ(m.per_label[0].fn, 0);
}

TEST(Metrics, EmptyLabelCountsAsZeroInMacroMean) {
  const BoolMatrix pred = {{true, false}, {false, false}}, truth = {{true, false}, {false, false}};
  const auto m = compute_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(m.per_label[1].f1, 0.0);
  EXPECT_DOUBLE_EQ(m.per_label[0].f1, 1.0);
  EXPECT_DOUBLE_EQ(m.f1_macro, 0.5);
  EXPECT_DOUBLE_EQ(m.f1_weighted, 1.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
}

TEST(Metrics, PerfectAndComplementPredictions) {
  Rng rng(1);
  auto truth = random_bools(30, 6, 0.4, rng);
  for (std::size_t j = 0; j < 6; ++j) truth[j][j] = true;  // every label has support
  const auto perfect = compute_metrics(truth, truth);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1_macro, 1.0);
  EXPECT_EQ(perfect.f1_weighted, 1.0);
  EXPECT_EQ(perfect.accuracy, 1.0);
  BoolMatrix flipped = truth;
  for (auto& row : flipped) row.flip();
  const auto miss = compute_metrics(flipped, truth);
  EXPECT_EQ(miss.precision, 0.0);
  EXPECT_EQ(miss.recall, 0.0);
  EXPECT_EQ(miss.f1_macro, 0.0);
  EXPECT_EQ(miss.accuracy, 0.0);
}

TEST(Metrics, MatchesLoopOracleOnRandomInstances) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(rng.below(20)), l = 1 + static_cast<int>(rng.below(10));
    const auto pred = random_bools(n, l, rng.uniform(), rng), truth = random_bools(n, l, rng.uniform(), rng);
    const auto m = compute_metrics(pred, truth);
    const auto o = loop_oracle(pred, truth);
    EXPECT_NEAR(m.precision, o.precision, 1e-12);
    EXPECT_NEAR(m.recall, o.recall, 1e-12);
    EXPECT_NEAR(m.f1_macro, o.f1_macro, 1e-12);
    EXPECT_NEAR(m.f1_weighted, o.f1_weighted, 1e-12);
    EXPECT_NEAR(m.accuracy, o.accuracy, 1e-12);
  }
}

TEST(Metrics, BoundsSupportsAndColumnPermutation) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto pred = random_bools(20, 10, 0.5, rng), truth = random_bools(20, 10, 0.3, rng);
    const auto m = compute_metrics(pred, truth);
    long long supports = 0, positives = 0;
    for (const auto& lm : m.per_label) supports += lm.support;
    for (const auto& row : truth) positives += std::count(row.begin(), row.end(), true);
    EXPECT_EQ(supports, positives);
    for (double v : {m.precision, m.recall, m.f1_macro, m.f1_weighted, m.accuracy}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[i] = i;
    rng.shuffle(perm);
    BoolMatrix pp = pred, tp = truth;
    for (std::size_t i = 0; i < pred.size(); ++i)
      for (int j = 0; j < 10; ++j) {
        pp[i][j] = pred[i][perm[j]];
        tp[i][j] = truth[i][perm[j]];
      }
    const auto mp = compute_metrics(pp, tp);
    EXPECT_NEAR(mp.f1_macro, m.f1_macro, 1e-12);
    EXPECT_NEAR(mp.f1_weighted, m.f1_weighted, 1e-12);
    EXPECT_NEAR(mp.accuracy, m.accuracy, 1e-12);
  }
}

TEST(Metrics, WeightedEqualsMacroForEqualSupports) {
  Rng rng(4);
  BoolMatrix truth(8, std::vector<bool>(4, false));
  for (int j = 0; j < 4; ++j) {
    truth[2 * j][j] = true;
    truth[2 * j + 1][j] = true;
  }
  const auto pred = random_bools(8, 4, 0.5, rng);
  const auto m = compute_metrics(pred, truth);
  EXPECT_NEAR(m.f1_weighted, m.f1_macro, 1e-12);
}

TEST(Metrics, ShapeMismatchIsAContractViolation) {
  EXPECT_THROW(compute_metrics({{true}}, {{true}, {false}}), ContractViolation);
  EXPECT_THROW(compute_metrics({{true, false}}, {{true}}), ContractViolation);
  EXPECT_THROW(compute_metrics({}, {}), ContractViolation);
}

TEST(Metrics, JsonReportIsOneWellFormedLine) {
  const auto m = compute_metrics({{true, false}, {false, true}}, {{true, true}, {false, true}});
  const std::string text = metrics_to_json(m, "abc123", 7, "validation", 0.5);
  EXPECT_EQ(text.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(text);
  const std::vector<std::pair<std::string, double>> expected = {
      {"precision", m.precision}, {"recall", m.recall},       {"f1_macro", m.f1_macro},
      {"f1_weighted", m.f1_weighted}, {"accuracy", m.accuracy}};
  for (const auto& [key, value] : expected) {
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_DOUBLE_EQ(j[key].get<double>(), value);
  }
  EXPECT_EQ(j["config_hash"], "abc123");
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["per_label"].size(), 2u);
}

}  // namespace
}  // namespace medfuse
