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

#include "medfuse/metrics.hpp"

#include "json.hpp"
#include "medfuse/errors.hpp"

namespace medfuse {

namespace {

double ratio(long long num, long long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

MetricsReport compute_metrics(const BoolMatrix& pred, const BoolMatrix& truth) {
  require(!pred.empty() && pred.size() == truth.size(), "compute_metrics: need the same positive number of rows");
  const std::size_t labels = truth.front().size();
  require(labels > 0, "compute_metrics: no labels");
  MetricsReport r;
  r.samples = static_cast<long long>(pred.size());
  r.per_label.assign(labels, {});
  long long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i].size() == labels && truth[i].size() == labels, "compute_metrics: ragged label rows");
    for (std::size_t l = 0; l < labels; ++l) {
      auto& m = r.per_label[l];
      const bool p = pred[i][l], t = truth[i][l];
      m.tp += p && t;
      m.fp += p && !t;
      m.fn += !p && t;
      correct += p == t;
    }
  }
  long long total_support = 0;
  double weighted = 0.0;
  for (auto& m : r.per_label) {
    m.support = m.tp + m.fn;
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    r.precision += m.precision;
    r.recall += m.recall;
    r.f1_macro += m.f1;
    weighted += m.f1 * static_cast<double>(m.support);
    total_support += m.support;
  }
  const double n = static_cast<double>(labels);
  r.precision /= n;
  r.recall /= n;
  r.f1_macro /= n;
  r.f1_weighted = total_support == 0 ? 0.0 : weighted / static_cast<double>(total_support);
  r.accuracy = ratio(correct, r.samples * static_cast<long long>(labels));
  return r;
}

std::string metrics_to_json(const MetricsReport& r, const std::string& config_hash, std::uint64_t seed,
                            const std::string& split, double threshold) {
  nlohmann::ordered_json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1_macro"] = r.f1_macro;
  j["f1_weighted"] = r.f1_weighted;
  j["accuracy"] = r.accuracy;
  j["samples"] = r.samples;
  if (!split.empty()) j["split"] = split;
  j["threshold"] = threshold;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  auto& labels = j["per_label"] = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < r.per_label.size(); ++l) {
    const auto& m = r.per_label[l];
    labels.push_back({{"label", l}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                      {"support", m.support}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}});
  }
  return j.dump();
}

}  // namespace medfuse
