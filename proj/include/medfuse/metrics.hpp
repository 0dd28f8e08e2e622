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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace medfuse {

using BoolMatrix = std::vector<std::vector<bool>>;  // samples x labels

struct LabelMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;  // true positives + false negatives
  long long tp = 0, fp = 0, fn = 0;
};

/// Precision and recall are macro means over labels, accuracy is the Hamming
/// (cell-wise) accuracy. 0/0 counts as 0 throughout.
struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  double accuracy = 0.0;
  long long samples = 0;
  std::vector<LabelMetrics> per_label;
};

/// Throws ContractViolation on a shape mismatch or an empty input.
MetricsReport compute_metrics(const BoolMatrix& pred, const BoolMatrix& truth);

/// One JSON object on a single line.
std::string metrics_to_json(const MetricsReport& report, const std::string& config_hash, std::uint64_t seed,
                            const std::string& split = {}, double threshold = 0.5);

}  // namespace medfuse
