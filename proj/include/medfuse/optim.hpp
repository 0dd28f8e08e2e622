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

#include <vector>

#include "medfuse/autodiff.hpp"

namespace medfuse {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
};

/// Adam with bias correction. After each step every parameter is rounded to
/// single precision, so parameters stored as f32 in a checkpoint reload
/// exactly and a resumed run continues bit-identically.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update using the gradients recorded in `graph`.
  void step(const std::vector<ad::Matrix*>& params, const ad::Graph& graph);
  void step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads);

  const AdamConfig& config() const { return config_; }
  long long steps() const { return t_; }
  const std::vector<ad::Matrix>& first_moments() const { return m_; }
  const std::vector<ad::Matrix>& second_moments() const { return v_; }

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  void restore(long long steps, std::vector<ad::Matrix> m, std::vector<ad::Matrix> v);

 private:
  AdamConfig config_;
  long long t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

/// Rounds every entry to the nearest float.
void round_to_float(ad::Matrix& m);

}  // namespace medfuse
