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

// Numerical self-checks exposed on the command line: the vCLUB estimate on
// correlated Gaussians with a known mutual information, and finite-difference
// gradient checks of the main losses.

#include <cstdint>
#include <string>
#include <vector>

#include "medfuse/gradcheck.hpp"

namespace medfuse {

struct MiBenchConfig {
  double rho = 0.0;
  int dim = 1;
  std::uint64_t seed = 0;
  int hidden = 64;
  int train_steps = 3000;
  int train_batch = 256;
  double learning_rate = 2e-3;
  int eval_batches = 100;
  int eval_batch = 64;  // N of each evaluation batch

  void validate() const;
};

struct MiBenchResult {
  double analytic = 0.0;        // -dim/2 * ln(1 - rho^2)
  double estimate = 0.0;        // mean vclub over the evaluation batches
  double estimate_sd = 0.0;     // spread across evaluation batches
  double estimator_ll = 0.0;    // mean log q(y|x) on the evaluation batches
  double true_ll = 0.0;         // E log p(y|x) under the true conditional
  double seconds = 0.0;
};

/// x ~ N(0, I), y = rho * x + sqrt(1 - rho^2) * e per dimension. Fits the
/// estimator by maximum likelihood on fresh batches, then averages vclub.
MiBenchResult run_mi_bench(const MiBenchConfig& config);

/// "focal", "vclub" or "forward".
const std::vector<std::string>& gradcheck_targets();

/// Double-precision check of one target on a fixed small configuration.
GradCheckResult run_gradcheck(const std::string& target, std::uint64_t seed = 1);

}  // namespace medfuse
