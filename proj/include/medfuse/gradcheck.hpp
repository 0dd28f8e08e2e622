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

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "medfuse/autodiff.hpp"

namespace medfuse {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<array>[<index>]" of the largest error
};

using NamedParams = std::vector<std::pair<std::string, ad::Matrix*>>;

/// Compares the reverse-mode gradient of `loss` against central differences
/// for every entry of every array (or an evenly spaced subset of at most
/// `per_array` entries when it is positive). Relative error is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const NamedParams& params, const std::function<ad::Var(ad::Graph&)>& loss,
                                double eps = 1e-6, int per_array = 0, double floor = 1e-5);

/// Every array of a module with its visitation name.
template <class Module>
NamedParams named_params(Module& module, const std::string& prefix) {
  NamedParams out;
  visit_params(module, prefix, [&](const std::string& name, ad::Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

}  // namespace medfuse
