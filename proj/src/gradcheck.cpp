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

#include "medfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace medfuse {

GradCheckResult check_gradients(const NamedParams& params, const std::function<ad::Var(ad::Graph&)>& loss,
                                double eps, int per_array, double floor) {
  std::vector<ad::Matrix> analytic;
  {
    ad::Graph g;
    const ad::Var out = loss(g);
    g.backward(out);
    for (const auto& [name, m] : params) analytic.push_back(g.param_grad(*m));
  }
  auto evaluate = [&] {
    ad::Graph g(false);
    return g.scalar(loss(g));
  };

  GradCheckResult result;
  for (std::size_t a = 0; a < params.size(); ++a) {
    ad::Matrix& m = *params[a].second;
    const Eigen::Index n = m.size();
    const Eigen::Index stride = per_array > 0 ? std::max<Eigen::Index>(1, n / per_array) : 1;
    for (Eigen::Index k = 0; k < n; k += stride) {
      double& x = m.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate();
      x = saved - eps;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = analytic[a].data()[k];
      const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst = params[a].first + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

}  // namespace medfuse
