/* Copyright 2026 The bucketload Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Independent backward reference for the modulation gradients: statistics in
// long double, compensated (Neumaier) sums over the token dimension.

#pragma once

#include <cmath>
#include <vector>

#include "bucketload/fused_adaln.hpp"

namespace bucketload::testing {

struct Neumaier {
  long double sum = 0.0L;
  long double comp = 0.0L;

  void add(long double v) {
    const long double t = sum + v;
    if (std::fabs(sum) >= std::fabs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return static_cast<double>(sum + comp); }
};

struct ModulationGrads {
  std::vector<double> dscale;
  std::vector<double> dshift;
};

inline ModulationGrads reference_modulation_grads(const adaln::Matrix& dy,
                                                  const adaln::AdalnInput& in) {
  const auto n_tokens = in.tokens();
  const auto dim = in.features();
  std::vector<long double> mu(n_tokens), rstd(n_tokens);
  for (std::int64_t n = 0; n < n_tokens; ++n) {
    long double s = 0.0L;
    for (std::int64_t d = 0; d < dim; ++d) s += in.x(n, d);
    mu[n] = s / dim;
    long double q = 0.0L;
    for (std::int64_t d = 0; d < dim; ++d) q += (in.x(n, d) - mu[n]) * (in.x(n, d) - mu[n]);
    rstd[n] = 1.0L / std::sqrt(q / dim + static_cast<long double>(in.epsilon));
  }
  ModulationGrads out{std::vector<double>(dim), std::vector<double>(dim)};
  for (std::int64_t d = 0; d < dim; ++d) {
    Neumaier sc, sh;
    for (std::int64_t n = 0; n < n_tokens; ++n) {
      sh.add(dy(n, d));
      sc.add(static_cast<long double>(dy(n, d)) * (in.x(n, d) - mu[n]) * rstd[n]);
    }
    out.dscale[d] = sc.value();
    out.dshift[d] = sh.value();
  }
  return out;
}

}  // namespace bucketload::testing
