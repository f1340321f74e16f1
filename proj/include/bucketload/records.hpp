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

#pragma once

#include <cstdint>
#include <vector>

#include "bucketload/shapes.hpp"

namespace bucketload {

// What one data-parallel worker did during one synchronized step.
struct WorkerSlot {
  Bucket bucket;
  std::int64_t batch_size = 1;
  double time = 0.0;          // T_i, seconds
  std::int64_t load = 0;      // O_i = B * S^2
  std::int64_t tokens = 0;    // B * S
  double wait_sync = 0.0;     // T_sync - T_i

  friend bool operator==(const WorkerSlot&, const WorkerSlot&) = default;
};

// Invariants: t_sync == max(per_worker[i].time); every wait_sync >= 0 and at
// least one of them is exactly 0.
struct StepRecord {
  std::int64_t step = 0;
  std::vector<WorkerSlot> per_worker;
  double t_sync = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

}  // namespace bucketload
