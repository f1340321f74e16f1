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

// Per-bucket batch sizing.
//
// The baseline holds B * S near a fixed token budget. The dual-constraint
// rule additionally caps the attention-dominated compute proxy B * S^p:
//
//   B = max(1, min(floor(M_mem / S), floor(M_comp / S^p)))
//
// Short buckets end up memory-bound and long buckets compute-bound.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bucketload/error.hpp"
#include "bucketload/shapes.hpp"

namespace bucketload {

struct DualConstraint {
  double m_mem = 0.0;   // tokens per batch
  double m_comp = 0.0;  // B * S^p units
  double p = 2.0;

  void validate() const {
    if (!(std::isfinite(m_mem) && m_mem > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "m_mem must be finite and > 0");
    }
    if (!(std::isfinite(m_comp) && m_comp > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "m_comp must be finite and > 0");
    }
    if (!(std::isfinite(p) && p > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "p must be finite and > 0");
    }
  }

  friend bool operator==(const DualConstraint&, const DualConstraint&) = default;
};

struct TokenBudget {
  std::int64_t budget = 0;

  void validate() const {
    if (budget < 1) fail(ErrorCode::kInvalidArgument, "token budget must be >= 1");
  }

  friend bool operator==(const TokenBudget&, const TokenBudget&) = default;
};

using BatchPolicy = std::variant<DualConstraint, TokenBudget>;

enum class Binding { kMemory, kCompute, kFloor };

inline std::string_view to_string(Binding b) {
  switch (b) {
    case Binding::kMemory: return "memory";
    case Binding::kCompute: return "compute";
    case Binding::kFloor: return "floor";
  }
  return "unknown";
}

inline Binding parse_binding(std::string_view s) {
  if (s == "memory") return Binding::kMemory;
  if (s == "compute") return Binding::kCompute;
  if (s == "floor") return Binding::kFloor;
  fail(ErrorCode::kParseError, "unknown binding '" + std::string(s) + "'");
}

struct BatchDecision {
  std::int64_t batch_size = 1;
  Binding binding = Binding::kFloor;

  friend bool operator==(const BatchDecision&, const BatchDecision&) = default;
};

namespace detail {

// Large enough for any realistic batch, small enough that B * S never
// overflows int64 for S < 2^31.
inline constexpr std::int64_t kBoundCap = std::int64_t{1} << 32;

// Largest integer q >= 0 with q * unit <= capacity, evaluated in double.
// The division alone can round up across an integer boundary, so the
// quotient is nudged until the multiplication agrees with it.
inline std::int64_t admissible_count(double capacity, double unit) {
  const double q = std::floor(capacity / unit);
  if (!(q < static_cast<double>(kBoundCap))) return kBoundCap;
  auto n = static_cast<std::int64_t>(q);
  while (n > 0 && static_cast<double>(n) * unit > capacity) --n;
  while (n < kBoundCap && static_cast<double>(n + 1) * unit <= capacity) ++n;
  return n;
}

inline std::int64_t memory_bound(double m_mem, std::int64_t seq_len) {
  if (m_mem == std::floor(m_mem) && m_mem < 9.0e18) {
    const auto tokens = static_cast<std::int64_t>(m_mem);
    return std::min(tokens / seq_len, kBoundCap);
  }
  return admissible_count(m_mem, static_cast<double>(seq_len));
}

}  // namespace detail

/// Ties between the two bounds are reported as compute-bound.
inline BatchDecision dual_constraint_batch(std::int64_t seq_len, const DualConstraint& c) {
  if (seq_len < 1) fail(ErrorCode::kInvalidArgument, "sequence length must be >= 1");
  c.validate();
  const std::int64_t mem = detail::memory_bound(c.m_mem, seq_len);
  const std::int64_t comp =
      detail::admissible_count(c.m_comp, std::pow(static_cast<double>(seq_len), c.p));
  const std::int64_t lo = std::min(mem, comp);
  if (lo < 1) return {1, Binding::kFloor};
  return {lo, mem < comp ? Binding::kMemory : Binding::kCompute};
}

inline std::int64_t equal_token_batch(std::int64_t seq_len, const TokenBudget& t) {
  if (seq_len < 1) fail(ErrorCode::kInvalidArgument, "sequence length must be >= 1");
  t.validate();
  return std::max<std::int64_t>(1, t.budget / seq_len);
}

/// Attention-dominated load B * S^2, exact in 64-bit integers.
inline std::int64_t physical_load(std::int64_t batch, std::int64_t seq_len) {
  if (batch < 1 || seq_len < 1) {
    fail(ErrorCode::kInvalidArgument, "batch and sequence length must be >= 1");
  }
  std::int64_t out = 0;
  if (__builtin_mul_overflow(seq_len, seq_len, &out) ||
      __builtin_mul_overflow(out, batch, &out)) {
    fail(ErrorCode::kOverflow, "B * S^2 overflows int64 for B=" + std::to_string(batch) +
                                   " S=" + std::to_string(seq_len));
  }
  return out;
}

struct PlanEntry {
  Bucket bucket;
  std::int64_t batch_size = 1;
  std::optional<Binding> binding;  // absent for token-budget plans

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct BucketPlan {
  std::vector<PlanEntry> entries;

  const PlanEntry* find(const MediaShape& shape) const {
    for (const auto& e : entries) {
      if (e.bucket.shape == shape) return &e;
    }
    return nullptr;
  }

  friend bool operator==(const BucketPlan&, const BucketPlan&) = default;
};

inline BucketPlan emit_plan(const std::vector<Bucket>& catalog, const BatchPolicy& policy) {
  if (catalog.empty()) fail(ErrorCode::kEmptyCatalog, "cannot plan an empty catalog");
  BucketPlan plan;
  plan.entries.reserve(catalog.size());
  for (const auto& bucket : catalog) {
    PlanEntry entry{bucket, 1, std::nullopt};
    if (const auto* dual = std::get_if<DualConstraint>(&policy)) {
      const auto d = dual_constraint_batch(bucket.seq_len, *dual);
      entry.batch_size = d.batch_size;
      entry.binding = d.binding;
    } else {
      entry.batch_size = equal_token_batch(bucket.seq_len, std::get<TokenBudget>(policy));
    }
    plan.entries.push_back(entry);
  }
  return plan;
}

}  // namespace bucketload
