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

// Benchmark sweep planning and the step-time cost model
//
//   step_time_sync ~= a + b * B * S^p
//
// For a fixed exponent the model is linear in (a, b), so each grid exponent
// gets a closed-form least-squares fit and the exponent with the highest R^2
// wins.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bucketload/error.hpp"
#include "bucketload/records.hpp"
#include "bucketload/shapes.hpp"

namespace bucketload {

struct Trial {
  std::int64_t batch = 1;
  std::int64_t seq_len = 1;
  double step_time_sync = 0.0;
  std::optional<std::int64_t> worker;

  friend bool operator==(const Trial&, const Trial&) = default;
};

struct CostModel {
  double a = 0.0;
  double b = 0.0;
  double p = 2.0;
  double r2 = 1.0;

  double predict(std::int64_t batch, std::int64_t seq_len) const {
    return a + b * static_cast<double>(batch) * std::pow(static_cast<double>(seq_len), p);
  }

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

struct ExponentGrid {
  double p_min = 1.6;
  double p_max = 2.4;
  double p_step = 0.05;

  // Grid points are p_min + i * p_step, snapped to 1e-9 so that 2.0 is
  // exactly representable as a grid value.
  std::vector<double> values() const {
    if (!(p_step > 0.0) || !(p_min > 0.0) || !(p_max >= p_min)) {
      fail(ErrorCode::kInvalidArgument, "exponent grid needs 0 < p_min <= p_max, p_step > 0");
    }
    const auto count = static_cast<std::int64_t>(std::floor((p_max - p_min) / p_step + 1e-9)) + 1;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      out.push_back(std::round((p_min + static_cast<double>(i) * p_step) * 1e9) / 1e9);
    }
    return out;
  }
};

struct SweepRequest {
  std::int64_t batch = 1;
  std::int64_t seq_len = 1;

  friend bool operator==(const SweepRequest&, const SweepRequest&) = default;
};

struct SweepPlan {
  std::vector<SweepRequest> trials;
  std::int64_t long_seq_threshold = 20000;
};

/// Long buckets (S >= threshold) are probed at more batch levels than
/// short ones since that is where the cost curve bends.
inline SweepPlan generate_sweep(const std::vector<Bucket>& catalog,
                                std::int64_t batch_levels_short = 2,
                                std::int64_t batch_levels_long = 4,
                                std::int64_t threshold = 20000) {
  if (catalog.empty()) fail(ErrorCode::kEmptyCatalog, "cannot sweep an empty catalog");
  if (batch_levels_short < 1 || batch_levels_long < batch_levels_short) {
    fail(ErrorCode::kInvalidArgument, "need batch_levels_long >= batch_levels_short >= 1");
  }
  std::vector<std::int64_t> lengths;
  lengths.reserve(catalog.size());
  for (const auto& b : catalog) lengths.push_back(b.seq_len);
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  SweepPlan plan;
  plan.long_seq_threshold = threshold;
  for (const std::int64_t s : lengths) {
    const std::int64_t levels = s >= threshold ? batch_levels_long : batch_levels_short;
    for (std::int64_t b = 1; b <= levels; ++b) plan.trials.push_back({b, s});
  }
  return plan;
}

namespace detail {

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double centered_sum_sq(std::span<const double> v, double m) {
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s;
}

}  // namespace detail

inline double r_squared(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size() || observed.empty()) {
    fail(ErrorCode::kInvalidArgument, "r_squared needs equal, non-empty inputs");
  }
  const double m = detail::mean(observed);
  const double ss_tot = detail::centered_sum_sq(observed, m);
  if (!(ss_tot > 0.0)) fail(ErrorCode::kZeroVariance, "observed values have zero variance");
  double ss_res = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double r = observed[i] - predicted[i];
    ss_res += r * r;
  }
  return 1.0 - ss_res / ss_tot;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "pearson needs two equal-length series of size >= 2");
  }
  const double mx = detail::mean(x);
  const double my = detail::mean(y);
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  const double sxx = detail::centered_sum_sq(x, mx);
  const double syy = detail::centered_sum_sq(y, my);
  if (!(sxx > 0.0) || !(syy > 0.0)) fail(ErrorCode::kZeroVariance, "series has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// One row of the exponent search.
struct GridFit {
  double p = 0.0;
  double a = 0.0;
  double b = 0.0;
  double r2 = 0.0;
  bool valid = false;  // false when B * S^p has no spread at this p
};

inline std::vector<GridFit> fit_profile(std::span<const Trial> trials,
                                        const ExponentGrid& grid = {}) {
  if (trials.size() < 3) {
    fail(ErrorCode::kInsufficientData,
         "need at least 3 trials, got " + std::to_string(trials.size()));
  }
  std::vector<double> y;
  y.reserve(trials.size());
  for (const auto& t : trials) {
    if (t.batch < 1 || t.seq_len < 1) fail(ErrorCode::kInvalidArgument, "trial has B or S < 1");
    if (!(std::isfinite(t.step_time_sync) && t.step_time_sync > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "trial step_time_sync must be finite and > 0");
    }
    y.push_back(t.step_time_sync);
  }
  const double my = detail::mean(y);
  const double syy = detail::centered_sum_sq(y, my);
  if (!(syy > 0.0)) fail(ErrorCode::kDegenerateFit, "all step times are equal; R^2 is undefined");

  std::vector<GridFit> out;
  std::vector<double> x(trials.size());
  for (const double p : grid.values()) {
    for (std::size_t i = 0; i < trials.size(); ++i) {
      x[i] = static_cast<double>(trials[i].batch) *
             std::pow(static_cast<double>(trials[i].seq_len), p);
    }
    const double mx = detail::mean(x);
    const double sxx = detail::centered_sum_sq(x, mx);
    GridFit fit;
    fit.p = p;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    if (*lo != *hi && sxx > 0.0 && std::isfinite(sxx)) {
      double sxy = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
      fit.b = sxy / sxx;
      fit.a = my - fit.b * mx;
      double ss_res = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (fit.a + fit.b * x[i]);
        ss_res += r * r;
      }
      fit.r2 = 1.0 - ss_res / syy;
      fit.valid = true;
    }
    out.push_back(fit);
  }
  return out;
}

/// Best grid exponent by R^2; ties go to the smaller exponent. The slope is
/// not clamped, so a pathological trace can yield b <= 0 (derive_m_comp
/// rejects it).
inline CostModel fit_cost_model(std::span<const Trial> trials, const ExponentGrid& grid = {}) {
  const auto profile = fit_profile(trials, grid);
  const GridFit* best = nullptr;
  for (const auto& f : profile) {
    if (f.valid && (best == nullptr || f.r2 > best->r2)) best = &f;
  }
  if (best == nullptr) {
    fail(ErrorCode::kInsufficientData, "B * S^p takes a single value for every grid exponent");
  }
  return CostModel{best->a, best->b, best->p, best->r2};
}

/// Compute-load bound that keeps a + b * load at the target step time.
inline double derive_m_comp(const CostModel& model, double target_sync) {
  if (!(target_sync > model.a)) {
    fail(ErrorCode::kTargetBelowOverhead, "target_sync " + std::to_string(target_sync) +
                                              " s does not exceed fixed overhead a = " +
                                              std::to_string(model.a) + " s");
  }
  if (!(model.b > 0.0)) fail(ErrorCode::kZeroSlope, "cost model slope b must be > 0");
  return (target_sync - model.a) / model.b;
}

struct CorrelationReport {
  double corr_tokens = 0.0;  // step time vs B * S
  double corr_load = 0.0;    // step time vs B * S^p
};

inline CorrelationReport correlation_report(std::span<const Trial> trials, double p) {
  if (trials.size() < 3) fail(ErrorCode::kInsufficientData, "need at least 3 trials");
  std::vector<double> tokens, load, time;
  for (const auto& t : trials) {
    const auto s = static_cast<double>(t.seq_len);
    tokens.push_back(static_cast<double>(t.batch) * s);
    load.push_back(static_cast<double>(t.batch) * std::pow(s, p));
    time.push_back(t.step_time_sync);
  }
  return {pearson(tokens, time), pearson(load, time)};
}

/// Per-worker trials (B_i, S_i, T_i) from simulated steps. T_i is the
/// worker's own compute time, not the barrier time.
inline std::vector<Trial> trials_from_records(std::span<const StepRecord> records) {
  std::vector<Trial> out;
  for (const auto& r : records) {
    for (std::size_t w = 0; w < r.per_worker.size(); ++w) {
      const auto& slot = r.per_worker[w];
      out.push_back({slot.batch_size, slot.bucket.seq_len, slot.time,
                     static_cast<std::int64_t>(w)});
    }
  }
  return out;
}

struct WorkerWaitStats {
  double mean_wait = 0.0;
  double straggler_fraction = 0.0;  // share of steps with wait_sync == 0
};

struct BucketStragglerShare {
  MediaShape shape;
  std::int64_t seq_len = 0;
  double fraction = 0.0;  // share of steps where a straggler held this bucket
};

struct BottleneckReport {
  std::int64_t steps = 0;
  std::vector<WorkerWaitStats> workers;
  std::vector<BucketStragglerShare> buckets;  // ascending seq_len
  double suggested_m_comp = 0.0;
};

inline BottleneckReport analyze_bottleneck(std::span<const StepRecord> records,
                                           const CostModel& model, double target_sync) {
  if (records.empty()) fail(ErrorCode::kEmptyRecords, "no step records to analyze");
  const std::size_t n = records.front().per_worker.size();
  BottleneckReport report;
  report.steps = static_cast<std::int64_t>(records.size());
  report.workers.resize(n);

  std::map<std::pair<std::int64_t, MediaShape>, std::int64_t> held;
  for (const auto& r : records) {
    if (r.per_worker.size() != n) {
      fail(ErrorCode::kShapeMismatch, "worker count changes between step records");
    }
    std::vector<std::pair<std::int64_t, MediaShape>> seen;
    for (std::size_t w = 0; w < n; ++w) {
      const auto& slot = r.per_worker[w];
      report.workers[w].mean_wait += slot.wait_sync;
      if (slot.wait_sync == 0.0) {
        report.workers[w].straggler_fraction += 1.0;
        const std::pair key{slot.bucket.seq_len, slot.bucket.shape};
        if (std::find(seen.begin(), seen.end(), key) == seen.end()) seen.push_back(key);
      }
    }
    for (const auto& key : seen) ++held[key];
  }
  const auto steps = static_cast<double>(records.size());
  for (auto& w : report.workers) {
    w.mean_wait /= steps;
    w.straggler_fraction /= steps;
  }
  for (const auto& [key, count] : held) {
    report.buckets.push_back({key.second, key.first, static_cast<double>(count) / steps});
  }
  report.suggested_m_comp = derive_m_comp(model, target_sync);
  return report;
}

}  // namespace bucketload
