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

// Synchronous data-parallel step simulator.
//
// Each step, N workers independently draw a bucket by weight, run the plan's
// batch for it under the ground-truth cost model with multiplicative jitter,
// and then wait at the barrier for the slowest worker:
//
//   T_sync = max_i T_i,   wait_i = T_sync - T_i
//
// Two policies are compared on common bucket draws; each policy has its own
// noise stream derived from the seed.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "bucketload/costfit.hpp"
#include "bucketload/error.hpp"
#include "bucketload/records.hpp"
#include "bucketload/scheduler.hpp"
#include "bucketload/shapes.hpp"

namespace bucketload {

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), stream};
  return Rng(seq);
}

struct ClusterConfig {
  std::int64_t num_workers = 16;
  // Ground truth: a = 2 s, and b chosen so B = 3, S = 48000 takes 62 s.
  CostModel cost{2.0, 60.0 / (3.0 * 48000.0 * 48000.0), 2.0, 1.0};
  double noise_sigma = 0.03;
  std::uint64_t seed = 42;
  std::int64_t steps = 500;

  void validate() const {
    if (num_workers < 1) fail(ErrorCode::kInvalidArgument, "num_workers must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      fail(ErrorCode::kInvalidArgument, "noise_sigma must be finite and >= 0");
    }
    if (steps < 1) fail(ErrorCode::kInvalidArgument, "steps must be >= 1");
    if (!std::isfinite(cost.a) || !std::isfinite(cost.b) || !std::isfinite(cost.p)) {
      fail(ErrorCode::kInvalidArgument, "cost model parameters must be finite");
    }
  }

  friend bool operator==(const ClusterConfig&, const ClusterConfig&) = default;
};

struct Assignment {
  Bucket bucket;
  std::int64_t batch_size = 1;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Validated weights plus a plan lookup, reusable across steps.
class BucketSampler {
 public:
  BucketSampler(std::vector<Bucket> catalog, std::span<const double> weights)
      : catalog_(std::move(catalog)) {
    if (catalog_.empty()) fail(ErrorCode::kEmptyCatalog, "cannot sample an empty catalog");
    if (weights.size() != catalog_.size()) {
      fail(ErrorCode::kInvalidArgument, "need one weight per bucket");
    }
    double sum = 0.0;
    for (const double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        fail(ErrorCode::kInvalidArgument, "weights must be finite and >= 0");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      fail(ErrorCode::kInvalidArgument, "weights must sum to 1 (got " + std::to_string(sum) + ")");
    }
    dist_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
  }

  const std::vector<Bucket>& catalog() const { return catalog_; }

  std::vector<std::size_t> draw(std::int64_t n, Rng& rng) {
    if (n < 1) fail(ErrorCode::kInvalidArgument, "need at least one worker");
    std::vector<std::size_t> out(static_cast<std::size_t>(n));
    for (auto& i : out) i = dist_(rng);
    return out;
  }

  /// Batch size per catalog bucket under `plan`, in catalog order.
  std::vector<std::int64_t> resolve(const BucketPlan& plan) const {
    std::vector<std::int64_t> out;
    out.reserve(catalog_.size());
    for (const auto& b : catalog_) {
      const PlanEntry* e = plan.find(b.shape);
      if (e == nullptr) {
        fail(ErrorCode::kPlanMismatch, "plan has no entry for shape " + to_string(b.shape));
      }
      if (e->bucket.seq_len != b.seq_len) {
        fail(ErrorCode::kPlanMismatch, "plan and catalog disagree on S for " + to_string(b.shape));
      }
      if (e->batch_size < 1) fail(ErrorCode::kPlanMismatch, "plan batch size must be >= 1");
      out.push_back(e->batch_size);
    }
    return out;
  }

  std::vector<Assignment> assign(std::span<const std::size_t> draws,
                                 std::span<const std::int64_t> batch_sizes) const {
    std::vector<Assignment> out;
    out.reserve(draws.size());
    for (const std::size_t i : draws) out.push_back({catalog_[i], batch_sizes[i]});
    return out;
  }

 private:
  std::vector<Bucket> catalog_;
  std::discrete_distribution<std::size_t> dist_;
};

inline std::vector<Assignment> sample_assignments(const std::vector<Bucket>& catalog,
                                                  std::span<const double> weights,
                                                  const BucketPlan& plan, std::int64_t n,
                                                  Rng& rng) {
  BucketSampler sampler(catalog, weights);
  const auto sizes = sampler.resolve(plan);
  const auto draws = sampler.draw(n, rng);
  return sampler.assign(draws, sizes);
}

/// One draw of the jitter factor max(0.01, 1 + N(0, sigma)). Always consumes
/// exactly one normal variate so noise streams stay aligned across sigma.
inline double jitter(double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z = normal(rng);
  return std::max(0.01, 1.0 + sigma * z);
}

inline StepRecord simulate_step(std::span<const Assignment> assignments,
                                const ClusterConfig& cfg, Rng& rng, std::int64_t step = 0) {
  if (assignments.empty()) fail(ErrorCode::kInvalidArgument, "no worker assignments");
  StepRecord rec;
  rec.step = step;
  rec.per_worker.reserve(assignments.size());
  double t_sync = -std::numeric_limits<double>::infinity();
  for (const auto& a : assignments) {
    WorkerSlot slot;
    slot.bucket = a.bucket;
    slot.batch_size = a.batch_size;
    slot.load = physical_load(a.batch_size, a.bucket.seq_len);
    slot.tokens = a.batch_size * a.bucket.seq_len;
    slot.time = cfg.cost.predict(a.batch_size, a.bucket.seq_len) * jitter(cfg.noise_sigma, rng);
    t_sync = std::max(t_sync, slot.time);
    rec.per_worker.push_back(slot);
  }
  rec.t_sync = t_sync;
  for (auto& slot : rec.per_worker) slot.wait_sync = t_sync - slot.time;
  return rec;
}

/// Imbalance ratio (max - min) / max.
inline double cv_step(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "cv_step needs at least one value");
  double lo = values[0], hi = values[0];
  for (const double v : values) {
    if (!(v >= 0.0)) fail(ErrorCode::kInvalidArgument, "cv_step values must be >= 0");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > 0.0)) fail(ErrorCode::kAllZero, "cv_step values are all zero");
  return (hi - lo) / hi;
}

/// Coefficient of variation in percent: 100 * population std / mean.
inline double compute_cv(std::span<const double> loads) {
  if (loads.empty()) fail(ErrorCode::kInvalidArgument, "compute_cv needs at least one value");
  double mean = 0.0;
  for (const double v : loads) mean += v;
  mean /= static_cast<double>(loads.size());
  if (!(mean > 0.0)) fail(ErrorCode::kZeroMean, "compute_cv needs a positive mean");
  double var = 0.0;
  for (const double v : loads) var += (v - mean) * (v - mean);
  var /= static_cast<double>(loads.size());
  return 100.0 * std::sqrt(var) / mean;
}

/// Latent units per second: B * latent_frames * (W / width) * (H / height) / T.
inline double throughput(std::int64_t batch, const MediaShape& shape,
                         const LatentGeometry& geom, double seconds) {
  if (!(seconds > 0.0)) fail(ErrorCode::kInvalidArgument, "step time must be > 0");
  if (batch < 1) fail(ErrorCode::kInvalidArgument, "batch must be >= 1");
  return static_cast<double>(batch) * static_cast<double>(visual_tokens(shape, geom)) / seconds;
}

struct StepMetrics {
  std::int64_t step = 0;
  double t_sync = 0.0;
  double cv_step = 0.0;         // (max - min) / max over T_i
  double compute_cv = 0.0;      // 100 * std / mean over O_i
  double tokens_per_sec = 0.0;  // sum B_i * S_i / T_sync
  double theta = 0.0;           // sum of latent units / T_sync
  double time_cv = 0.0;         // 100 * std / mean over T_i
  double load_cv_step = 0.0;    // (max - min) / max over O_i
  double tokens = 0.0;          // sum B_i * S_i
  double latent_units = 0.0;    // sum B_i * visual tokens

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

inline StepMetrics step_metrics(const StepRecord& rec, const LatentGeometry& geom) {
  std::vector<double> times, loads;
  double tokens = 0.0, latent = 0.0;
  for (const auto& s : rec.per_worker) {
    times.push_back(s.time);
    loads.push_back(static_cast<double>(s.load));
    tokens += static_cast<double>(s.tokens);
    latent += static_cast<double>(s.batch_size) *
              static_cast<double>(visual_tokens(s.bucket.shape, geom));
  }
  StepMetrics m;
  m.step = rec.step;
  m.t_sync = rec.t_sync;
  m.cv_step = cv_step(times);
  m.compute_cv = compute_cv(loads);
  m.tokens_per_sec = tokens / rec.t_sync;
  m.theta = latent / rec.t_sync;
  m.time_cv = compute_cv(times);
  m.load_cv_step = cv_step(loads);
  m.tokens = tokens;
  m.latent_units = latent;
  return m;
}

struct MetricsSeries {
  std::vector<StepMetrics> steps;
  double total_tokens = 0.0;
  double total_latent = 0.0;
  double total_time = 0.0;

  // Run-level rates divide totals, so they equal total work over total time.
  double tokens_per_sec() const { return total_tokens / total_time; }
  double theta() const { return total_latent / total_time; }

  double mean_cv_step() const { return mean_of(&StepMetrics::cv_step); }
  double mean_compute_cv() const { return mean_of(&StepMetrics::compute_cv); }
  double mean_time_cv() const { return mean_of(&StepMetrics::time_cv); }
  double mean_load_cv_step() const { return mean_of(&StepMetrics::load_cv_step); }

  void add(const StepRecord& rec, const LatentGeometry& geom) {
    const auto m = step_metrics(rec, geom);
    total_time += rec.t_sync;
    total_tokens += m.tokens;
    total_latent += m.latent_units;
    steps.push_back(m);
  }

  friend bool operator==(const MetricsSeries&, const MetricsSeries&) = default;

 private:
  double mean_of(double StepMetrics::*field) const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : steps) s += m.*field;
    return s / static_cast<double>(steps.size());
  }
};

// Closed-loop recalibration of policy B: every `every` steps the cost model
// is refit from B's accumulated per-worker trace and the dual-constraint plan
// is re-emitted with M_comp = (target_sync - a) / b.
struct RefitOptions {
  std::int64_t every = 0;  // 0 disables
  double target_sync = 0.0;
  double m_mem = 0.0;
  ExponentGrid grid{};
};

struct RefitEvent {
  std::int64_t step = 0;
  CostModel model;
  double m_comp = 0.0;
};

struct Experiment {
  std::vector<Bucket> catalog;
  std::vector<double> weights;
  BucketPlan plan_a;
  BucketPlan plan_b;
  ClusterConfig cluster;
  LatentGeometry geometry;
  RefitOptions refit;
};

struct PolicySummary {
  double tokens_per_sec = 0.0;
  double theta = 0.0;
  double mean_cv_step = 0.0;
  double mean_compute_cv = 0.0;
  double mean_time_cv = 0.0;
  double mean_load_cv_step = 0.0;
};

struct ExperimentSummary {
  PolicySummary a;
  PolicySummary b;
  // Relative change of B against A: (b - a) / a.
  double delta_tokens_per_sec = 0.0;
  double delta_theta = 0.0;
  double delta_cv_step = 0.0;
  double delta_compute_cv = 0.0;
};

struct ExperimentResult {
  MetricsSeries series_a;
  MetricsSeries series_b;
  std::vector<StepRecord> records_a;
  std::vector<StepRecord> records_b;
  std::vector<RefitEvent> refits;
  BucketPlan final_plan_b;
  ExperimentSummary summary;
};

namespace detail {

inline PolicySummary summarize(const MetricsSeries& s) {
  return {s.tokens_per_sec(), s.theta(),        s.mean_cv_step(),
          s.mean_compute_cv(), s.mean_time_cv(), s.mean_load_cv_step()};
}

inline double relative_delta(double a, double b) { return a == 0.0 ? 0.0 : (b - a) / a; }

}  // namespace detail

inline ExperimentResult run_experiment(const Experiment& ex) {
  ex.cluster.validate();
  BucketSampler sampler(ex.catalog, ex.weights);
  const auto sizes_a = sampler.resolve(ex.plan_a);
  auto sizes_b = sampler.resolve(ex.plan_b);

  ExperimentResult out;
  out.final_plan_b = ex.plan_b;
  Rng draws_rng = make_stream(ex.cluster.seed, 0);
  Rng noise_a = make_stream(ex.cluster.seed, 1);
  Rng noise_b = make_stream(ex.cluster.seed, 2);

  for (std::int64_t step = 0; step < ex.cluster.steps; ++step) {
    const auto draws = sampler.draw(ex.cluster.num_workers, draws_rng);
    auto rec_a = simulate_step(sampler.assign(draws, sizes_a), ex.cluster, noise_a, step);
    auto rec_b = simulate_step(sampler.assign(draws, sizes_b), ex.cluster, noise_b, step);
    out.series_a.add(rec_a, ex.geometry);
    out.series_b.add(rec_b, ex.geometry);
    out.records_a.push_back(std::move(rec_a));
    out.records_b.push_back(std::move(rec_b));

    if (ex.refit.every > 0 && (step + 1) % ex.refit.every == 0 && step + 1 < ex.cluster.steps) {
      // A trace that cannot be fit (too few distinct loads so far) leaves
      // the current plan in place.
      try {
        const auto trials = trials_from_records(out.records_b);
        const CostModel model = fit_cost_model(trials, ex.refit.grid);
        const double m_comp = derive_m_comp(model, ex.refit.target_sync);
        out.final_plan_b =
            emit_plan(ex.catalog, DualConstraint{ex.refit.m_mem, m_comp, model.p});
        sizes_b = sampler.resolve(out.final_plan_b);
        out.refits.push_back({step + 1, model, m_comp});
      } catch (const Error&) {
      }
    }
  }

  out.summary.a = detail::summarize(out.series_a);
  out.summary.b = detail::summarize(out.series_b);
  out.summary.delta_tokens_per_sec =
      detail::relative_delta(out.summary.a.tokens_per_sec, out.summary.b.tokens_per_sec);
  out.summary.delta_theta = detail::relative_delta(out.summary.a.theta, out.summary.b.theta);
  out.summary.delta_cv_step =
      detail::relative_delta(out.summary.a.mean_cv_step, out.summary.b.mean_cv_step);
  out.summary.delta_compute_cv =
      detail::relative_delta(out.summary.a.mean_compute_cv, out.summary.b.mean_compute_cv);
  return out;
}

// Reference long-tail workload: still images up to the 257-frame maximum at
// 640x640, weighted toward short clips.
inline std::vector<CatalogEntry> default_longtail_entries() {
  return {
      {{1, 640, 640}, 30},   {{17, 640, 640}, 25}, {{41, 640, 640}, 20},
      {{113, 640, 640}, 15}, {{233, 640, 640}, 7}, {{257, 640, 640}, 3},
  };
}

// Baseline token budget and memory bound shared by both default policies.
inline constexpr std::int64_t kDefaultTokenBudget = 288000;
inline constexpr double kDefaultTargetSync = 20.0;

/// Equal-token baseline (A) against the dual-constraint plan (B) on the
/// long-tail workload. B's compute bound comes from the cluster's own cost
/// model at the default target step time.
inline Experiment default_ab_experiment() {
  Experiment ex;
  ex.catalog = build_catalog(default_longtail_entries(), ex.geometry);
  ex.weights = count_weights(ex.catalog);
  ex.plan_a = emit_plan(ex.catalog, TokenBudget{kDefaultTokenBudget});
  ex.plan_b = emit_plan(
      ex.catalog, DualConstraint{static_cast<double>(kDefaultTokenBudget),
                                 derive_m_comp(ex.cluster.cost, kDefaultTargetSync),
                                 ex.cluster.cost.p});
  return ex;
}

}  // namespace bucketload
