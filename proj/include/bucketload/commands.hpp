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

// The benchmark -> fit -> plan -> simulate -> kernel-check pipeline as
// callable commands. tools/bucketload.cpp only parses flags into these
// option structs.

#pragma once

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bucketload/cluster_sim.hpp"
#include "bucketload/costfit.hpp"
#include "bucketload/error.hpp"
#include "bucketload/fused_adaln.hpp"
#include "bucketload/io.hpp"
#include "bucketload/scheduler.hpp"
#include "bucketload/shapes.hpp"

namespace bucketload::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitValidation = 2,
  kExitIo = 3,
  kExitCheckFailed = 4,
};

/// Runs `body`, translating library errors into exit-status classes.
template <typename F>
int run_guarded(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return error_class(e.code()) == ErrorClass::kIo ? kExitIo : kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

inline std::vector<Bucket> load_catalog(const std::string& path, const LatentGeometry& geom) {
  return build_catalog(io::catalog_entries_from_json(io::read_json(path)), geom);
}

inline LatentGeometry load_geometry(const std::optional<std::string>& path) {
  return path ? io::geometry_from_json(io::read_json(*path)) : LatentGeometry{};
}

// ---- benchmark --------------------------------------------------------------

struct BenchmarkOptions {
  std::string catalog;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::int64_t levels_short = 2;
  std::int64_t levels_long = 4;
  std::int64_t threshold = 20000;
};

/// Every worker runs the same (B, S) so the barrier time is the shape's
/// synchronized step time, free of assignment imbalance.
inline std::vector<Trial> benchmark_trials(const std::vector<Bucket>& catalog,
                                           const ClusterConfig& cluster,
                                           const BenchmarkOptions& o) {
  const auto sweep = generate_sweep(catalog, o.levels_short, o.levels_long, o.threshold);
  Rng rng = make_stream(cluster.seed, 3);
  std::vector<Trial> trials;
  for (const auto& req : sweep.trials) {
    const Assignment one{Bucket{{}, req.seq_len, 0}, req.batch};
    const std::vector<Assignment> all(static_cast<std::size_t>(cluster.num_workers), one);
    const auto rec = simulate_step(all, cluster, rng);
    trials.push_back({req.batch, req.seq_len, rec.t_sync, std::nullopt});
  }
  return trials;
}

inline int cmd_benchmark(const BenchmarkOptions& o, std::ostream& out) {
  auto cfg = io::simulation_config_from_json(io::read_json(o.config));
  if (o.seed) cfg.cluster.seed = *o.seed;
  const auto catalog = load_catalog(o.catalog, cfg.geometry);
  const auto trials = benchmark_trials(catalog, cfg.cluster, o);
  io::write_text(o.out, io::trace_to_jsonl(trials));

  const io::json options = {{"config", io::to_json(cfg)},
                            {"levels_short", o.levels_short},
                            {"levels_long", o.levels_long},
                            {"threshold", o.threshold}};
  io::write_manifests({"benchmark", {o.catalog, o.config}, {o.out}, cfg.cluster.seed,
                       io::config_digest("benchmark", options, {o.catalog, o.config})});
  out << "wrote " << trials.size() << " trials to " << o.out << "\n";
  return kExitOk;
}

// ---- fit --------------------------------------------------------------------

struct FitOptions {
  std::string trace;
  std::string out;
  ExponentGrid grid;
  bool verbose = false;
};

inline int cmd_fit(const FitOptions& o, std::ostream& out) {
  const auto trials = io::trace_from_jsonl(io::read_text(o.trace));
  const auto model = fit_cost_model(trials, o.grid);
  if (o.verbose) {
    for (const auto& f : fit_profile(trials, o.grid)) {
      char line[160];
      if (f.valid) {
        std::snprintf(line, sizeof(line), "p=%.2f a=%.6g b=%.6g r2=%.9f\n", f.p, f.a, f.b, f.r2);
      } else {
        std::snprintf(line, sizeof(line), "p=%.2f degenerate\n", f.p);
      }
      out << line;
    }
  }
  io::write_text(o.out, io::dump(io::to_json(model)));
  const io::json options = {
      {"p_min", o.grid.p_min}, {"p_max", o.grid.p_max}, {"p_step", o.grid.p_step}};
  io::write_manifests({"fit", {o.trace}, {o.out}, 0, io::config_digest("fit", options, {o.trace})});
  out << "fitted a=" << model.a << " b=" << model.b << " p=" << model.p << " r2=" << model.r2
      << "\n";
  return kExitOk;
}

// ---- plan -------------------------------------------------------------------

struct PlanOptions {
  std::string catalog;
  std::optional<std::string> geometry;
  std::optional<std::string> model;
  std::optional<std::string> config;  // {"m_mem","m_comp","p"} or {"token_budget"}
  std::optional<double> target_sync;
  std::optional<double> m_mem;
  std::optional<std::int64_t> token_budget;
  std::string out;
};

inline BatchPolicy resolve_policy(const PlanOptions& o) {
  if (o.token_budget) {
    TokenBudget t{*o.token_budget};
    t.validate();
    return t;
  }
  if (o.config) return io::policy_from_json(io::read_json(*o.config));
  if (!o.model || !o.target_sync || !o.m_mem) {
    fail(ErrorCode::kInvalidArgument,
         "plan needs --token-budget, --config, or --model with --target-sync and --m-mem");
  }
  const auto model = io::model_from_json(io::read_json(*o.model));
  return DualConstraint{*o.m_mem, derive_m_comp(model, *o.target_sync), model.p};
}

inline int cmd_plan(const PlanOptions& o, std::ostream& out) {
  const auto geom = load_geometry(o.geometry);
  const auto catalog = load_catalog(o.catalog, geom);
  const auto policy = resolve_policy(o);
  const auto plan = emit_plan(catalog, policy);
  io::write_text(o.out, io::dump(io::to_json(plan)));

  std::vector<std::string> inputs{o.catalog};
  for (const auto* p : {&o.geometry, &o.model, &o.config}) {
    if (*p) inputs.push_back(**p);
  }
  const io::json options = {{"policy", io::to_json(policy)}};
  io::write_manifests({"plan", inputs, {o.out}, 0, io::config_digest("plan", options, inputs)});
  if (const auto* d = std::get_if<DualConstraint>(&policy)) {
    out << "dual-constraint plan: m_mem=" << d->m_mem << " m_comp=" << d->m_comp
        << " p=" << d->p << "\n";
  } else {
    out << "equal-token plan: budget=" << std::get<TokenBudget>(policy).budget << "\n";
  }
  for (const auto& e : plan.entries) {
    out << "  S=" << e.bucket.seq_len << " B=" << e.batch_size
        << (e.binding ? " (" + std::string(to_string(*e.binding)) + ")" : std::string()) << "\n";
  }
  return kExitOk;
}

// ---- simulate ---------------------------------------------------------------

struct SimulateOptions {
  std::string catalog;
  std::string plan_a;
  std::string plan_b;
  std::string config;
  std::string out;                     // per-step CSV
  std::optional<std::string> summary;  // defaults to <out>.summary.json
  std::optional<std::string> trace_out;
  std::optional<std::uint64_t> seed;
  std::int64_t refit_every = 0;
  std::optional<double> target_sync;
  std::optional<double> m_mem;
};

inline Experiment load_experiment(const SimulateOptions& o) {
  auto cfg = io::simulation_config_from_json(io::read_json(o.config));
  if (o.seed) cfg.cluster.seed = *o.seed;
  Experiment ex;
  ex.catalog = load_catalog(o.catalog, cfg.geometry);
  ex.weights = cfg.weights ? *cfg.weights : count_weights(ex.catalog);
  ex.plan_a = io::plan_from_json(io::read_json(o.plan_a));
  ex.plan_b = io::plan_from_json(io::read_json(o.plan_b));
  ex.cluster = cfg.cluster;
  ex.geometry = cfg.geometry;
  if (o.refit_every > 0) {
    const auto target = o.target_sync ? o.target_sync : cfg.target_sync;
    const auto m_mem = o.m_mem ? o.m_mem : cfg.m_mem;
    if (!target || !m_mem) {
      fail(ErrorCode::kInvalidArgument, "--refit-every needs target_sync and m_mem");
    }
    ex.refit = {o.refit_every, *target, *m_mem, {}};
  }
  return ex;
}

inline int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  const auto ex = load_experiment(o);
  const auto result = run_experiment(ex);
  const std::string summary_path = o.summary ? *o.summary : o.out + ".summary.json";
  io::write_text(o.out, io::metrics_csv(result));
  io::write_text(summary_path, io::dump(io::to_json(result)));
  std::vector<std::string> outputs{o.out, summary_path};
  if (o.trace_out) {
    io::write_text(*o.trace_out, io::trace_to_jsonl(trials_from_records(result.records_b)));
    outputs.push_back(*o.trace_out);
  }
  const std::vector<std::string> inputs{o.catalog, o.plan_a, o.plan_b, o.config};
  const io::json options = {{"seed", ex.cluster.seed},
                            {"refit_every", ex.refit.every},
                            {"target_sync", ex.refit.target_sync},
                            {"m_mem", ex.refit.m_mem}};
  io::write_manifests({"simulate", inputs, outputs, ex.cluster.seed,
                       io::config_digest("simulate", options, inputs)});

  const auto& s = result.summary;
  char line[256];
  std::snprintf(line, sizeof(line),
                "tokens/sec A=%.1f B=%.1f (%+.1f%%)  compute_cv A=%.1f%% B=%.1f%%  "
                "cv_step A=%.3f B=%.3f\n",
                s.a.tokens_per_sec, s.b.tokens_per_sec, 100.0 * s.delta_tokens_per_sec,
                s.a.mean_compute_cv, s.b.mean_compute_cv, s.a.mean_cv_step, s.b.mean_cv_step);
  out << line;
  return kExitOk;
}

// ---- kernel-check -----------------------------------------------------------

struct KernelCheckOptions {
  std::string sizes = "8x16,64x128,512x256,4096x64";
  double tolerance = 1e-4;
  adaln::TileConfig tiles{};
  adaln::Accumulation accumulation = adaln::Accumulation::kDouble;
  std::uint64_t seed = 0;
  std::optional<std::string> out;
  std::int64_t mem_features = 5120;
  std::int64_t element_bytes = 2;
  std::int64_t stat_bytes = 4;
  std::vector<std::int64_t> mem_tokens{8192, 16384, 24576, 32768, 40960, 49152, 57344, 65536};
};

inline io::json kernel_check_report(const KernelCheckOptions& o) {
  adaln::GradcheckOptions g;
  g.tiles = o.tiles;
  g.accumulation = o.accumulation;
  g.seed = o.seed;
  const auto report = adaln::gradcheck(io::parse_sizes(o.sizes), o.tolerance, g);
  auto j = io::to_json(report);
  j["tolerance"] = o.tolerance;
  j["accumulation"] = o.accumulation == adaln::Accumulation::kSingle ? "single" : "double";
  j["memory"] = io::to_json(
      io::memory_table(o.mem_tokens, o.mem_features, o.element_bytes, o.stat_bytes));
  return j;
}

inline int cmd_kernel_check(const KernelCheckOptions& o, std::ostream& out) {
  if (!(o.tolerance > 0.0)) fail(ErrorCode::kInvalidArgument, "tolerance must be > 0");
  const auto report = kernel_check_report(o);
  const std::string text = io::dump(report);
  if (o.out) {
    io::write_text(*o.out, text);
    const io::json options = {{"sizes", o.sizes},
                              {"tolerance", o.tolerance},
                              {"d_tile", o.tiles.d_tile},
                              {"n_tile", o.tiles.n_tile},
                              {"accumulation", report["accumulation"]}};
    io::write_manifests(
        {"kernel-check", {}, {*o.out}, o.seed, io::config_digest("kernel-check", options, {})});
  } else {
    out << text;
  }
  const bool pass = report["pass"].get<bool>();
  out << (pass ? "kernel-check: pass\n" : "kernel-check: FAIL\n");
  return pass ? kExitOk : kExitCheckFailed;
}

}  // namespace bucketload::cli
