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

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bucketload/commands.hpp"

namespace cli = bucketload::cli;

namespace {

template <typename T>
void optional_flag(CLI::App* app, const std::string& name, std::optional<T>& target,
                   const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bucket batch sizing, cost-model fitting, cluster simulation and fused "
               "AdaLN checks"};
  app.require_subcommand(1);

  cli::BenchmarkOptions bench;
  auto* b = app.add_subcommand("benchmark", "sweep bucket shapes against the simulated cluster");
  b->add_option("--catalog", bench.catalog, "catalog JSON")->required();
  b->add_option("--config", bench.config, "cluster config JSON")->required();
  b->add_option("--out", bench.out, "trace JSONL to write")->required();
  optional_flag(b, "--seed", bench.seed, "override the config seed");
  b->add_option("--levels-short", bench.levels_short, "batch levels for short buckets");
  b->add_option("--levels-long", bench.levels_long, "batch levels for long buckets");
  b->add_option("--long-threshold", bench.threshold, "S at which a bucket counts as long");

  cli::FitOptions fit;
  auto* f = app.add_subcommand("fit", "fit step_time ~ a + b * B * S^p from a trace");
  f->add_option("--trace", fit.trace, "trace JSONL")->required();
  f->add_option("--out", fit.out, "model JSON to write")->required();
  f->add_option("--p-min", fit.grid.p_min, "smallest exponent");
  f->add_option("--p-max", fit.grid.p_max, "largest exponent");
  f->add_option("--p-step", fit.grid.p_step, "exponent grid step");
  f->add_flag("-v,--verbose", fit.verbose, "print the R^2 profile over the grid");

  cli::PlanOptions plan;
  auto* p = app.add_subcommand("plan", "emit per-bucket batch sizes");
  p->add_option("--catalog", plan.catalog, "catalog JSON")->required();
  p->add_option("--out", plan.out, "plan JSON to write")->required();
  optional_flag(p, "--geometry", plan.geometry, "latent geometry JSON");
  optional_flag(p, "--model", plan.model, "fitted cost model JSON");
  optional_flag(p, "--config", plan.config, "policy JSON: {m_mem, m_comp, p} or {token_budget}");
  optional_flag(p, "--target-sync", plan.target_sync, "target synchronized step time (s)");
  optional_flag(p, "--m-mem", plan.m_mem, "memory bound in tokens per batch");
  optional_flag(p, "--token-budget", plan.token_budget, "emit the equal-token baseline instead");

  cli::SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "A/B-compare two plans on the simulated cluster");
  s->add_option("--catalog", sim.catalog, "catalog JSON")->required();
  s->add_option("--plan-a", sim.plan_a, "baseline plan JSON")->required();
  s->add_option("--plan-b", sim.plan_b, "candidate plan JSON")->required();
  s->add_option("--config", sim.config, "cluster config JSON")->required();
  s->add_option("--out", sim.out, "per-step metrics CSV to write")->required();
  optional_flag(s, "--summary", sim.summary, "summary JSON (default <out>.summary.json)");
  optional_flag(s, "--trace-out", sim.trace_out, "per-worker trace of plan B as JSONL");
  optional_flag(s, "--seed", sim.seed, "override the config seed");
  s->add_option("--refit-every", sim.refit_every, "refit and re-plan B every K steps (0 = off)");
  optional_flag(s, "--target-sync", sim.target_sync, "target step time for refits");
  optional_flag(s, "--m-mem", sim.m_mem, "memory bound for refits");

  cli::KernelCheckOptions kc;
  std::string accumulation = "double";
  auto* k = app.add_subcommand("kernel-check", "gradcheck the fused AdaLN reference operator");
  k->add_option("--sizes", kc.sizes, "comma-separated NxD problem sizes");
  k->add_option("--tolerance", kc.tolerance, "max relative error");
  k->add_option("--d-tile", kc.tiles.d_tile, "features per tile");
  k->add_option("--n-tile", kc.tiles.n_tile, "tokens per tile");
  k->add_option("--accumulation", accumulation, "double or single")
      ->check(CLI::IsMember({"double", "single"}));
  k->add_option("--seed", kc.seed, "problem seed");
  optional_flag(k, "--out", kc.out, "report JSON to write (default stdout)");
  k->add_option("--mem-d", kc.mem_features, "hidden width for the memory table");
  k->add_option("--element-bytes", kc.element_bytes, "bytes per activation element");
  k->add_option("--stat-bytes", kc.stat_bytes, "bytes per cached statistic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitValidation;
  }

  return cli::run_guarded(
      [&]() -> int {
        if (*b) return cli::cmd_benchmark(bench, std::cout);
        if (*f) return cli::cmd_fit(fit, std::cout);
        if (*p) return cli::cmd_plan(plan, std::cout);
        if (*s) return cli::cmd_simulate(sim, std::cout);
        kc.accumulation = accumulation == "single" ? bucketload::adaln::Accumulation::kSingle
                                                   : bucketload::adaln::Accumulation::kDouble;
        return cli::cmd_kernel_check(kc, std::cout);
      },
      std::cerr);
}
