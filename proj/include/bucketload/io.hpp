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

// File formats: JSON catalogs, geometry, policies, plans, cost models and
// cluster configs; JSON-lines traces; CSV step metrics; run manifests.

#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bucketload/cluster_sim.hpp"
#include "bucketload/costfit.hpp"
#include "bucketload/error.hpp"
#include "bucketload/fused_adaln.hpp"
#include "bucketload/scheduler.hpp"
#include "bucketload/shapes.hpp"
#include "json.hpp"

namespace bucketload::io {

using nlohmann::json;

inline std::string read_text(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kFileNotFound, path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path);
  out << content;
  if (!out) fail(ErrorCode::kIoError, "short write to " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, what + ": " + e.what());
  }
}

inline json read_json(const std::string& path) { return parse_json(read_text(path), path); }

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    fail(ErrorCode::kParseError, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  return j.is_object() && j.contains(key) ? field<T>(j, key) : fallback;
}

// ---- shapes ---------------------------------------------------------------

inline json to_json(const std::vector<CatalogEntry>& entries) {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"frames", e.shape.frames},
                   {"height", e.shape.height},
                   {"width", e.shape.width},
                   {"count", e.count}});
  }
  return arr;
}

inline std::vector<CatalogEntry> catalog_entries_from_json(const json& j) {
  if (!j.is_array()) fail(ErrorCode::kParseError, "catalog must be a JSON array");
  std::vector<CatalogEntry> out;
  for (const auto& e : j) {
    out.push_back({{field<std::int64_t>(e, "frames"), field<std::int64_t>(e, "height"),
                    field<std::int64_t>(e, "width")},
                   field<std::int64_t>(e, "count")});
  }
  return out;
}

inline json to_json(const LatentGeometry& g) {
  return {{"temporal_factor", g.temporal_factor},
          {"width_factor", g.width_factor},
          {"height_factor", g.height_factor},
          {"text_tokens", g.text_tokens}};
}

inline LatentGeometry geometry_from_json(const json& j) {
  LatentGeometry g;
  g.temporal_factor = field_or<std::int64_t>(j, "temporal_factor", g.temporal_factor);
  g.width_factor = field_or<std::int64_t>(j, "width_factor", g.width_factor);
  g.height_factor = field_or<std::int64_t>(j, "height_factor", g.height_factor);
  g.text_tokens = field_or<std::int64_t>(j, "text_tokens", g.text_tokens);
  g.validate();
  return g;
}

// ---- scheduler ------------------------------------------------------------

inline json to_json(const BucketPlan& plan) {
  json arr = json::array();
  for (const auto& e : plan.entries) {
    arr.push_back({{"frames", e.bucket.shape.frames},
                   {"height", e.bucket.shape.height},
                   {"width", e.bucket.shape.width},
                   {"seq_len", e.bucket.seq_len},
                   {"count", e.bucket.sample_count},
                   {"batch_size", e.batch_size},
                   {"binding", e.binding ? json(to_string(*e.binding)) : json(nullptr)}});
  }
  return arr;
}

inline BucketPlan plan_from_json(const json& j) {
  if (!j.is_array()) fail(ErrorCode::kParseError, "plan must be a JSON array");
  BucketPlan plan;
  for (const auto& e : j) {
    PlanEntry entry;
    entry.bucket.shape = {field<std::int64_t>(e, "frames"), field<std::int64_t>(e, "height"),
                          field<std::int64_t>(e, "width")};
    entry.bucket.seq_len = field<std::int64_t>(e, "seq_len");
    entry.bucket.sample_count = field_or<std::int64_t>(e, "count", 0);
    entry.batch_size = field<std::int64_t>(e, "batch_size");
    if (entry.batch_size < 1) fail(ErrorCode::kParseError, "plan batch_size must be >= 1");
    if (e.contains("binding") && !e.at("binding").is_null()) {
      entry.binding = parse_binding(field<std::string>(e, "binding"));
    }
    plan.entries.push_back(entry);
  }
  return plan;
}

inline json to_json(const BatchPolicy& policy) {
  if (const auto* d = std::get_if<DualConstraint>(&policy)) {
    return {{"m_mem", d->m_mem}, {"m_comp", d->m_comp}, {"p", d->p}};
  }
  return {{"token_budget", std::get<TokenBudget>(policy).budget}};
}

inline BatchPolicy policy_from_json(const json& j) {
  if (j.is_object() && j.contains("token_budget")) {
    TokenBudget t{field<std::int64_t>(j, "token_budget")};
    t.validate();
    return t;
  }
  DualConstraint c{field<double>(j, "m_mem"), field<double>(j, "m_comp"),
                   field_or<double>(j, "p", 2.0)};
  c.validate();
  return c;
}

// ---- costfit --------------------------------------------------------------

inline json to_json(const CostModel& m) {
  return {{"a", m.a}, {"b", m.b}, {"p", m.p}, {"r2", m.r2}};
}

inline CostModel model_from_json(const json& j) {
  return {field<double>(j, "a"), field<double>(j, "b"), field<double>(j, "p"),
          field_or<double>(j, "r2", 1.0)};
}

inline json to_json(const Trial& t) {
  json j = {{"batch", t.batch}, {"seq_len", t.seq_len}, {"step_time_sync", t.step_time_sync}};
  if (t.worker) j["worker"] = *t.worker;
  return j;
}

inline std::string trace_to_jsonl(const std::vector<Trial>& trials) {
  std::string out;
  for (const auto& t : trials) out += to_json(t).dump() + "\n";
  return out;
}

inline std::vector<Trial> trace_from_jsonl(const std::string& text) {
  std::vector<Trial> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = parse_json(line, "trace line " + std::to_string(lineno));
    Trial t{field<std::int64_t>(j, "batch"), field<std::int64_t>(j, "seq_len"),
            field<double>(j, "step_time_sync"), std::nullopt};
    if (j.contains("worker") && !j.at("worker").is_null()) t.worker = field<std::int64_t>(j, "worker");
    out.push_back(t);
  }
  return out;
}

// ---- cluster-sim ----------------------------------------------------------

// Cluster config file. Optional extras: "weights" (otherwise catalog counts),
// "geometry", and "target_sync" / "m_mem" for closed-loop refits.
struct SimulationConfig {
  ClusterConfig cluster;
  std::optional<std::vector<double>> weights;
  LatentGeometry geometry;
  std::optional<double> target_sync;
  std::optional<double> m_mem;
};

inline json to_json(const SimulationConfig& c) {
  json j = {{"num_workers", c.cluster.num_workers},
            {"cost", {{"a", c.cluster.cost.a}, {"b", c.cluster.cost.b}, {"p", c.cluster.cost.p}}},
            {"noise_sigma", c.cluster.noise_sigma},
            {"seed", c.cluster.seed},
            {"steps", c.cluster.steps},
            {"geometry", to_json(c.geometry)}};
  if (c.weights) j["weights"] = *c.weights;
  if (c.target_sync) j["target_sync"] = *c.target_sync;
  if (c.m_mem) j["m_mem"] = *c.m_mem;
  return j;
}

inline SimulationConfig simulation_config_from_json(const json& j) {
  SimulationConfig c;
  auto& k = c.cluster;
  k.num_workers = field_or<std::int64_t>(j, "num_workers", k.num_workers);
  if (j.contains("cost")) {
    const auto& cost = j.at("cost");
    k.cost = {field<double>(cost, "a"), field<double>(cost, "b"), field_or<double>(cost, "p", 2.0),
              1.0};
  }
  k.noise_sigma = field_or<double>(j, "noise_sigma", k.noise_sigma);
  k.seed = field_or<std::uint64_t>(j, "seed", k.seed);
  k.steps = field_or<std::int64_t>(j, "steps", k.steps);
  if (j.contains("weights")) c.weights = field<std::vector<double>>(j, "weights");
  if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
  if (j.contains("target_sync")) c.target_sync = field<double>(j, "target_sync");
  if (j.contains("m_mem")) c.m_mem = field<double>(j, "m_mem");
  k.validate();
  return c;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader =
    "step,policy,T_sync,cv_step,compute_cv,tokens_per_sec,theta,time_cv,load_cv_step\n";

inline void append_metrics_csv(std::string& out, const MetricsSeries& s, const char* policy) {
  for (const auto& m : s.steps) {
    out += std::to_string(m.step) + "," + policy + "," + format_double(m.t_sync) + "," +
           format_double(m.cv_step) + "," + format_double(m.compute_cv) + "," +
           format_double(m.tokens_per_sec) + "," + format_double(m.theta) + "," +
           format_double(m.time_cv) + "," + format_double(m.load_cv_step) + "\n";
  }
}

inline std::string metrics_csv(const ExperimentResult& r) {
  std::string out = kMetricsHeader;
  append_metrics_csv(out, r.series_a, "A");
  append_metrics_csv(out, r.series_b, "B");
  return out;
}

inline json to_json(const PolicySummary& p) {
  return {{"tokens_per_sec", p.tokens_per_sec},   {"theta", p.theta},
          {"mean_cv_step", p.mean_cv_step},       {"mean_compute_cv", p.mean_compute_cv},
          {"mean_time_cv", p.mean_time_cv},       {"mean_load_cv_step", p.mean_load_cv_step}};
}

inline json to_json(const ExperimentResult& r) {
  json refits = json::array();
  for (const auto& e : r.refits) {
    refits.push_back({{"step", e.step}, {"model", to_json(e.model)}, {"m_comp", e.m_comp}});
  }
  return {{"policy_a", to_json(r.summary.a)},
          {"policy_b", to_json(r.summary.b)},
          {"delta",
           {{"tokens_per_sec", r.summary.delta_tokens_per_sec},
            {"theta", r.summary.delta_theta},
            {"cv_step", r.summary.delta_cv_step},
            {"compute_cv", r.summary.delta_compute_cv}}},
          {"steps", static_cast<std::int64_t>(r.series_a.steps.size())},
          {"refits", refits}};
}

// ---- fused-adaln ----------------------------------------------------------

inline std::string to_string(adaln::ProblemSize s) {
  return std::to_string(s.tokens) + "x" + std::to_string(s.features);
}

inline std::vector<adaln::ProblemSize> parse_sizes(const std::string& text) {
  std::vector<adaln::ProblemSize> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto x = item.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t used_n = 0, used_d = 0;
      const std::string n_str = item.substr(0, x), d_str = item.substr(x + 1);
      const auto n = std::stoll(n_str, &used_n);
      const auto d = std::stoll(d_str, &used_d);
      if (used_n != n_str.size() || used_d != d_str.size() || n < 1 || d < 1) {
        throw std::invalid_argument(item);
      }
      out.push_back({n, d});
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, "size '" + item + "' is not of the form NxD");
    }
  }
  if (out.empty()) fail(ErrorCode::kInvalidArgument, "no sizes given");
  return out;
}

inline json to_json(const adaln::GradcheckReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"size", to_string(e.size)},
                       {"variant", e.variant},
                       {"tensor", e.tensor},
                       {"max_rel_err", e.max_rel_err},
                       {"pass", e.pass}});
  }
  return {{"entries", entries}, {"pass", r.pass}};
}

struct MemoryRow {
  std::int64_t tokens = 0;
  std::int64_t features = 0;
  std::int64_t naive_bytes = 0;
  std::int64_t fused_bytes = 0;
  double ratio = 0.0;  // fused / naive
};

inline std::vector<MemoryRow> memory_table(const std::vector<std::int64_t>& tokens,
                                           std::int64_t features, std::int64_t element_bytes,
                                           std::int64_t stat_bytes) {
  std::vector<MemoryRow> rows;
  for (const auto n : tokens) {
    MemoryRow r{n, features,
                adaln::activation_bytes(n, features, element_bytes, stat_bytes,
                                        adaln::GraphMode::kNaive),
                adaln::activation_bytes(n, features, element_bytes, stat_bytes,
                                        adaln::GraphMode::kFused),
                0.0};
    r.ratio = static_cast<double>(r.fused_bytes) / static_cast<double>(r.naive_bytes);
    rows.push_back(r);
  }
  return rows;
}

inline json to_json(const std::vector<MemoryRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"mode", "naive"}, {"N", r.tokens}, {"D", r.features},
                   {"bytes", r.naive_bytes}, {"ratio", 1.0}});
    arr.push_back({{"mode", "fused"}, {"N", r.tokens}, {"D", r.features},
                   {"bytes", r.fused_bytes}, {"ratio", r.ratio}});
  }
  return arr;
}

// ---- manifests ------------------------------------------------------------

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::kIoError, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

// Provenance record written next to every artifact as <artifact>.manifest.json.
// The digest covers the command, its effective options and the bytes of
// every input file, so identical digests mean identical runs.
struct RunManifest {
  std::string command;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string config_digest;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

inline std::string config_digest(const std::string& command, const json& options,
                                 const std::vector<std::string>& inputs) {
  std::string blob = command + "\n" + options.dump() + "\n";
  for (const auto& path : inputs) blob += sha256_hex(read_text(path)) + "\n";
  return "sha256:" + sha256_hex(blob);
}

inline json to_json(const RunManifest& m) {
  return {{"command", m.command},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"seed", m.seed},
          {"config_digest", m.config_digest}};
}

inline RunManifest manifest_from_json(const json& j) {
  return {field<std::string>(j, "command"), field<std::vector<std::string>>(j, "inputs"),
          field<std::vector<std::string>>(j, "outputs"), field<std::uint64_t>(j, "seed"),
          field<std::string>(j, "config_digest")};
}

inline std::string manifest_path(const std::string& artifact) {
  return artifact + ".manifest.json";
}

inline void write_manifests(const RunManifest& m) {
  for (const auto& out : m.outputs) write_text(manifest_path(out), dump(to_json(m)));
}

}  // namespace bucketload::io
