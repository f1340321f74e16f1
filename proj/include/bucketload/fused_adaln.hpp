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

// Reference fused LayerNorm-Modulate operator.
//
// Forward, per token row n:
//   mu_n   = mean_d x[n, d]
//   rstd_n = 1 / sqrt(var_d x[n, :] + eps)        (population variance)
//   xhat   = (x - mu_n) * rstd_n
//   y      = xhat * (1 + scale[d]) + shift[d]
//
// mu and rstd are returned so backward never re-reduces the rows.
//
// Backward comes in two reduction layouts for dscale / dshift. The naive one
// walks the sequence dimension per feature. The D-tile one fixes a block of
// feature indices as the outer loop and accumulates n-tile partial sums per
// feature, which is the loop order a coalesced GPU kernel uses. Both produce
// the same dx.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bucketload/error.hpp"

namespace bucketload::adaln {

// Row-major [rows x cols] matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::int64_t rows, std::int64_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  std::int64_t rows() const noexcept { return rows_; }
  std::int64_t cols() const noexcept { return cols_; }

  double& operator()(std::int64_t r, std::int64_t c) { return data_[index(r, c)]; }
  double operator()(std::int64_t r, std::int64_t c) const { return data_[index(r, c)]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static std::size_t checked_size(std::int64_t rows, std::int64_t cols) {
    if (rows < 0 || cols < 0) fail(ErrorCode::kInvalidArgument, "negative matrix dimension");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  std::size_t index(std::int64_t r, std::int64_t c) const {
    return static_cast<std::size_t>(r * cols_ + c);
  }

  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<double> data_;
};

struct AdalnInput {
  Matrix x;                  // [N x D]
  std::vector<double> scale; // [D]
  std::vector<double> shift; // [D]
  double epsilon = 1e-6;

  std::int64_t tokens() const { return x.rows(); }
  std::int64_t features() const { return x.cols(); }

  void validate() const {
    if (x.rows() < 1 || x.cols() < 1) fail(ErrorCode::kInvalidArgument, "x must be at least 1x1");
    if (std::ssize(scale) != x.cols() || std::ssize(shift) != x.cols()) {
      fail(ErrorCode::kShapeMismatch, "scale and shift must have D entries");
    }
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      fail(ErrorCode::kInvalidArgument, "epsilon must be finite and > 0");
    }
    const auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
    };
    if (!finite(x.data()) || !finite(scale) || !finite(shift)) {
      fail(ErrorCode::kNonFinite, "adaln input contains NaN or Inf");
    }
  }
};

struct AdalnOutput {
  Matrix y;                 // [N x D]
  std::vector<double> mu;   // [N]
  std::vector<double> rstd; // [N]
};

struct AdalnGrads {
  Matrix dx;                  // [N x D]
  std::vector<double> dscale; // [D]
  std::vector<double> dshift; // [D]
};

struct TileConfig {
  std::int64_t d_tile = 32;
  std::int64_t n_tile = 256;

  friend bool operator==(const TileConfig&, const TileConfig&) = default;
};

enum class Accumulation { kDouble, kSingle };

inline AdalnOutput adaln_forward(const AdalnInput& in) {
  in.validate();
  const std::int64_t n_tokens = in.tokens();
  const std::int64_t dim = in.features();
  const auto inv_dim = 1.0 / static_cast<double>(dim);

  AdalnOutput out{Matrix(n_tokens, dim), std::vector<double>(n_tokens),
                  std::vector<double>(n_tokens)};
  for (std::int64_t n = 0; n < n_tokens; ++n) {
    double sum = 0.0;
    for (std::int64_t d = 0; d < dim; ++d) sum += in.x(n, d);
    const double mu = sum * inv_dim;
    double sq = 0.0;
    for (std::int64_t d = 0; d < dim; ++d) {
      const double c = in.x(n, d) - mu;
      sq += c * c;
    }
    const double rstd = 1.0 / std::sqrt(sq * inv_dim + in.epsilon);
    for (std::int64_t d = 0; d < dim; ++d) {
      out.y(n, d) = (in.x(n, d) - mu) * rstd * (1.0 + in.scale[d]) + in.shift[d];
    }
    out.mu[n] = mu;
    out.rstd[n] = rstd;
  }
  return out;
}

namespace detail {

inline double standardized(const AdalnInput& in, const AdalnOutput& cached, std::int64_t n,
                           std::int64_t d) {
  return (in.x(n, d) - cached.mu[n]) * cached.rstd[n];
}

inline void check_backward_args(const Matrix& dy, const AdalnInput& in,
                                const AdalnOutput& cached) {
  in.validate();
  if (dy.rows() != in.tokens() || dy.cols() != in.features()) {
    fail(ErrorCode::kShapeMismatch, "dy must match x in shape");
  }
  if (std::ssize(cached.mu) != in.tokens() || std::ssize(cached.rstd) != in.tokens()) {
    fail(ErrorCode::kStaleStats, "cached statistics do not match the token count of x");
  }
}

// dx through the layernorm chain, with g = dy * (1 + scale):
//   dx = rstd * (g - mean_d(g) - xhat * mean_d(g * xhat))
inline Matrix input_gradient(const Matrix& dy, const AdalnInput& in, const AdalnOutput& cached) {
  const std::int64_t n_tokens = in.tokens();
  const std::int64_t dim = in.features();
  const auto inv_dim = 1.0 / static_cast<double>(dim);
  Matrix dx(n_tokens, dim);
  std::vector<double> g(static_cast<std::size_t>(dim));
  std::vector<double> xhat(static_cast<std::size_t>(dim));
  for (std::int64_t n = 0; n < n_tokens; ++n) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::int64_t d = 0; d < dim; ++d) {
      xhat[d] = standardized(in, cached, n, d);
      g[d] = dy(n, d) * (1.0 + in.scale[d]);
      sum_g += g[d];
      sum_gx += g[d] * xhat[d];
    }
    const double mean_g = sum_g * inv_dim;
    const double mean_gx = sum_gx * inv_dim;
    for (std::int64_t d = 0; d < dim; ++d) {
      dx(n, d) = cached.rstd[n] * (g[d] - mean_g - xhat[d] * mean_gx);
    }
  }
  return dx;
}

}  // namespace detail

inline AdalnGrads adaln_backward_naive(const Matrix& dy, const AdalnInput& in,
                                       const AdalnOutput& cached) {
  detail::check_backward_args(dy, in, cached);
  const std::int64_t dim = in.features();
  AdalnGrads grads{detail::input_gradient(dy, in, cached), std::vector<double>(dim, 0.0),
                   std::vector<double>(dim, 0.0)};
  // Feature-major walk down the sequence dimension: stride D between reads.
  for (std::int64_t d = 0; d < dim; ++d) {
    double s_shift = 0.0, s_scale = 0.0;
    for (std::int64_t n = 0; n < in.tokens(); ++n) {
      s_shift += dy(n, d);
      s_scale += dy(n, d) * detail::standardized(in, cached, n, d);
    }
    grads.dshift[d] = s_shift;
    grads.dscale[d] = s_scale;
  }
  return grads;
}

/// D-tile reduction with accumulators of type Acc. Within each d-tile the
/// n-tiles are visited in ascending order and each contributes one partial
/// sum per feature, so results are reproducible for a given TileConfig.
template <typename Acc>
AdalnGrads adaln_backward_dtile_as(const Matrix& dy, const AdalnInput& in,
                                   const AdalnOutput& cached, const TileConfig& tiles) {
  detail::check_backward_args(dy, in, cached);
  const std::int64_t n_tokens = in.tokens();
  const std::int64_t dim = in.features();
  if (tiles.d_tile < 1 || tiles.d_tile > dim || tiles.n_tile < 1 || tiles.n_tile > n_tokens) {
    fail(ErrorCode::kInvalidTile, "tile (" + std::to_string(tiles.d_tile) + ", " +
                                      std::to_string(tiles.n_tile) + ") outside [1, D] x [1, N]");
  }
  AdalnGrads grads{detail::input_gradient(dy, in, cached), std::vector<double>(dim, 0.0),
                   std::vector<double>(dim, 0.0)};

  std::vector<Acc> acc_shift(static_cast<std::size_t>(tiles.d_tile));
  std::vector<Acc> acc_scale(static_cast<std::size_t>(tiles.d_tile));
  std::vector<Acc> part_shift(static_cast<std::size_t>(tiles.d_tile));
  std::vector<Acc> part_scale(static_cast<std::size_t>(tiles.d_tile));
  for (std::int64_t d0 = 0; d0 < dim; d0 += tiles.d_tile) {
    const std::int64_t width = std::min(tiles.d_tile, dim - d0);
    std::fill(acc_shift.begin(), acc_shift.end(), Acc{0});
    std::fill(acc_scale.begin(), acc_scale.end(), Acc{0});
    for (std::int64_t n0 = 0; n0 < n_tokens; n0 += tiles.n_tile) {
      const std::int64_t n1 = std::min(n0 + tiles.n_tile, n_tokens);
      std::fill(part_shift.begin(), part_shift.end(), Acc{0});
      std::fill(part_scale.begin(), part_scale.end(), Acc{0});
      // Row-contiguous reads: consecutive k touch consecutive addresses.
      for (std::int64_t n = n0; n < n1; ++n) {
        for (std::int64_t k = 0; k < width; ++k) {
          const std::int64_t d = d0 + k;
          const double g = dy(n, d);
          part_shift[k] += static_cast<Acc>(g);
          part_scale[k] += static_cast<Acc>(g * detail::standardized(in, cached, n, d));
        }
      }
      for (std::int64_t k = 0; k < width; ++k) {
        acc_shift[k] += part_shift[k];
        acc_scale[k] += part_scale[k];
      }
    }
    for (std::int64_t k = 0; k < width; ++k) {
      grads.dshift[d0 + k] = static_cast<double>(acc_shift[k]);
      grads.dscale[d0 + k] = static_cast<double>(acc_scale[k]);
    }
  }
  return grads;
}

inline AdalnGrads adaln_backward_dtile(const Matrix& dy, const AdalnInput& in,
                                       const AdalnOutput& cached, const TileConfig& tiles,
                                       Accumulation acc = Accumulation::kDouble) {
  return acc == Accumulation::kSingle ? adaln_backward_dtile_as<float>(dy, in, cached, tiles)
                                      : adaln_backward_dtile_as<double>(dy, in, cached, tiles);
}

enum class GraphMode { kNaive, kFused };

// Bytes kept alive for backward. The discrete chain saves x, xhat and the
// modulated intermediate (3 N x D tensors); the fused node saves only x.
// Both keep per-token mean and rstd.
inline std::int64_t activation_bytes(std::int64_t tokens, std::int64_t features,
                                     std::int64_t element_bytes, std::int64_t stat_bytes,
                                     GraphMode mode) {
  if (tokens < 1 || features < 1 || element_bytes < 1 || stat_bytes < 1) {
    fail(ErrorCode::kInvalidArgument, "activation_bytes arguments must be >= 1");
  }
  const std::int64_t saved = mode == GraphMode::kNaive ? 3 : 1;
  std::int64_t full = 0, stats = 0, out = 0;
  if (__builtin_mul_overflow(tokens, features, &full) ||
      __builtin_mul_overflow(full, element_bytes * saved, &full) ||
      __builtin_mul_overflow(tokens, 2 * stat_bytes, &stats) ||
      __builtin_add_overflow(full, stats, &out)) {
    fail(ErrorCode::kOverflow, "activation byte count overflows int64");
  }
  return out;
}

/// max |a - ref| / max(max |ref|, 1e-8): relative to the reference's scale
/// so entries that are legitimately near zero do not dominate.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& ref) {
  if (a.size() != ref.size()) fail(ErrorCode::kShapeMismatch, "max_rel_err size mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - ref[i]));
    scale = std::max(scale, std::abs(ref[i]));
  }
  return diff / std::max(scale, 1e-8);
}

struct ProblemSize {
  std::int64_t tokens = 1;
  std::int64_t features = 1;

  friend bool operator==(const ProblemSize&, const ProblemSize&) = default;
};

/// Deterministic random problem: rows with distinct offsets and spreads,
/// modulation in [-0.5, 0.5], upstream gradient ~ N(0, 1).
inline std::pair<AdalnInput, Matrix> random_problem(ProblemSize size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  AdalnInput in{Matrix(size.tokens, size.features), std::vector<double>(size.features),
                std::vector<double>(size.features), 1e-6};
  for (std::int64_t n = 0; n < size.tokens; ++n) {
    const double offset = 2.0 * unit(rng);
    const double spread = 1.0 + 0.5 * unit(rng);
    for (std::int64_t d = 0; d < size.features; ++d) in.x(n, d) = offset + spread * normal(rng);
  }
  for (std::int64_t d = 0; d < size.features; ++d) {
    in.scale[d] = 0.5 * unit(rng);
    in.shift[d] = 0.5 * unit(rng);
  }
  Matrix dy(size.tokens, size.features);
  for (auto& v : dy.data()) v = normal(rng);
  return {std::move(in), std::move(dy)};
}

struct NumericGrads {
  std::vector<double> dx;
  std::vector<double> dscale;
  std::vector<double> dshift;
};

/// Central differences of loss = <dy, adaln_forward(in).y>. Perturbing
/// x[n, d] only changes row n, so dx is differenced on single-row problems.
inline NumericGrads numeric_gradients(const AdalnInput& in, const Matrix& dy, double step) {
  const std::int64_t n_tokens = in.tokens();
  const std::int64_t dim = in.features();
  NumericGrads out{std::vector<double>(static_cast<std::size_t>(n_tokens * dim)),
                   std::vector<double>(static_cast<std::size_t>(dim)),
                   std::vector<double>(static_cast<std::size_t>(dim))};

  const auto loss = [&dy](const AdalnInput& p, std::int64_t row0) {
    const auto y = adaln_forward(p).y;
    double s = 0.0;
    for (std::int64_t n = 0; n < y.rows(); ++n) {
      for (std::int64_t d = 0; d < y.cols(); ++d) s += dy(row0 + n, d) * y(n, d);
    }
    return s;
  };

  AdalnInput row{Matrix(1, dim), in.scale, in.shift, in.epsilon};
  for (std::int64_t n = 0; n < n_tokens; ++n) {
    for (std::int64_t d = 0; d < dim; ++d) row.x(0, d) = in.x(n, d);
    for (std::int64_t d = 0; d < dim; ++d) {
      const double saved = row.x(0, d);
      row.x(0, d) = saved + step;
      const double up = loss(row, n);
      row.x(0, d) = saved - step;
      const double down = loss(row, n);
      row.x(0, d) = saved;
      out.dx[static_cast<std::size_t>(n * dim + d)] = (up - down) / (2.0 * step);
    }
  }

  AdalnInput work = in;
  for (std::int64_t d = 0; d < dim; ++d) {
    for (auto* param : {&work.scale, &work.shift}) {
      const double saved = (*param)[d];
      (*param)[d] = saved + step;
      const double up = loss(work, 0);
      (*param)[d] = saved - step;
      const double down = loss(work, 0);
      (*param)[d] = saved;
      (param == &work.scale ? out.dscale : out.dshift)[d] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

struct GradcheckOptions {
  TileConfig tiles{};  // clamped to each problem size
  Accumulation accumulation = Accumulation::kDouble;
  std::uint64_t seed = 0;
  double fd_step = 1e-3;
};

struct GradcheckEntry {
  ProblemSize size;
  std::string variant;  // "naive" or "dtile"
  std::string tensor;   // "dx", "dscale" or "dshift"
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass = true;
};

inline TileConfig clamp_tiles(TileConfig t, ProblemSize size) {
  return {std::clamp<std::int64_t>(t.d_tile, 1, size.features),
          std::clamp<std::int64_t>(t.n_tile, 1, size.tokens)};
}

/// Checks both backward variants against central differences, one problem
/// per size. Failures are reported, not thrown.
inline GradcheckReport gradcheck(const std::vector<ProblemSize>& sizes, double tolerance,
                                 const GradcheckOptions& opts = {}) {
  GradcheckReport report;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto [in, dy] = random_problem(sizes[i], opts.seed + i);
    const auto fwd = adaln_forward(in);
    const auto numeric = numeric_gradients(in, dy, opts.fd_step);
    const std::pair<const char*, AdalnGrads> variants[] = {
        {"naive", adaln_backward_naive(dy, in, fwd)},
        {"dtile", adaln_backward_dtile(dy, in, fwd, clamp_tiles(opts.tiles, sizes[i]),
                                       opts.accumulation)},
    };
    for (const auto& [name, g] : variants) {
      const std::pair<const char*, double> errs[] = {
          {"dx", max_rel_err(g.dx.data(), numeric.dx)},
          {"dscale", max_rel_err(g.dscale, numeric.dscale)},
          {"dshift", max_rel_err(g.dshift, numeric.dshift)},
      };
      for (const auto& [tensor, err] : errs) {
        const bool ok = err <= tolerance;
        report.entries.push_back({sizes[i], name, tensor, err, ok});
        report.pass = report.pass && ok;
      }
    }
  }
  return report;
}

}  // namespace bucketload::adaln
