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

#include "bucketload/fused_adaln.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "adaln_oracle.hpp"
#include "test_util.hpp"

namespace bucketload::adaln {
namespace {

using testing::ExpectCode;

AdalnInput Input(std::int64_t n, std::int64_t d, std::vector<double> x, std::vector<double> scale,
                 std::vector<double> shift) {
  AdalnInput in{Matrix(n, d), std::move(scale), std::move(shift), 1e-6};
  in.x.data() = std::move(x);
  return in;
}

TEST(ForwardTest, FrozenTwoByTwo) {
  // 40-digit reference values.
  const auto in = Input(2, 2, {1, 2, 3, 5}, {0.5, -0.5}, {1, 2});
  const auto out = adaln_forward(in);
  EXPECT_NEAR(out.y(0, 0), -0.499997000009, 1e-12);
  EXPECT_NEAR(out.y(0, 1), 2.499999000003, 1e-12);
  EXPECT_NEAR(out.y(1, 0), -0.4999992500005625, 1e-12);
  EXPECT_NEAR(out.y(1, 1), 2.4999997500001876, 1e-12);
  EXPECT_DOUBLE_EQ(out.mu[0], 1.5);
  EXPECT_DOUBLE_EQ(out.mu[1], 4.0);
  EXPECT_NEAR(out.rstd[0], 1.999996000012, 1e-11);
  EXPECT_NEAR(out.rstd[1], 0.999999500000375, 1e-12);
}

TEST(ForwardTest, ZeroModulationIsLayerNorm) {
  const auto in = Input(1, 3, {1, 2, 3}, {0, 0, 0}, {0, 0, 0});
  const auto out = adaln_forward(in);
  const double r = 1.0 / std::sqrt(2.0 / 3.0 + 1e-6);
  EXPECT_NEAR(out.y(0, 0), -r, 1e-15);
  EXPECT_NEAR(out.y(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(out.y(0, 2), r, 1e-15);
}

TEST(ForwardTest, ConstantRowYieldsShift) {
  const auto in = Input(1, 4, {3, 3, 3, 3}, {0.9, -0.2, 5, 0}, {1, 2, 3, 4});
  const auto out = adaln_forward(in);
  for (int d = 0; d < 4; ++d) EXPECT_DOUBLE_EQ(out.y(0, d), d + 1.0);
}

TEST(ForwardTest, StandardizedRowsHaveZeroMeanUnitVariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto [in, dy] = random_problem({16, 64}, seed);
    std::fill(in.scale.begin(), in.scale.end(), 0.0);
    std::fill(in.shift.begin(), in.shift.end(), 0.0);
    const auto out = adaln_forward(in);
    for (std::int64_t n = 0; n < 16; ++n) {
      double s = 0.0, q = 0.0, var = 0.0;
      for (std::int64_t d = 0; d < 64; ++d) {
        s += out.y(n, d);
        q += out.y(n, d) * out.y(n, d);
        var += (in.x(n, d) - out.mu[n]) * (in.x(n, d) - out.mu[n]);
      }
      var /= 64.0;
      EXPECT_NEAR(s / 64.0, 0.0, 1e-9);
      EXPECT_NEAR(q / 64.0, var / (var + 1e-6), 1e-9);
    }
  }
}

TEST(ForwardTest, RejectsBadInput) {
  auto in = Input(1, 2, {1, NAN}, {0, 0}, {0, 0});
  ExpectCode(ErrorCode::kNonFinite, [&] { adaln_forward(in); });
  in = Input(1, 2, {1, 2}, {0}, {0, 0});
  ExpectCode(ErrorCode::kShapeMismatch, [&] { adaln_forward(in); });
  in = Input(1, 2, {1, 2}, {0, 0}, {0, 0});
  in.epsilon = 0.0;
  ExpectCode(ErrorCode::kInvalidArgument, [&] { adaln_forward(in); });
}

TEST(BackwardTest, UnitUpstreamGivesTokenCountShift) {
  auto [in, dy] = random_problem({7, 5}, 3);
  std::fill(dy.data().begin(), dy.data().end(), 1.0);
  const auto fwd = adaln_forward(in);
  const auto g = adaln_backward_naive(dy, in, fwd);
  for (double v : g.dshift) EXPECT_DOUBLE_EQ(v, 7.0);
  // Sum over d of xhat is zero per row, so the dscale entries cancel.
  EXPECT_NEAR(std::accumulate(g.dscale.begin(), g.dscale.end(), 0.0), 0.0, 1e-12);
}

TEST(BackwardTest, SingleTokenDscaleSumsToZeroForUniformUpstream) {
  auto [in, dy] = random_problem({1, 9}, 5);
  std::fill(dy.data().begin(), dy.data().end(), -2.5);
  const auto g = adaln_backward_naive(dy, in, adaln_forward(in));
  EXPECT_NEAR(std::accumulate(g.dscale.begin(), g.dscale.end(), 0.0), 0.0, 1e-12);
}

TEST(BackwardTest, MatchesCentralDifferences) {
  const auto [in, dy] = random_problem({8, 16}, 11);
  const auto fwd = adaln_forward(in);
  const auto numeric = numeric_gradients(in, dy, 1e-3);
  const auto g = adaln_backward_naive(dy, in, fwd);
  EXPECT_LE(max_rel_err(g.dx.data(), numeric.dx), 1e-5);
  EXPECT_LE(max_rel_err(g.dscale, numeric.dscale), 1e-5);
  EXPECT_LE(max_rel_err(g.dshift, numeric.dshift), 1e-5);
}

TEST(BackwardTest, SingleTileIsBitwiseNaive) {
  const auto [in, dy] = random_problem({37, 19}, 2);
  const auto fwd = adaln_forward(in);
  const auto naive = adaln_backward_naive(dy, in, fwd);
  const auto tiled = adaln_backward_dtile(dy, in, fwd, {19, 37});
  EXPECT_EQ(tiled.dx, naive.dx);
  EXPECT_EQ(tiled.dscale, naive.dscale);
  EXPECT_EQ(tiled.dshift, naive.dshift);
}

TEST(BackwardTest, UnitTilesAreExactInDouble) {
  // n_tile = 1 adds one term per partial, reproducing the naive order.
  const auto [in, dy] = random_problem({23, 11}, 4);
  const auto fwd = adaln_forward(in);
  const auto naive = adaln_backward_naive(dy, in, fwd);
  const auto tiled = adaln_backward_dtile(dy, in, fwd, {1, 1});
  EXPECT_EQ(tiled.dscale, naive.dscale);
  EXPECT_EQ(tiled.dshift, naive.dshift);
}

TEST(BackwardTest, TilingsAgreeWithCompensatedReference) {
  const auto [in, dy] = random_problem({4096, 64}, 9);
  const auto fwd = adaln_forward(in);
  const auto ref = testing::reference_modulation_grads(dy, in);
  for (const TileConfig t : {TileConfig{1, 1}, TileConfig{7, 13}, TileConfig{32, 256},
                             TileConfig{64, 4096}, TileConfig{16, 1000}}) {
    const auto d = adaln_backward_dtile(dy, in, fwd, t, Accumulation::kDouble);
    EXPECT_LE(max_rel_err(d.dscale, ref.dscale), 1e-12);
    EXPECT_LE(max_rel_err(d.dshift, ref.dshift), 1e-12);
    const auto s = adaln_backward_dtile(dy, in, fwd, t, Accumulation::kSingle);
    EXPECT_LE(max_rel_err(s.dscale, ref.dscale), 1e-5);
    EXPECT_LE(max_rel_err(s.dshift, ref.dshift), 1e-5);
    EXPECT_EQ(s.dx, d.dx);
  }
}

TEST(BackwardTest, Errors) {
  const auto [in, dy] = random_problem({4, 3}, 1);
  const auto fwd = adaln_forward(in);
  ExpectCode(ErrorCode::kInvalidTile, [&] { adaln_backward_dtile(dy, in, fwd, {0, 2}); });
  ExpectCode(ErrorCode::kInvalidTile, [&] { adaln_backward_dtile(dy, in, fwd, {4, 2}); });
  ExpectCode(ErrorCode::kInvalidTile, [&] { adaln_backward_dtile(dy, in, fwd, {3, 5}); });
  ExpectCode(ErrorCode::kShapeMismatch,
             [&] { adaln_backward_naive(Matrix(4, 2), in, fwd); });
  auto stale = fwd;
  stale.mu.pop_back();
  ExpectCode(ErrorCode::kStaleStats, [&] { adaln_backward_naive(dy, in, stale); });
}

TEST(ActivationBytesTest, Examples) {
  const auto naive = activation_bytes(32760, 5120, 2, 4, GraphMode::kNaive);
  const auto fused = activation_bytes(32760, 5120, 2, 4, GraphMode::kFused);
  EXPECT_EQ(naive, 3LL * 32760 * 5120 * 2 + 2LL * 32760 * 4);
  EXPECT_EQ(fused, 1LL * 32760 * 5120 * 2 + 2LL * 32760 * 4);
  EXPECT_NEAR(double(fused) / double(naive), 0.3335, 5e-4);
  EXPECT_EQ(activation_bytes(1, 1, 1, 1, GraphMode::kFused), 3);
  ExpectCode(ErrorCode::kInvalidArgument,
             [] { activation_bytes(0, 1, 1, 1, GraphMode::kFused); });
  ExpectCode(ErrorCode::kOverflow,
             [] { activation_bytes(1LL << 40, 1LL << 20, 8, 4, GraphMode::kNaive); });
}

TEST(ActivationBytesTest, LinearAndMonotoneInTokens) {
  for (const auto mode : {GraphMode::kNaive, GraphMode::kFused}) {
    const auto step = activation_bytes(2, 5120, 2, 4, mode) - activation_bytes(1, 5120, 2, 4, mode);
    for (std::int64_t n = 1; n < 70000; n += 997) {
      EXPECT_EQ(activation_bytes(n, 5120, 2, 4, mode), n * step);
    }
    EXPECT_LT(activation_bytes(100, 5120, 2, 4, GraphMode::kFused),
              activation_bytes(100, 5120, 2, 4, GraphMode::kNaive));
  }
}

TEST(GradcheckTest, SmallProblemPasses) {
  const auto report = gradcheck({{2, 3}}, 1e-4);
  EXPECT_TRUE(report.pass);
  EXPECT_EQ(report.entries.size(), 6u);
}

TEST(GradcheckTest, DegenerateModulationAndFeatureCount) {
  auto [in, dy] = random_problem({6, 5}, 8);
  std::fill(in.scale.begin(), in.scale.end(), -1.0);
  const auto fwd = adaln_forward(in);
  const auto g = adaln_backward_naive(dy, in, fwd);
  for (double v : g.dx.data()) EXPECT_EQ(v, 0.0);
  const auto numeric = numeric_gradients(in, dy, 1e-3);
  EXPECT_LE(max_rel_err(g.dscale, numeric.dscale), 1e-6);

  // D = 1: xhat is identically zero, so dx and dscale vanish.
  const auto [in1, dy1] = random_problem({5, 1}, 8);
  const auto g1 = adaln_backward_naive(dy1, in1, adaln_forward(in1));
  for (double v : g1.dx.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g1.dscale[0], 0.0);
  EXPECT_TRUE(gradcheck({{5, 1}}, 1e-4).pass);
}

TEST(GradcheckTest, DefaultSizesPassBothAccumulators) {
  const std::vector<ProblemSize> sizes{{8, 16}, {64, 128}, {512, 256}};
  EXPECT_TRUE(gradcheck(sizes, 1e-4).pass);
  GradcheckOptions single;
  single.accumulation = Accumulation::kSingle;
  EXPECT_TRUE(gradcheck(sizes, 1e-4, single).pass);
}

}  // namespace
}  // namespace bucketload::adaln
