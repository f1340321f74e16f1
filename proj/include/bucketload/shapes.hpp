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

// Media shapes and their latent token footprint.
//
// A video clip of F frames at H x W pixels is compressed by the VAE into
// ((F - 1) / temporal + 1) latent frames of (H / height) x (W / width)
// patches. Still images are the F == 1 case. Inputs that do not divide
// evenly are rejected rather than rounded, so every downstream token count
// is exact.

#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bucketload/error.hpp"

namespace bucketload {

struct MediaShape {
  std::int64_t frames = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  friend auto operator<=>(const MediaShape&, const MediaShape&) = default;
};

inline std::string to_string(const MediaShape& s) {
  return std::to_string(s.frames) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

struct LatentGeometry {
  std::int64_t temporal_factor = 8;
  std::int64_t width_factor = 16;
  std::int64_t height_factor = 16;
  std::int64_t text_tokens = 0;

  friend bool operator==(const LatentGeometry&, const LatentGeometry&) = default;

  void validate() const {
    if (temporal_factor < 1 || width_factor < 1 || height_factor < 1) {
      fail(ErrorCode::kInvalidArgument, "latent factors must be >= 1");
    }
    if (text_tokens < 0) {
      fail(ErrorCode::kInvalidArgument, "text_tokens must be >= 0");
    }
  }
};

struct Bucket {
  MediaShape shape;
  std::int64_t seq_len = 0;
  std::int64_t sample_count = 0;

  friend bool operator==(const Bucket&, const Bucket&) = default;
};

inline std::int64_t latent_frames(std::int64_t frames, std::int64_t temporal_factor) {
  if (frames < 1) fail(ErrorCode::kInvalidArgument, "frames must be >= 1");
  if (temporal_factor < 1) {
    fail(ErrorCode::kInvalidArgument, "temporal factor must be >= 1");
  }
  if ((frames - 1) % temporal_factor != 0) {
    fail(ErrorCode::kNonDivisibleFrames,
         "frames - 1 = " + std::to_string(frames - 1) +
             " is not divisible by " + std::to_string(temporal_factor));
  }
  return (frames - 1) / temporal_factor + 1;
}

/// Latent patches per sample, excluding text tokens.
inline std::int64_t visual_tokens(const MediaShape& shape, const LatentGeometry& geom) {
  geom.validate();
  if (shape.height < 1 || shape.width < 1) {
    fail(ErrorCode::kInvalidArgument, "height and width must be >= 1");
  }
  const std::int64_t t = latent_frames(shape.frames, geom.temporal_factor);
  if (shape.height % geom.height_factor != 0 || shape.width % geom.width_factor != 0) {
    fail(ErrorCode::kNonDivisibleSpatial,
         "shape " + to_string(shape) + " is not divisible by spatial factors " +
             std::to_string(geom.height_factor) + "x" + std::to_string(geom.width_factor));
  }
  std::int64_t out = 0;
  if (__builtin_mul_overflow(t, shape.height / geom.height_factor, &out) ||
      __builtin_mul_overflow(out, shape.width / geom.width_factor, &out)) {
    fail(ErrorCode::kOverflow, "visual token count overflows for " + to_string(shape));
  }
  return out;
}

inline std::int64_t sequence_length(const MediaShape& shape, const LatentGeometry& geom) {
  std::int64_t out = 0;
  if (__builtin_add_overflow(geom.text_tokens, visual_tokens(shape, geom), &out)) {
    fail(ErrorCode::kOverflow, "sequence length overflows for " + to_string(shape));
  }
  return out;
}

struct CatalogEntry {
  MediaShape shape;
  std::int64_t count = 0;
};

/// One bucket per shape, ordered by ascending sequence length. Equal lengths
/// fall back to (frames, height, width) order so the result is a pure
/// function of the input set.
inline std::vector<Bucket> build_catalog(const std::vector<CatalogEntry>& entries,
                                         const LatentGeometry& geom) {
  if (entries.empty()) fail(ErrorCode::kEmptyCatalog, "catalog has no shapes");
  std::vector<Bucket> buckets;
  buckets.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.count < 0) {
      fail(ErrorCode::kInvalidArgument, "negative sample count for " + to_string(e.shape));
    }
    buckets.push_back(Bucket{e.shape, sequence_length(e.shape, geom), e.count});
  }
  std::sort(buckets.begin(), buckets.end(), [](const Bucket& l, const Bucket& r) {
    if (l.seq_len != r.seq_len) return l.seq_len < r.seq_len;
    return l.shape < r.shape;
  });
  for (std::size_t i = 1; i < buckets.size(); ++i) {
    if (buckets[i].shape == buckets[i - 1].shape) {
      fail(ErrorCode::kDuplicateShape, "shape " + to_string(buckets[i].shape) + " listed twice");
    }
  }
  return buckets;
}

/// Sampling weights proportional to each bucket's sample count.
inline std::vector<double> count_weights(const std::vector<Bucket>& catalog) {
  if (catalog.empty()) fail(ErrorCode::kEmptyCatalog, "catalog has no buckets");
  double total = 0.0;
  for (const auto& b : catalog) total += static_cast<double>(b.sample_count);
  if (!(total > 0.0)) fail(ErrorCode::kInvalidArgument, "catalog sample counts sum to zero");
  std::vector<double> w;
  w.reserve(catalog.size());
  for (const auto& b : catalog) w.push_back(static_cast<double>(b.sample_count) / total);
  return w;
}

}  // namespace bucketload
