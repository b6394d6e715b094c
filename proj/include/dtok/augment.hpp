// Copyright 2026 The dtok Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Augmentation policy for discretized input.
//
// Time-domain deformations (warp, masking, frame duplication) act on token
// sequences before the embedding lookup; feature-domain deformations
// (embedding-dimension masking, Gaussian noise) act on the looked-up features.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtok/embio.hpp"
#include "dtok/error.hpp"
#include "dtok/random.hpp"
#include "dtok/tokens.hpp"

namespace dtok {

struct AugmentationConfig {
  std::size_t warp_factor = 80;
  std::size_t time_mask_count_cap = 10;
  double time_mask_frac = 0.0015;
  std::size_t time_mask_width_cap = 100;
  double time_mask_budget_frac = 0.15;
  std::size_t emb_mask_max_stride = 27;
  std::size_t emb_mask_repeats = 2;
  double noise_prob = 0.25;
  double sample_prob = 0.9;
  Token mask_value = 0;
  double frame_dup_prob = 0.0;
  bool enable_time_warp = true;
  bool enable_time_mask = true;
  bool enable_embedding_mask = true;
  std::uint64_t seed = 0;
};

inline void validate(const AugmentationConfig& c) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kConfig, std::string(name) + " must be in [0,1]");
  };
  prob(c.noise_prob, "noise_prob");
  prob(c.sample_prob, "sample_prob");
  prob(c.frame_dup_prob, "frame_dup_prob");
  prob(c.time_mask_budget_frac, "time_mask_budget_frac");
  if (!(c.time_mask_frac >= 0.0) || !std::isfinite(c.time_mask_frac)) fail(ErrorKind::kConfig, "time_mask_frac must be >= 0");
}

// Flat key=value form; keys match the field names.
inline std::map<std::string, std::string> to_kv(const AugmentationConfig& c) {
  auto num = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  return {{"warp_factor", std::to_string(c.warp_factor)},
          {"time_mask_count_cap", std::to_string(c.time_mask_count_cap)},
          {"time_mask_frac", num(c.time_mask_frac)},
          {"time_mask_width_cap", std::to_string(c.time_mask_width_cap)},
          {"time_mask_budget_frac", num(c.time_mask_budget_frac)},
          {"emb_mask_max_stride", std::to_string(c.emb_mask_max_stride)},
          {"emb_mask_repeats", std::to_string(c.emb_mask_repeats)},
          {"noise_prob", num(c.noise_prob)},
          {"sample_prob", num(c.sample_prob)},
          {"mask_value", std::to_string(c.mask_value)},
          {"frame_dup_prob", num(c.frame_dup_prob)},
          {"enable_time_warp", c.enable_time_warp ? "true" : "false"},
          {"enable_time_mask", c.enable_time_mask ? "true" : "false"},
          {"enable_embedding_mask", c.enable_embedding_mask ? "true" : "false"},
          {"seed", std::to_string(c.seed)}};
}

inline void apply_setting(AugmentationConfig& c, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    auto as_size = [&] {
      const auto v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return static_cast<std::size_t>(v);
    };
    auto as_double = [&] {
      const auto v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw std::invalid_argument(value);
    };
    if (key == "warp_factor") c.warp_factor = as_size();
    else if (key == "time_mask_count_cap") c.time_mask_count_cap = as_size();
    else if (key == "time_mask_frac") c.time_mask_frac = as_double();
    else if (key == "time_mask_width_cap") c.time_mask_width_cap = as_size();
    else if (key == "time_mask_budget_frac") c.time_mask_budget_frac = as_double();
    else if (key == "emb_mask_max_stride") c.emb_mask_max_stride = as_size();
    else if (key == "emb_mask_repeats") c.emb_mask_repeats = as_size();
    else if (key == "noise_prob") c.noise_prob = as_double();
    else if (key == "sample_prob") c.sample_prob = as_double();
    else if (key == "mask_value") c.mask_value = static_cast<Token>(as_size());
    else if (key == "frame_dup_prob") c.frame_dup_prob = as_double();
    else if (key == "enable_time_warp") c.enable_time_warp = as_bool();
    else if (key == "enable_time_mask") c.enable_time_mask = as_bool();
    else if (key == "enable_embedding_mask") c.enable_embedding_mask = as_bool();
    else if (key == "seed") c.seed = as_size();
    else fail(ErrorKind::kConfig, "unknown augmentation key '" + key + "'");
  } catch (const std::logic_error&) {
    fail(ErrorKind::kConfig, "bad value '" + value + "' for " + key);
  }
}

namespace detail {

// ceil/floor of a product that is integral in exact arithmetic (e.g. 0.0015 * 2000)
// must not be pushed off by binary rounding of the constant.
inline double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x)) ? r : x;
}

// floor(i * in / out) clamped to in - 1, the `nearest` interpolation index.
inline std::size_t nearest_index(std::size_t i, std::size_t in, std::size_t out) {
  return std::min((i * in) / out, in - 1);
}

}  // namespace detail

// floor(lambda * (extent - width)) for lambda in [0, 1).
inline std::size_t mask_start(double lambda, std::size_t extent, std::size_t width) {
  return static_cast<std::size_t>(std::floor(lambda * static_cast<double>(extent - width)));
}

// ---------------------------------------------------------------------------
// Time warping

struct WarpResult {
  TokenSequence seq;
  // 1-based centre C and warped size S; empty when the sequence was too short.
  std::optional<std::pair<std::size_t, std::size_t>> centre_and_size;
};

// The first C-1 frames are resampled to S frames and the remaining T-C+1
// frames to T-S frames, all streams alike.
inline TokenSequence time_warp_at(const TokenSequence& seq, std::size_t centre, std::size_t warped) {
  const std::size_t t = seq.frames();
  if (centre < 2 || centre > t || warped < 1 || warped >= t) {
    fail(ErrorKind::kRange, "warp centre/size outside the sequence");
  }
  const std::size_t left = centre - 1;
  const std::size_t right = t - left;
  TokenSequence out = seq;
  for (std::size_t s = 0; s < seq.stream_count(); ++s) {
    const auto& src = seq.streams[s];
    auto& dst = out.streams[s];
    for (std::size_t j = 0; j < warped; ++j) dst[j] = src[detail::nearest_index(j, left, warped)];
    for (std::size_t j = 0; j < t - warped; ++j) dst[warped + j] = src[left + detail::nearest_index(j, right, t - warped)];
  }
  return out;
}

inline WarpResult time_warp(const TokenSequence& seq, std::size_t warp_factor, Rng& rng) {
  const std::size_t t = seq.frames();
  const std::size_t w = warp_factor;
  if (t <= 2 * w + 1) return {seq, std::nullopt};
  // C >= 2 keeps the left segment non-empty when W = 0.
  const auto centre = uniform_int<std::size_t>(rng, std::max<std::size_t>(w + 1, 2), t - w - 1);
  const auto warped = uniform_int<std::size_t>(rng, centre - w, centre + w);
  return {time_warp_at(seq, centre, warped), std::make_pair(centre, warped)};
}

// ---------------------------------------------------------------------------
// Time masking

struct MaskRegion {
  std::size_t start = 0;
  std::size_t width = 0;
  bool operator==(const MaskRegion&) const = default;
};

struct TimeMaskPlan {
  std::size_t count = 0;      // N
  std::size_t max_width = 0;  // M
};

// N = min(cap, ceil(frac * T)), M = min(width_cap, floor(budget * T / N)).
inline TimeMaskPlan time_mask_plan(std::size_t frames, const AugmentationConfig& c) {
  TimeMaskPlan p;
  const double t = static_cast<double>(frames);
  p.count = std::min(c.time_mask_count_cap, static_cast<std::size_t>(std::ceil(detail::snap(c.time_mask_frac * t))));
  if (p.count == 0) return p;
  p.max_width = std::min(c.time_mask_width_cap,
                         static_cast<std::size_t>(std::floor(detail::snap(c.time_mask_budget_frac * t / static_cast<double>(p.count)))));
  return p;
}

struct TimeMaskResult {
  TokenSequence seq;
  TimeMaskPlan plan;
  std::vector<MaskRegion> regions;
};

inline TimeMaskResult time_mask(const TokenSequence& seq, const AugmentationConfig& c, Rng& rng) {
  TimeMaskResult r{seq, time_mask_plan(seq.frames(), c), {}};
  const std::size_t t = seq.frames();
  for (std::size_t i = 0; i < r.plan.count; ++i) {
    const auto width = std::min(uniform_int<std::size_t>(rng, 0, r.plan.max_width), t);
    const auto start = mask_start(uniform01(rng), t, width);
    r.regions.push_back({start, width});
    for (auto& stream : r.seq.streams) std::fill_n(stream.begin() + static_cast<std::ptrdiff_t>(start), width, c.mask_value);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Embedding masking

inline FeatureSequence embedding_mask_at(const FeatureSequence& seq, std::size_t start, std::size_t width) {
  if (start + width > seq.dim) fail(ErrorKind::kRange, "embedding mask band outside the feature dimension");
  FeatureSequence out = seq;
  for (std::size_t t = 0; t < out.frames; ++t) {
    auto row = out.row(t);
    std::fill_n(row.begin() + static_cast<std::ptrdiff_t>(start), width, 0.0f);
  }
  return out;
}

struct EmbeddingMaskResult {
  FeatureSequence seq;
  std::vector<MaskRegion> bands;
};

// Repeats `emb_mask_repeats` times: stride m ~ U{0..min(max_stride, F)},
// start floor(lambda * (F - m)), lambda ~ U[0,1). Bands may overlap.
inline EmbeddingMaskResult embedding_mask(const FeatureSequence& seq, const AugmentationConfig& c, Rng& rng) {
  EmbeddingMaskResult r{seq, {}};
  const std::size_t f = seq.dim;
  for (std::size_t i = 0; i < c.emb_mask_repeats; ++i) {
    const auto width = uniform_int<std::size_t>(rng, 0, std::min(c.emb_mask_max_stride, f));
    const auto start = mask_start(uniform01(rng), f, width);
    r.bands.push_back({start, width});
    r.seq = embedding_mask_at(r.seq, start, width);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Gaussian noise

struct NoiseResult {
  FeatureSequence seq;
  bool applied = false;
};

// One activation draw per sequence; when active, adds N(0, 1) to every element.
inline NoiseResult gaussian_noise(const FeatureSequence& seq, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) fail(ErrorKind::kConfig, "noise probability must be in [0,1]");
  NoiseResult r{seq, bernoulli(rng, prob)};
  if (r.applied) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : r.seq.data) v = static_cast<float>(static_cast<double>(v) + normal(rng));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Frame duplication

struct DuplicateResult {
  TokenSequence seq;
  std::size_t duplicated = 0;
};

// Each frame independently repeated once more with probability `prob`.
inline DuplicateResult duplicate_frames(const TokenSequence& seq, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) fail(ErrorKind::kConfig, "duplication probability must be in [0,1]");
  DuplicateResult r;
  r.seq.frame_rate = seq.frame_rate;
  r.seq.vocab_sizes = seq.vocab_sizes;
  r.seq.streams.assign(seq.stream_count(), {});
  const std::size_t t = seq.frames();
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t copies = bernoulli(rng, prob) ? 2 : 1;
    r.duplicated += copies - 1;
    for (std::size_t s = 0; s < seq.stream_count(); ++s) r.seq.streams[s].insert(r.seq.streams[s].end(), copies, seq.streams[s][i]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full per-sample policy

struct AugmentationReport {
  bool applied = false;
  std::optional<std::pair<std::size_t, std::size_t>> warp;
  TimeMaskPlan mask_plan;
  std::vector<MaskRegion> time_masks;
  std::size_t duplicated_frames = 0;
  std::vector<MaskRegion> embedding_masks;
  bool noise = false;
};

inline nlohmann::json to_json(const AugmentationReport& r) {
  auto regions = [](const std::vector<MaskRegion>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& m : v) a.push_back({{"start", m.start}, {"width", m.width}});
    return a;
  };
  nlohmann::json j{{"applied", r.applied},
                   {"time_mask_count", r.mask_plan.count},
                   {"time_mask_max_width", r.mask_plan.max_width},
                   {"time_masks", regions(r.time_masks)},
                   {"duplicated_frames", r.duplicated_frames},
                   {"embedding_masks", regions(r.embedding_masks)},
                   {"gaussian_noise", r.noise}};
  j["time_warp"] = r.warp ? nlohmann::json{{"centre", r.warp->first}, {"size", r.warp->second}} : nlohmann::json(nullptr);
  return j;
}

struct AugmentedSample {
  TokenSequence tokens;
  FeatureSequence features;
  AugmentationReport report;
};

using EmbedFn = std::function<FeatureSequence(const TokenSequence&)>;

// With probability sample_prob: time_warp -> time_mask -> frame duplication ->
// embed -> embedding_mask -> gaussian_noise. Otherwise tokens pass through and
// features are the plain lookup.
inline AugmentedSample augment_sample(const TokenSequence& tokens, const EmbedFn& embed, const AugmentationConfig& c,
                                      Rng& rng) {
  validate(c);
  AugmentedSample out;
  out.report.applied = bernoulli(rng, c.sample_prob);
  if (!out.report.applied) {
    out.tokens = tokens;
    out.features = embed(tokens);
    return out;
  }
  TokenSequence seq = tokens;
  if (c.enable_time_warp) {
    auto w = time_warp(seq, c.warp_factor, rng);
    seq = std::move(w.seq);
    out.report.warp = w.centre_and_size;
  }
  if (c.enable_time_mask && seq.frames() > 0) {
    auto m = time_mask(seq, c, rng);
    seq = std::move(m.seq);
    out.report.mask_plan = m.plan;
    out.report.time_masks = std::move(m.regions);
  }
  if (c.frame_dup_prob > 0.0) {
    auto d = duplicate_frames(seq, c.frame_dup_prob, rng);
    seq = std::move(d.seq);
    out.report.duplicated_frames = d.duplicated;
  }
  FeatureSequence feats = embed(seq);
  if (c.enable_embedding_mask) {
    auto e = embedding_mask(feats, c, rng);
    feats = std::move(e.seq);
    out.report.embedding_masks = std::move(e.bands);
  }
  auto n = gaussian_noise(feats, c.noise_prob, rng);
  out.report.noise = n.applied;
  out.tokens = std::move(seq);
  out.features = std::move(n.seq);
  return out;
}

// Per-utterance RNG stream derived from (config seed, utterance id).
inline AugmentedSample augment_utterance(const TokenSequence& tokens, const EmbedFn& embed, const AugmentationConfig& c,
                                         const std::string& utt_id) {
  Rng rng(derive_seed(c.seed, utt_id));
  return augment_sample(tokens, embed, c, rng);
}

}  // namespace dtok
