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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dtok/augment.hpp"
#include "dtok/frontend.hpp"
#include "oracles.hpp"

namespace dtok {
namespace {

TokenSequence ramp(std::size_t t, std::size_t vocab = 100000) {
  std::vector<Token> v(t);
  for (std::size_t i = 0; i < t; ++i) v[i] = static_cast<Token>(i % vocab);
  return TokenSequence::single(std::move(v), static_cast<std::uint32_t>(vocab), 50.0);
}

FeatureSequence ones(std::size_t t, std::size_t f) {
  FeatureSequence s(t, f, 100.0);
  std::fill(s.data.begin(), s.data.end(), 1.0f);
  return s;
}

// Time warp

TEST(TimeWarp, ShortSequencesPassThrough) {
  Rng rng(1);
  for (std::size_t t : {0, 1, 100, 160, 161}) {
    const auto seq = ramp(t);
    const auto r = time_warp(seq, 80, rng);
    EXPECT_FALSE(r.centre_and_size.has_value()) << t;
    EXPECT_EQ(r.seq, seq);
  }
  const auto r = time_warp(ramp(162), 80, rng);
  ASSERT_TRUE(r.centre_and_size.has_value());
  EXPECT_EQ(r.centre_and_size->first, 81u);
}

TEST(TimeWarp, MatchesTensorInterpolationOracle) {
  const auto seq = ramp(400);
  const auto out = time_warp_at(seq, 200, 150);
  ASSERT_EQ(out.frames(), 400u);
  const auto& dst = out.streams[0];
  for (std::size_t j = 0; j < 150; ++j) EXPECT_EQ(dst[j], oracle::interp_nearest(j, 199, 150)) << j;
  for (std::size_t j = 0; j < 250; ++j) EXPECT_EQ(dst[150 + j], 199 + oracle::interp_nearest(j, 201, 250)) << j;
}

TEST(TimeWarp, PreservesLengthAndAlphabetAndDrawBounds) {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t t = 1 + rng() % 3000;
    const auto seq = ramp(t, 37);
    const auto r = time_warp(seq, 80, rng);
    ASSERT_EQ(r.seq.frames(), t);
    ASSERT_LE(std::set<Token>(r.seq.streams[0].begin(), r.seq.streams[0].end()).size(), std::min<std::size_t>(t, 37));
    for (Token x : r.seq.streams[0]) ASSERT_LT(x, 37u);
    if (t <= 161) {
      ASSERT_EQ(r.seq, seq);
      continue;
    }
    const auto [c, s] = *r.centre_and_size;
    ASSERT_GE(c, 81u);
    ASSERT_LE(c, t - 81);
    ASSERT_GE(s + 80, c);
    ASSERT_LE(s, c + 80);
  }
}

TEST(TimeWarp, IdentityWhenSizeEqualsSplit) {
  const auto seq = ramp(300);
  EXPECT_EQ(time_warp_at(seq, 151, 150), seq);
}

TEST(TimeWarp, MultiStreamWarpedAlike) {
  TokenSequence seq(50.0, {500, 500}, {ramp(500, 500).streams[0], ramp(500, 500).streams[0]});
  Rng rng(2);
  const auto r = time_warp(seq, 80, rng);
  EXPECT_EQ(r.seq.streams[0], r.seq.streams[1]);
}

TEST(TimeWarp, InvalidPointIsRangeError) {
  try {
    time_warp_at(ramp(10), 1, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRange);
  }
  EXPECT_THROW(time_warp_at(ramp(10), 5, 10), Error);
}

// Time masking

TEST(TimeMaskPlan, ReferenceLengths) {
  const AugmentationConfig c;
  struct Case {
    std::size_t t, n, m;
  };
  for (const auto& k : {Case{1000, 2, 75}, Case{100, 1, 15}, Case{500, 1, 75}, Case{10000, 10, 100}, Case{2000, 3, 100},
                        Case{0, 0, 0}, Case{1, 1, 0}}) {
    const auto p = time_mask_plan(k.t, c);
    EXPECT_EQ(p.count, k.n) << k.t;
    EXPECT_EQ(p.max_width, k.m) << k.t;
  }
}

TEST(TimeMaskPlan, ExactProductsAreNotRoundedUp) {
  // 0.0015 * 2000 is 3 in exact arithmetic but 3.0000000000000004 in binary.
  const AugmentationConfig c;
  EXPECT_EQ(time_mask_plan(2000, c).count, 3u);
  EXPECT_EQ(time_mask_plan(4000, c).count, 6u);
}

TEST(TimeMask, DrawsStayInsideBounds) {
  const AugmentationConfig c;
  for (std::size_t t : {100, 500, 1000, 10000}) {
    const auto seq = ramp(t);
    const auto plan = time_mask_plan(t, c);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      Rng rng(seed);
      const auto r = time_mask(seq, c, rng);
      ASSERT_EQ(r.regions.size(), plan.count);
      std::vector<bool> masked(t, false);
      for (const auto& m : r.regions) {
        ASSERT_LE(m.width, plan.max_width);
        ASSERT_LE(m.start + m.width, t);
        for (std::size_t i = m.start; i < m.start + m.width; ++i) masked[i] = true;
      }
      for (std::size_t i = 0; i < t; ++i) ASSERT_EQ(r.seq.streams[0][i], masked[i] ? c.mask_value : seq.streams[0][i]);
    }
  }
}

TEST(MaskStart, FloorOfScaledRange) {
  EXPECT_EQ(mask_start(0.0, 80, 27), 0u);
  EXPECT_EQ(mask_start(std::nextafter(1.0, 0.0), 80, 27), 52u);
  EXPECT_EQ(mask_start(0.5, 80, 27), 26u);
  EXPECT_EQ(mask_start(0.999, 80, 0), 79u);
}

// Embedding masking

TEST(EmbeddingMask, ZeroWidthIsIdentity) {
  const auto f = ones(4, 80);
  EXPECT_EQ(embedding_mask_at(f, 10, 0), f);
}

TEST(EmbeddingMask, UpperEdgeBand) {
  const auto f = ones(3, 80);
  const auto start = mask_start(std::nextafter(1.0, 0.0), 80, 27);
  const auto out = embedding_mask_at(f, start, 27);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 80; ++d) EXPECT_EQ(out.at(t, d), (d >= 52 && d < 79) ? 0.0f : 1.0f);
  EXPECT_THROW(embedding_mask_at(f, 60, 27), Error);
}

TEST(EmbeddingMask, BandsAreContiguousAndBounded) {
  const AugmentationConfig c;
  FeatureSequence f(2, 80, 100.0);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = 1.0f + static_cast<float>(i);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    Rng rng(seed);
    const auto r = embedding_mask(f, c, rng);
    ASSERT_EQ(r.bands.size(), 2u);
    std::vector<bool> in_band(80, false);
    for (const auto& b : r.bands) {
      ASSERT_LE(b.width, 27u);
      ASSERT_LE(b.start + b.width, 80u);
      for (std::size_t d = b.start; d < b.start + b.width; ++d) in_band[d] = true;
    }
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t d = 0; d < 80; ++d) ASSERT_EQ(r.seq.at(t, d), in_band[d] ? 0.0f : f.at(t, d));
  }
}

TEST(EmbeddingMask, StrideClampedToNarrowFeatures) {
  const AugmentationConfig c;
  const auto f = ones(2, 5);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    for (const auto& b : embedding_mask(f, c, rng).bands) ASSERT_LE(b.start + b.width, 5u);
  }
}

// Gaussian noise

TEST(GaussianNoise, ZeroProbabilityIsIdentity) {
  const auto f = ones(10, 8);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto r = gaussian_noise(f, 0.0, rng);
    ASSERT_FALSE(r.applied);
    ASSERT_EQ(r.seq, f);
  }
}

TEST(GaussianNoise, UnitVarianceWhenApplied) {
  FeatureSequence f(12500, 80, 100.0);
  Rng rng(9);
  const auto r = gaussian_noise(f, 1.0, rng);
  ASSERT_TRUE(r.applied);
  double sum = 0, sq = 0;
  for (float v : r.seq.data) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(r.seq.data.size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean), 0.01);
  EXPECT_LT(std::abs(var - 1.0), 0.01);
}

TEST(GaussianNoise, ActivationRateIsBinomial) {
  const auto f = ones(1, 4);
  Rng rng(11);
  const int n = 10000;
  int active = 0;
  for (int i = 0; i < n; ++i) active += gaussian_noise(f, 0.25, rng).applied ? 1 : 0;
  const double sd = std::sqrt(n * 0.25 * 0.75);
  EXPECT_LT(std::abs(active - n * 0.25), 3 * sd);
}

// Frame duplication

TEST(DuplicateFrames, ProbabilityEndpoints) {
  const auto seq = ramp(50);
  Rng rng(1);
  EXPECT_EQ(duplicate_frames(seq, 0.0, rng).seq, seq);
  const auto d = duplicate_frames(seq, 1.0, rng);
  ASSERT_EQ(d.seq.frames(), 100u);
  EXPECT_EQ(d.duplicated, 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(d.seq.streams[0][2 * i], i);
    EXPECT_EQ(d.seq.streams[0][2 * i + 1], i);
  }
}

std::vector<Token> run_tokens(const RunLengthSequence& r) {
  std::vector<Token> out;
  for (const auto& run : r.streams[0]) out.push_back(run.token);
  return out;
}

TEST(DuplicateFrames, InvisibleAfterDeduplication) {
  const auto seq = ramp(300, 7);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto d = duplicate_frames(seq, 0.3, rng);
    ASSERT_EQ(d.seq.frames(), 300 + d.duplicated);
    ASSERT_EQ(run_tokens(deduplicate(d.seq)), run_tokens(deduplicate(seq)));
  }
}

// Full policy

EmbedFn lookup(std::uint64_t seed) {
  auto table = std::make_shared<EmbeddingTable>(make_random_table(100000, 80, seed));
  return [table](const TokenSequence& s) { return embed_tokens(s, *table); };
}

TEST(AugmentSample, SkippedSampleIsPlainLookup) {
  AugmentationConfig c;
  c.sample_prob = 0.0;
  const auto seq = ramp(1000);
  const auto embed = lookup(1);
  const auto r = augment_utterance(seq, embed, c, "utt");
  EXPECT_FALSE(r.report.applied);
  EXPECT_EQ(r.tokens, seq);
  EXPECT_EQ(r.features, embed(seq));
}

TEST(AugmentSample, AllStagesDisabledIsIdentity) {
  AugmentationConfig c;
  c.sample_prob = 1.0;
  c.enable_time_warp = c.enable_time_mask = c.enable_embedding_mask = false;
  c.noise_prob = 0.0;
  const auto seq = ramp(1000);
  const auto embed = lookup(1);
  const auto r = augment_utterance(seq, embed, c, "utt");
  EXPECT_TRUE(r.report.applied);
  EXPECT_EQ(r.tokens, seq);
  EXPECT_EQ(r.features, embed(seq));
}

TEST(AugmentSample, DeterministicPerUtterance) {
  AugmentationConfig c;
  c.seed = 1234;
  c.sample_prob = 1.0;
  c.frame_dup_prob = 0.1;
  const auto seq = ramp(1000);
  const auto embed = lookup(2);
  const auto a = augment_utterance(seq, embed, c, "a");
  const auto b = augment_utterance(seq, embed, c, "a");
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(to_json(a.report), to_json(b.report));
  EXPECT_EQ(a.report.mask_plan.count, 2u);
  EXPECT_EQ(a.report.mask_plan.max_width, 75u);
  const auto other = augment_utterance(seq, embed, c, "b");
  EXPECT_NE(to_json(a.report), to_json(other.report));
}

TEST(AugmentSample, SampleRateNearConfigured) {
  AugmentationConfig c;
  const auto seq = ramp(20);
  const auto embed = lookup(3);
  int applied = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) applied += augment_utterance(seq, embed, c, "u" + std::to_string(i)).report.applied ? 1 : 0;
  EXPECT_LT(std::abs(applied - 0.9 * n), 3 * std::sqrt(n * 0.9 * 0.1));
}

// Configuration

TEST(AugmentConfig, KeyValueRoundtrip) {
  AugmentationConfig c;
  apply_setting(c, "warp_factor", "40");
  apply_setting(c, "noise_prob", "0.5");
  apply_setting(c, "enable_time_mask", "false");
  EXPECT_EQ(c.warp_factor, 40u);
  EXPECT_EQ(c.noise_prob, 0.5);
  EXPECT_FALSE(c.enable_time_mask);
  AugmentationConfig d;
  for (const auto& [k, v] : to_kv(c)) apply_setting(d, k, v);
  EXPECT_EQ(to_kv(d), to_kv(c));
}

TEST(AugmentConfig, RejectsBadValues) {
  AugmentationConfig c;
  auto expect_config = [](auto&& fn) {
    try {
      fn();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    }
  };
  expect_config([&] { apply_setting(c, "no_such_key", "1"); });
  expect_config([&] { apply_setting(c, "noise_prob", "abc"); });
  c.sample_prob = 1.5;
  expect_config([&] { validate(c); });
  c.sample_prob = 0.9;
  c.noise_prob = -0.1;
  expect_config([&] { validate(c); });
}

}  // namespace
}  // namespace dtok
