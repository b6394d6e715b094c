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

#include <random>

#include "dtok/tokens.hpp"
#include "oracles.hpp"

namespace dtok {
namespace {

TokenSequence random_tokens(std::mt19937_64& rng, std::size_t max_t = 300) {
  const std::size_t streams = 1 + rng() % 4;
  const std::size_t frames = rng() % (max_t + 1);
  TokenSequence seq;
  seq.frame_rate = (rng() % 2) ? 50.0 : 75.0;
  for (std::size_t s = 0; s < streams; ++s) {
    // Small vocabularies give long runs, large ones exercise wider token bytes.
    const std::uint32_t vocab = (rng() % 3 == 0) ? 1 + rng() % 3 : 1 + static_cast<std::uint32_t>(rng() % 100000);
    seq.vocab_sizes.push_back(vocab);
    std::vector<Token> stream(frames);
    for (auto& t : stream) t = static_cast<Token>(rng() % vocab);
    seq.streams.push_back(std::move(stream));
  }
  return seq;
}

TEST(Deduplicate, CollapsesRuns) {
  const auto r = deduplicate(TokenSequence::single({5, 5, 5, 2, 2, 7}, 10, 50.0));
  EXPECT_EQ(r.streams[0], (std::vector<dtok::Run>{{5, 3}, {2, 2}, {7, 1}}));
  EXPECT_EQ(r.original_frames, 6u);
}

TEST(Deduplicate, EmptyAndAllDistinct) {
  const auto e = deduplicate(TokenSequence::single({}, 10, 50.0));
  EXPECT_TRUE(e.streams[0].empty());
  EXPECT_EQ(e.original_frames, 0u);
  const auto d = deduplicate(TokenSequence::single({1, 2, 3, 4}, 10, 50.0));
  ASSERT_EQ(d.streams[0].size(), 4u);
  for (const auto& run : d.streams[0]) EXPECT_EQ(run.count, 1u);
}

TEST(Inflate, ExpandsRuns) {
  RunLengthSequence r{5, 50.0, {10}, {{{5, 3}, {2, 2}}}};
  EXPECT_EQ(inflate(r).streams[0], (std::vector<Token>{5, 5, 5, 2, 2}));
  RunLengthSequence single{1, 50.0, {10}, {{{9, 1}}}};
  EXPECT_EQ(inflate(single).streams[0], (std::vector<Token>{9}));
}

TEST(Inflate, RejectsAdjacentEqualRuns) {
  RunLengthSequence r{5, 50.0, {10}, {{{5, 3}, {5, 2}}}};
  try {
    inflate(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
  RunLengthSequence bad_total{6, 50.0, {10}, {{{5, 3}, {2, 2}}}};
  EXPECT_THROW(inflate(bad_total), Error);
  RunLengthSequence zero{0, 50.0, {10}, {{{5, 0}}}};
  EXPECT_THROW(inflate(zero), Error);
}

TEST(Deduplicate, InflateIsInverseOnFuzz) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto seq = random_tokens(rng, 64);
    const auto runs = deduplicate(seq);
    for (const auto& stream : runs.streams) {
      for (std::size_t j = 1; j < stream.size(); ++j) ASSERT_NE(stream[j].token, stream[j - 1].token);
    }
    ASSERT_EQ(inflate(runs), seq);
  }
}

TEST(Bandwidth, ReproducesTableValues) {
  const std::uint32_t wavlm[] = {2000};
  const std::vector<std::uint32_t> encodec(8, 1024);
  const std::vector<std::uint32_t> vqw2v(2, 320);
  EXPECT_NEAR(bandwidth_kbps(wavlm, 50.0), 0.5482892, 1e-6);
  EXPECT_EQ(format_kbps(bandwidth_kbps(wavlm, 50.0)), "0.55");
  EXPECT_DOUBLE_EQ(bandwidth_kbps(encodec, 75.0), 6.0);
  EXPECT_EQ(format_kbps(bandwidth_kbps(encodec, 75.0)), "6.00");
  EXPECT_NEAR(bandwidth_kbps(vqw2v, 100.0), 1.6643856, 1e-6);
  EXPECT_EQ(format_kbps(bandwidth_kbps(vqw2v, 100.0)), "1.66");
  EXPECT_DOUBLE_EQ(continuous_bandwidth_kbps(80, 32, 100.0), 256.0);
  EXPECT_EQ(format_kbps(continuous_bandwidth_kbps(80, 32, 100.0)), "256.00");
}

TEST(Bandwidth, RoundHalfUp) {
  EXPECT_DOUBLE_EQ(round_half_up(0.125), 0.13);
  EXPECT_DOUBLE_EQ(round_half_up(1.664), 1.66);
  EXPECT_DOUBLE_EQ(round_half_up(0.548), 0.55);
}

TEST(TokenFile, WidthIsMinimalWholeBytes) {
  EXPECT_EQ(tokio::token_width_bytes(2000), 2u);
  EXPECT_EQ(tokio::token_width_bytes(256), 1u);
  EXPECT_EQ(tokio::token_width_bytes(257), 2u);
  EXPECT_EQ(tokio::token_width_bytes(1), 1u);
  EXPECT_EQ(tokio::token_width_bytes(1u << 24), 3u);
  EXPECT_EQ(tokio::token_width_bytes(0xFFFFFFFFu), 4u);

  const auto seq = TokenSequence::single(std::vector<Token>(10, 1999), 2000, 50.0);
  const std::size_t header = 4 + 4 + 4 + 8 + 8 + 4;
  EXPECT_EQ(tokio::encode(seq).size(), header + 2 * 10);
}

TEST(TokenFile, RoundtripFuzzAndEmpty) {
  const auto dir = oracle::scratch_dir("tokfile");
  std::mt19937_64 rng(99);
  for (int i = 0; i < 10000; ++i) {
    const auto seq = random_tokens(rng, 40);
    const auto bytes = tokio::encode(seq);
    ASSERT_EQ(tokio::decode(bytes), seq);
    ASSERT_EQ(tokio::encode(tokio::decode(bytes)), bytes);
  }
  const auto empty = TokenSequence::single({}, 2000, 50.0);
  write_tokens(empty, dir / "e.dtts");
  EXPECT_EQ(read_tokens(dir / "e.dtts"), empty);
  std::filesystem::remove_all(dir);
}

TEST(TokenFile, OutOfVocabOnReadIsCorruption) {
  auto bytes = tokio::encode(TokenSequence::single({1, 2}, 3, 50.0));
  bytes.back() = 7;
  try {
    tokio::decode(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCorruption);
  }
  auto bad_magic = tokio::encode(TokenSequence::single({1, 2}, 3, 50.0));
  bad_magic[3] = 'X';
  EXPECT_THROW(tokio::decode(bad_magic), Error);
}

TEST(TokenFile, WriteRejectsInvalidSequence) {
  TokenSequence seq(50.0, {3, 3}, {{0, 1}, {2}});
  EXPECT_THROW(tokio::encode(seq), Error);
  EXPECT_THROW(tokio::encode(TokenSequence::single({3}, 3, 50.0)), Error);
}

TEST(TokenJson, Roundtrip) {
  TokenSequence seq(100.0, {320, 320}, {{1, 2, 3}, {4, 5, 6}});
  const auto j = tokens_to_json("utt1", seq);
  EXPECT_EQ(j["utt_id"], "utt1");
  EXPECT_EQ(tokens_from_json(nlohmann::json::parse(j.dump())), seq);
}

}  // namespace
}  // namespace dtok
