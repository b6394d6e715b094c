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

// Token streams, run-length codec, bitrate accounting and the .dtts format.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtok/binary_io.hpp"
#include "dtok/error.hpp"

namespace dtok {

using Token = std::uint32_t;

// S parallel streams of T tokens each (groups or RVQ stages), one vocab per stream.
struct TokenSequence {
  double frame_rate = 100.0;
  std::vector<std::uint32_t> vocab_sizes;
  std::vector<std::vector<Token>> streams;

  TokenSequence() = default;
  TokenSequence(double rate, std::vector<std::uint32_t> vocabs, std::vector<std::vector<Token>> toks)
      : frame_rate(rate), vocab_sizes(std::move(vocabs)), streams(std::move(toks)) {}

  // Single-stream convenience.
  static TokenSequence single(std::vector<Token> tokens, std::uint32_t vocab, double rate) {
    return TokenSequence(rate, {vocab}, {std::move(tokens)});
  }

  std::size_t stream_count() const { return streams.size(); }
  std::size_t frames() const { return streams.empty() ? 0 : streams.front().size(); }

  bool operator==(const TokenSequence&) const = default;
};

inline void validate(const TokenSequence& seq) {
  if (seq.streams.empty()) fail(ErrorKind::kValidation, "token sequence needs at least one stream");
  if (seq.vocab_sizes.size() != seq.streams.size()) fail(ErrorKind::kValidation, "vocab_sizes count != stream count");
  if (!(seq.frame_rate > 0.0)) fail(ErrorKind::kValidation, "frame_rate must be > 0");
  const std::size_t t = seq.streams.front().size();
  for (std::size_t s = 0; s < seq.streams.size(); ++s) {
    if (seq.vocab_sizes[s] == 0) fail(ErrorKind::kValidation, "vocab size 0 in stream " + std::to_string(s));
    if (seq.streams[s].size() != t) fail(ErrorKind::kValidation, "streams differ in length");
    for (Token tok : seq.streams[s]) {
      if (tok >= seq.vocab_sizes[s]) {
        fail(ErrorKind::kValidation, "token " + std::to_string(tok) + " out of vocab " +
                                         std::to_string(seq.vocab_sizes[s]) + " in stream " + std::to_string(s));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// De-duplication

struct Run {
  Token token = 0;
  std::uint32_t count = 0;
  bool operator==(const Run&) const = default;
};

struct RunLengthSequence {
  std::size_t original_frames = 0;
  double frame_rate = 100.0;
  std::vector<std::uint32_t> vocab_sizes;
  std::vector<std::vector<Run>> streams;

  bool operator==(const RunLengthSequence&) const = default;
};

inline RunLengthSequence deduplicate(const TokenSequence& seq) {
  RunLengthSequence out;
  out.original_frames = seq.frames();
  out.frame_rate = seq.frame_rate;
  out.vocab_sizes = seq.vocab_sizes;
  out.streams.reserve(seq.streams.size());
  for (const auto& stream : seq.streams) {
    std::vector<Run> runs;
    for (Token tok : stream) {
      if (!runs.empty() && runs.back().token == tok) {
        ++runs.back().count;
      } else {
        runs.push_back({tok, 1});
      }
    }
    out.streams.push_back(std::move(runs));
  }
  return out;
}

inline TokenSequence inflate(const RunLengthSequence& runs) {
  TokenSequence out;
  out.frame_rate = runs.frame_rate;
  out.vocab_sizes = runs.vocab_sizes;
  for (std::size_t s = 0; s < runs.streams.size(); ++s) {
    std::vector<Token> stream;
    stream.reserve(runs.original_frames);
    const auto& rs = runs.streams[s];
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].count == 0) fail(ErrorKind::kValidation, "run count 0");
      if (i > 0 && rs[i - 1].token == rs[i].token) fail(ErrorKind::kValidation, "adjacent runs share a token");
      stream.insert(stream.end(), rs[i].count, rs[i].token);
    }
    if (stream.size() != runs.original_frames) fail(ErrorKind::kValidation, "run counts do not sum to original_frames");
    out.streams.push_back(std::move(stream));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bitrate

// frame_rate * sum(log2 vocab) / 1000.
inline double bandwidth_kbps(std::span<const std::uint32_t> vocab_sizes, double frame_rate) {
  double bits = 0.0;
  for (auto v : vocab_sizes) {
    if (v == 0) fail(ErrorKind::kConfig, "vocab size must be >= 1");
    bits += std::log2(static_cast<double>(v));
  }
  return frame_rate * bits / 1000.0;
}

// Continuous features: dims * bits_per_value * frame_rate / 1000.
inline double continuous_bandwidth_kbps(std::size_t dims, unsigned bits_per_value, double frame_rate) {
  return static_cast<double>(dims) * bits_per_value * frame_rate / 1000.0;
}

inline double round_half_up(double value, int decimals = 2) {
  const double scale = std::pow(10.0, decimals);
  return std::floor(value * scale + 0.5) / scale;
}

inline std::string format_kbps(double kbps) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", round_half_up(kbps, 2));
  return buf;
}

// ---------------------------------------------------------------------------
// .dtts

namespace tokio {

inline constexpr char kMagic[] = "DTTS";
inline constexpr std::uint32_t kVersion = 1;

// Whole bytes needed for tokens in [0, vocab).
inline unsigned token_width_bytes(std::uint32_t vocab) {
  const unsigned bits = static_cast<unsigned>(std::bit_width(vocab > 0 ? vocab - 1 : 0u));
  return bits == 0 ? 1 : (bits + 7) / 8;
}

inline std::vector<char> encode(const TokenSequence& seq) {
  validate(seq);
  io::Writer w;
  w.bytes({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.stream_count()));
  w.put<std::uint64_t>(seq.frames());
  w.put<double>(seq.frame_rate);
  for (auto v : seq.vocab_sizes) w.put<std::uint32_t>(v);
  for (std::size_t s = 0; s < seq.stream_count(); ++s) {
    const unsigned width = token_width_bytes(seq.vocab_sizes[s]);
    for (Token tok : seq.streams[s]) w.put_uint(tok, width);
  }
  return w.buffer();
}

inline TokenSequence decode(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic({kMagic, 4});
  if (auto v = r.get<std::uint32_t>(); v != kVersion) fail(ErrorKind::kFormat, "unsupported version " + std::to_string(v));
  const auto streams = r.get<std::uint32_t>();
  const auto frames = r.get<std::uint64_t>();
  TokenSequence seq;
  seq.frame_rate = r.get<double>();
  if (streams == 0) fail(ErrorKind::kFormat, "zero streams");
  std::size_t payload = 0;
  for (std::uint32_t s = 0; s < streams; ++s) {
    seq.vocab_sizes.push_back(r.get<std::uint32_t>());
    if (seq.vocab_sizes.back() == 0) fail(ErrorKind::kFormat, "vocab size 0");
    payload += frames * token_width_bytes(seq.vocab_sizes.back());
  }
  if (r.remaining() != payload) fail(ErrorKind::kCorruption, "payload size does not match header");
  for (std::uint32_t s = 0; s < streams; ++s) {
    const unsigned width = token_width_bytes(seq.vocab_sizes[s]);
    std::vector<Token> stream(frames);
    for (auto& tok : stream) {
      const auto v = r.get_uint(width);
      if (v >= seq.vocab_sizes[s]) fail(ErrorKind::kCorruption, "out-of-vocab token " + std::to_string(v));
      tok = static_cast<Token>(v);
    }
    seq.streams.push_back(std::move(stream));
  }
  return seq;
}

}  // namespace tokio

inline std::size_t write_tokens(const TokenSequence& seq, const std::filesystem::path& dest) {
  auto bytes = tokio::encode(seq);
  io::write_file_atomic(dest, bytes);
  return bytes.size();
}

inline TokenSequence read_tokens(const std::filesystem::path& src) { return tokio::decode(io::read_file(src)); }

// JSON-lines interchange record: {"utt_id", "frame_rate", "vocab_sizes", "tokens": [[...], ...]}.
inline nlohmann::json tokens_to_json(const std::string& utt_id, const TokenSequence& seq) {
  return {{"utt_id", utt_id}, {"frame_rate", seq.frame_rate}, {"vocab_sizes", seq.vocab_sizes}, {"tokens", seq.streams}};
}

inline TokenSequence tokens_from_json(const nlohmann::json& j) {
  TokenSequence seq;
  try {
    seq.frame_rate = j.at("frame_rate").get<double>();
    seq.vocab_sizes = j.at("vocab_sizes").get<std::vector<std::uint32_t>>();
    seq.streams = j.at("tokens").get<std::vector<std::vector<Token>>>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kFormat, std::string("bad token record: ") + ex.what());
  }
  validate(seq);
  return seq;
}

}  // namespace dtok
