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

// Token -> dense feature lookup, multi-group fusion and frame-rate resampling.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtok/binary_io.hpp"
#include "dtok/embio.hpp"
#include "dtok/error.hpp"
#include "dtok/quantize.hpp"
#include "dtok/random.hpp"
#include "dtok/tokens.hpp"

namespace dtok {

inline constexpr std::size_t kDefaultEmbeddingDim = 80;

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;  // row-major

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  bool operator==(const DenseMatrix&) const = default;

  static DenseMatrix zeros(std::size_t r, std::size_t c) { return {r, c, std::vector<float>(r * c, 0.0f)}; }
  static DenseMatrix identity(std::size_t n) {
    auto m = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
  }
};

// i.i.d. uniform in [-1/sqrt(fan), 1/sqrt(fan)].
inline DenseMatrix random_uniform_matrix(std::size_t rows, std::size_t cols, std::size_t fan, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
  Rng rng(seed);
  DenseMatrix m = DenseMatrix::zeros(rows, cols);
  for (auto& v : m.data) v = static_cast<float>(-bound + 2.0 * bound * uniform01(rng));
  return m;
}

// Fusion projection initializer, (in_dim x out_dim).
inline DenseMatrix random_projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  return random_uniform_matrix(in_dim, out_dim, in_dim, seed);
}

struct EmbeddingTable {
  enum class InitMode : std::uint32_t { kRandom = 0, kCodebookProjected = 1 };

  std::size_t vocab = 0;
  std::size_t out_dim = kDefaultEmbeddingDim;
  std::vector<float> weights;  // vocab x out_dim
  InitMode init_mode = InitMode::kRandom;
  // Codebook-projected mode only: (codebook dim x out_dim).
  std::optional<DenseMatrix> projection;

  std::span<const float> row(std::size_t k) const { return {weights.data() + k * out_dim, out_dim}; }
  bool operator==(const EmbeddingTable&) const = default;
};

inline void validate(const EmbeddingTable& t) {
  if (t.vocab == 0 || t.out_dim == 0) fail(ErrorKind::kValidation, "embedding table needs vocab >= 1 and out_dim >= 1");
  if (t.weights.size() != t.vocab * t.out_dim) fail(ErrorKind::kValidation, "weights size != vocab * out_dim");
  for (float v : t.weights) {
    if (!std::isfinite(v)) fail(ErrorKind::kValidation, "non-finite embedding weight");
  }
  if (t.init_mode == EmbeddingTable::InitMode::kCodebookProjected) {
    if (!t.projection || t.projection->cols != t.out_dim) fail(ErrorKind::kValidation, "codebook-projected table needs a (F x out_dim) projection");
  }
}

inline EmbeddingTable make_random_table(std::size_t vocab, std::size_t out_dim, std::uint64_t seed) {
  EmbeddingTable t;
  t.vocab = vocab;
  t.out_dim = out_dim;
  t.init_mode = EmbeddingTable::InitMode::kRandom;
  t.weights = random_uniform_matrix(vocab, out_dim, out_dim, seed).data;
  return t;
}

// weights = centroids (K x F) * projection (F x out_dim).
inline EmbeddingTable make_codebook_projected_table(const Codebook& cb, DenseMatrix projection) {
  if (projection.rows != cb.dim) {
    fail(ErrorKind::kConfig, "projection rows " + std::to_string(projection.rows) + " != codebook dim " + std::to_string(cb.dim));
  }
  EmbeddingTable t;
  t.vocab = cb.entries;
  t.out_dim = projection.cols;
  t.init_mode = EmbeddingTable::InitMode::kCodebookProjected;
  t.weights.resize(t.vocab * t.out_dim);
  for (std::size_t k = 0; k < cb.entries; ++k) {
    auto c = cb.row(k);
    for (std::size_t j = 0; j < t.out_dim; ++j) {
      double s = 0.0;
      for (std::size_t f = 0; f < cb.dim; ++f) s += static_cast<double>(c[f]) * projection.at(f, j);
      t.weights[k * t.out_dim + j] = static_cast<float>(s);
    }
  }
  t.projection = std::move(projection);
  return t;
}

inline FeatureSequence embed_tokens(const TokenSequence& seq, const EmbeddingTable& table, std::size_t stream = 0) {
  if (stream >= seq.stream_count()) fail(ErrorKind::kConfig, "stream index out of range");
  if (seq.vocab_sizes[stream] != table.vocab) {
    fail(ErrorKind::kConfig, "stream vocab " + std::to_string(seq.vocab_sizes[stream]) + " != table vocab " +
                                 std::to_string(table.vocab));
  }
  const auto& toks = seq.streams[stream];
  FeatureSequence out(toks.size(), table.out_dim, seq.frame_rate);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    if (toks[t] >= table.vocab) fail(ErrorKind::kRange, "token " + std::to_string(toks[t]) + " out of vocab");
    auto r = table.row(toks[t]);
    std::copy(r.begin(), r.end(), out.row(t).begin());
  }
  return out;
}

// Per frame: concat(embed_s(token_s)) * projection, projection is (sum out_dim_s x out).
inline FeatureSequence fuse_groups(const TokenSequence& seq, std::span<const EmbeddingTable> tables,
                                   const DenseMatrix& projection) {
  if (tables.size() != seq.stream_count()) {
    fail(ErrorKind::kConfig, std::to_string(tables.size()) + " tables for " + std::to_string(seq.stream_count()) + " streams");
  }
  std::size_t concat_dim = 0;
  for (std::size_t s = 0; s < tables.size(); ++s) {
    if (tables[s].vocab != seq.vocab_sizes[s]) fail(ErrorKind::kConfig, "table " + std::to_string(s) + " vocab mismatch");
    concat_dim += tables[s].out_dim;
  }
  if (projection.rows != concat_dim) {
    fail(ErrorKind::kConfig, "fusion projection has " + std::to_string(projection.rows) + " rows, concat dim is " +
                                 std::to_string(concat_dim));
  }
  const std::size_t frames = seq.frames();
  FeatureSequence out(frames, projection.cols, seq.frame_rate);
  std::vector<double> acc(projection.cols);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::size_t offset = 0;
    for (std::size_t s = 0; s < tables.size(); ++s) {
      const Token tok = seq.streams[s][t];
      if (tok >= tables[s].vocab) fail(ErrorKind::kRange, "token " + std::to_string(tok) + " out of vocab");
      auto e = tables[s].row(tok);
      for (std::size_t i = 0; i < e.size(); ++i) {
        const double x = e[i];
        if (x == 0.0) continue;
        const float* p = projection.data.data() + (offset + i) * projection.cols;
        for (std::size_t j = 0; j < projection.cols; ++j) acc[j] += x * p[j];
      }
      offset += tables[s].out_dim;
    }
    auto row = out.row(t);
    for (std::size_t j = 0; j < projection.cols; ++j) row[j] = static_cast<float>(acc[j]);
  }
  return out;
}

// Output length round(T * target / source); frame j copies source frame
// min(floor(j * source / target), T - 1).
inline std::size_t resampled_length(std::size_t frames, double source_rate, double target_rate) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(frames) * target_rate / source_rate));
}

inline std::size_t nearest_source_index(std::size_t j, std::size_t frames, double source_rate, double target_rate) {
  const auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(j) * source_rate / target_rate));
  return std::min(idx, frames - 1);
}

inline FeatureSequence resample_nearest(const FeatureSequence& seq, double target_rate) {
  if (!(seq.frame_rate > 0.0) || !(target_rate > 0.0)) fail(ErrorKind::kConfig, "frame rates must be > 0");
  if (seq.frame_rate == target_rate) return seq;
  const std::size_t len = seq.frames == 0 ? 0 : resampled_length(seq.frames, seq.frame_rate, target_rate);
  FeatureSequence out(len, seq.dim, target_rate);
  for (std::size_t j = 0; j < len; ++j) {
    auto src = seq.row(nearest_source_index(j, seq.frames, seq.frame_rate, target_rate));
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// .dtem

namespace emio {

inline constexpr char kMagic[] = "DTEM";
inline constexpr std::uint32_t kVersion = 1;

// magic, u32 version, u32 K, u32 out_dim, u32 init_mode, u32 has_projection,
// [u32 projection rows, rows x out_dim f32], K x out_dim f32 weights.
inline std::vector<char> encode(const EmbeddingTable& t) {
  validate(t);
  io::Writer w;
  w.bytes({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.vocab));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.out_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.init_mode));
  w.put<std::uint32_t>(t.projection ? 1u : 0u);
  if (t.projection) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.projection->rows));
    w.put_all<float>(t.projection->data);
  }
  w.put_all<float>(t.weights);
  return w.buffer();
}

inline EmbeddingTable decode(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic({kMagic, 4});
  if (auto v = r.get<std::uint32_t>(); v != kVersion) fail(ErrorKind::kFormat, "unsupported version " + std::to_string(v));
  EmbeddingTable t;
  t.vocab = r.get<std::uint32_t>();
  t.out_dim = r.get<std::uint32_t>();
  const auto mode = r.get<std::uint32_t>();
  if (mode > 1) fail(ErrorKind::kFormat, "unknown init mode " + std::to_string(mode));
  t.init_mode = static_cast<EmbeddingTable::InitMode>(mode);
  if (r.get<std::uint32_t>() != 0) {
    DenseMatrix p;
    p.rows = r.get<std::uint32_t>();
    p.cols = t.out_dim;
    if (r.remaining() < p.rows * p.cols * sizeof(float)) fail(ErrorKind::kCorruption, "truncated projection block");
    p.data.resize(p.rows * p.cols);
    r.get_all<float>(p.data);
    t.projection = std::move(p);
  }
  if (r.remaining() != t.vocab * t.out_dim * sizeof(float)) fail(ErrorKind::kCorruption, "weight payload size does not match header");
  t.weights.resize(t.vocab * t.out_dim);
  r.get_all<float>(t.weights);
  validate(t);
  return t;
}

}  // namespace emio

inline std::size_t write_table(const EmbeddingTable& t, const std::filesystem::path& dest) {
  auto bytes = emio::encode(t);
  io::write_file_atomic(dest, bytes);
  return bytes.size();
}

inline EmbeddingTable read_table(const std::filesystem::path& src) { return emio::decode(io::read_file(src)); }

}  // namespace dtok
