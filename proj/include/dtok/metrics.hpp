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

// Token quality measures: PNMI, codebook usage and reconstruction error.
// Plug-in (maximum-likelihood) estimates, logarithms base 2.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtok/embio.hpp"
#include "dtok/error.hpp"
#include "dtok/tokens.hpp"

namespace dtok {

// Dense phone x token co-occurrence counts.
struct ContingencyTable {
  std::size_t phones = 0;
  std::size_t tokens = 0;
  std::vector<std::uint64_t> counts;  // phones x tokens

  ContingencyTable() = default;
  ContingencyTable(std::size_t p, std::size_t k) : phones(p), tokens(k), counts(p * k, 0) {}

  std::uint64_t& at(std::size_t p, std::size_t k) { return counts[p * tokens + k]; }
  std::uint64_t at(std::size_t p, std::size_t k) const { return counts[p * tokens + k]; }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  bool operator==(const ContingencyTable&) const = default;
};

// Cell-wise sum; the result covers the larger of the two shapes.
inline ContingencyTable merge(const ContingencyTable& a, const ContingencyTable& b) {
  ContingencyTable out(std::max(a.phones, b.phones), std::max(a.tokens, b.tokens));
  for (const auto* t : {&a, &b}) {
    for (std::size_t p = 0; p < t->phones; ++p) {
      for (std::size_t k = 0; k < t->tokens; ++k) out.at(p, k) += t->at(p, k);
    }
  }
  return out;
}

inline ContingencyTable build_contingency(const TokenSequence& seq, std::span<const std::uint32_t> phones,
                                          std::size_t stream = 0) {
  if (stream >= seq.stream_count()) fail(ErrorKind::kConfig, "stream index out of range");
  const auto& toks = seq.streams[stream];
  if (phones.size() != toks.size()) {
    fail(ErrorKind::kSchema, "alignment has " + std::to_string(phones.size()) + " labels for " +
                                 std::to_string(toks.size()) + " frames");
  }
  if (toks.empty()) return {};
  const std::size_t p = *std::max_element(phones.begin(), phones.end()) + 1;
  ContingencyTable table(p, seq.vocab_sizes[stream]);
  for (std::size_t t = 0; t < toks.size(); ++t) ++table.at(phones[t], toks[t]);
  return table;
}

// Joint variant over the product alphabet of all streams. Only observed symbol
// tuples get a column; `alphabet_cap` bounds the nominal product size.
inline ContingencyTable build_joint_contingency(const TokenSequence& seq, std::span<const std::uint32_t> phones,
                                                std::uint64_t alphabet_cap = std::uint64_t(1) << 32) {
  std::uint64_t product = 1;
  for (auto v : seq.vocab_sizes) {
    if (product > alphabet_cap / std::max<std::uint64_t>(1, v)) {
      fail(ErrorKind::kConfig, "joint alphabet exceeds cap " + std::to_string(alphabet_cap));
    }
    product *= v;
  }
  const std::size_t frames = seq.frames();
  if (phones.size() != frames) fail(ErrorKind::kSchema, "alignment length != frames");
  std::unordered_map<std::uint64_t, std::uint32_t> columns;
  std::vector<std::uint32_t> joint(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    std::uint64_t id = 0;
    for (std::size_t s = 0; s < seq.stream_count(); ++s) id = id * seq.vocab_sizes[s] + seq.streams[s][t];
    joint[t] = columns.emplace(id, static_cast<std::uint32_t>(columns.size())).first->second;
  }
  const auto compact = TokenSequence::single(std::move(joint), static_cast<std::uint32_t>(std::max<std::size_t>(1, columns.size())),
                                             seq.frame_rate);
  return build_contingency(compact, phones);
}

// I(phone; token) / H(phone).
inline double pnmi(const ContingencyTable& table) {
  const std::uint64_t n = table.total();
  if (n == 0) fail(ErrorKind::kUndefinedMetric, "PNMI of an empty table");
  std::vector<std::uint64_t> phone_n(table.phones, 0), token_n(table.tokens, 0);
  for (std::size_t p = 0; p < table.phones; ++p) {
    for (std::size_t k = 0; k < table.tokens; ++k) {
      phone_n[p] += table.at(p, k);
      token_n[k] += table.at(p, k);
    }
  }
  const double total = static_cast<double>(n);
  double h_phone = 0.0;
  std::size_t active = 0;
  for (auto c : phone_n) {
    if (c == 0) continue;
    ++active;
    h_phone += (static_cast<double>(c) / total) * std::log2(total / static_cast<double>(c));
  }
  if (active < 2) fail(ErrorKind::kUndefinedMetric, "phone entropy is zero");
  double mi = 0.0;
  for (std::size_t p = 0; p < table.phones; ++p) {
    for (std::size_t k = 0; k < table.tokens; ++k) {
      const auto c = table.at(p, k);
      if (c == 0) continue;
      const double ratio = (static_cast<double>(c) * total) /
                           (static_cast<double>(phone_n[p]) * static_cast<double>(token_n[k]));
      mi += (static_cast<double>(c) / total) * std::log2(ratio);
    }
  }
  return std::clamp(mi / h_phone, 0.0, 1.0);
}

struct CodebookStats {
  double utilization = 0.0;
  double entropy_bits = 0.0;
  double perplexity = 0.0;
  std::size_t distinct = 0;
};

inline CodebookStats codebook_stats(const TokenSequence& seq, std::size_t stream = 0) {
  if (stream >= seq.stream_count()) fail(ErrorKind::kConfig, "stream index out of range");
  const auto& toks = seq.streams[stream];
  if (toks.empty()) fail(ErrorKind::kUndefinedMetric, "codebook stats of an empty stream");
  std::vector<std::uint64_t> hist(seq.vocab_sizes[stream], 0);
  for (Token t : toks) ++hist.at(t);
  CodebookStats s;
  const double total = static_cast<double>(toks.size());
  for (auto c : hist) {
    if (c == 0) continue;
    ++s.distinct;
    s.entropy_bits += (static_cast<double>(c) / total) * std::log2(total / static_cast<double>(c));
  }
  s.utilization = static_cast<double>(s.distinct) / static_cast<double>(hist.size());
  s.perplexity = std::exp2(s.entropy_bits);
  return s;
}

struct ReconstructionError {
  double mse = 0.0;
  // +infinity when the reconstruction is exact.
  double snr_db = 0.0;
};

inline ReconstructionError reconstruction_error(const EmbeddingMatrix& original, const EmbeddingMatrix& reconstructed) {
  if (original.frames != reconstructed.frames || original.dim != reconstructed.dim) {
    fail(ErrorKind::kSchema, "shape mismatch between original and reconstruction");
  }
  if (original.data.empty()) fail(ErrorKind::kUndefinedMetric, "reconstruction error of an empty matrix");
  double signal = 0.0, error = 0.0;
  for (std::size_t i = 0; i < original.data.size(); ++i) {
    const double x = original.data[i];
    const double d = x - static_cast<double>(reconstructed.data[i]);
    signal += x * x;
    error += d * d;
  }
  if (signal == 0.0) fail(ErrorKind::kUndefinedMetric, "SNR undefined for a zero-energy signal");
  ReconstructionError r;
  r.mse = error / static_cast<double>(original.data.size());
  r.snr_db = error == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(signal / error);
  return r;
}

}  // namespace dtok
