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

// Embedding matrices (.dtek), utterance manifests and frame ingestion.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtok/binary_io.hpp"
#include "dtok/error.hpp"
#include "dtok/random.hpp"

namespace dtok {

// T x F row-major frames at a fixed frame rate.
struct EmbeddingMatrix {
  std::size_t frames = 0;
  std::size_t dim = 1;
  double frame_rate = 100.0;
  std::vector<float> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t t, std::size_t f, double rate)
      : frames(t), dim(f), frame_rate(rate), data(t * f, 0.0f) {}
  EmbeddingMatrix(std::size_t t, std::size_t f, double rate, std::vector<float> values)
      : frames(t), dim(f), frame_rate(rate), data(std::move(values)) {}

  std::span<float> row(std::size_t t) { return {data.data() + t * dim, dim}; }
  std::span<const float> row(std::size_t t) const { return {data.data() + t * dim, dim}; }
  float& at(std::size_t t, std::size_t f) { return data[t * dim + f]; }
  float at(std::size_t t, std::size_t f) const { return data[t * dim + f]; }

  bool operator==(const EmbeddingMatrix&) const = default;
};

// Post-lookup feature sequences share the matrix layout.
using FeatureSequence = EmbeddingMatrix;

inline void validate(const EmbeddingMatrix& m) {
  if (m.dim < 1) fail(ErrorKind::kValidation, "dim must be >= 1");
  if (!(m.frame_rate > 0.0) || !std::isfinite(m.frame_rate)) fail(ErrorKind::kValidation, "frame_rate must be > 0");
  if (m.data.size() != m.frames * m.dim) fail(ErrorKind::kValidation, "data length != frames * dim");
  for (float v : m.data) {
    if (!std::isfinite(v)) fail(ErrorKind::kValidation, "non-finite value in embedding matrix");
  }
}

namespace embio {

inline constexpr char kMagic[] = "DTEK";
inline constexpr std::uint32_t kVersion = 1;
// magic + version + F + frame_rate + T
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8 + 8;

inline std::vector<char> encode(const EmbeddingMatrix& m) {
  validate(m);
  io::Writer w;
  w.bytes({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim));
  w.put<double>(m.frame_rate);
  w.put<std::uint64_t>(m.frames);
  w.put_all<float>(m.data);
  return w.buffer();
}

inline EmbeddingMatrix decode(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic({kMagic, 4});
  if (auto v = r.get<std::uint32_t>(); v != kVersion) fail(ErrorKind::kFormat, "unsupported version " + std::to_string(v));
  EmbeddingMatrix m;
  m.dim = r.get<std::uint32_t>();
  m.frame_rate = r.get<double>();
  m.frames = r.get<std::uint64_t>();
  if (m.dim == 0) fail(ErrorKind::kFormat, "dim 0 in header");
  if (r.remaining() != m.frames * m.dim * sizeof(float)) {
    fail(ErrorKind::kCorruption, "payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                                     std::to_string(m.frames * m.dim * sizeof(float)));
  }
  m.data.resize(m.frames * m.dim);
  r.get_all<float>(m.data);
  validate(m);
  return m;
}

}  // namespace embio

// Returns the number of bytes written.
inline std::size_t write_embedding(const EmbeddingMatrix& m, const std::filesystem::path& dest) {
  auto bytes = embio::encode(m);
  io::write_file_atomic(dest, bytes);
  return bytes.size();
}

inline EmbeddingMatrix read_embedding(const std::filesystem::path& src) {
  auto bytes = io::read_file(src);
  return embio::decode(bytes);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string utt_id;
  std::filesystem::path path;
  std::size_t frames = 0;
  double frame_rate = 100.0;
  double duration_s = 0.0;
  std::optional<std::vector<std::uint32_t>> phone_alignment;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  double total_seconds() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.duration_s;
    return s;
  }
  bool operator==(const Manifest&) const = default;
};

inline void validate(const Manifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.utt_id).second) fail(ErrorKind::kSchema, "duplicate utt_id '" + e.utt_id + "'");
    if (!(e.frame_rate > 0.0)) fail(ErrorKind::kSchema, e.utt_id + ": frame_rate must be > 0");
    const double period = 1.0 / e.frame_rate;
    if (std::abs(static_cast<double>(e.frames) / e.frame_rate - e.duration_s) > period) {
      fail(ErrorKind::kSchema, e.utt_id + ": duration_s inconsistent with frames/frame_rate");
    }
    if (e.phone_alignment && e.phone_alignment->size() != e.frames) {
      fail(ErrorKind::kSchema, e.utt_id + ": phone_alignment length != frames");
    }
  }
}

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json j{{"utt_id", e.utt_id},
                   {"path", e.path.generic_string()},
                   {"frames", e.frames},
                   {"frame_rate", e.frame_rate},
                   {"duration_s", e.duration_s}};
  if (e.phone_alignment) j["phone_alignment"] = *e.phone_alignment;
  return j;
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"utt_id", "path", "frames", "frame_rate", "duration_s", "phone_alignment"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) fail(ErrorKind::kSchema, "unknown manifest field '" + key + "'");
  }
  try {
    ManifestEntry e;
    e.utt_id = j.at("utt_id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.frames = j.at("frames").get<std::size_t>();
    e.frame_rate = j.at("frame_rate").get<double>();
    e.duration_s = j.at("duration_s").get<double>();
    if (j.contains("phone_alignment") && !j["phone_alignment"].is_null()) {
      e.phone_alignment = j["phone_alignment"].get<std::vector<std::uint32_t>>();
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kSchema, std::string("bad manifest entry: ") + ex.what());
  }
}

inline std::string to_jsonl(const Manifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

inline Manifest manifest_from_jsonl(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      fail(ErrorKind::kFormat, "manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
    m.entries.push_back(manifest_entry_from_json(j));
  }
  validate(m);
  return m;
}

// Relative entry paths are resolved against the manifest's directory.
inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest " + path.string());
  Manifest m = manifest_from_jsonl(in);
  const auto base = path.parent_path();
  for (auto& e : m.entries) {
    if (e.path.is_relative()) e.path = base / e.path;
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  validate(m);
  io::write_text_atomic(path, to_jsonl(m));
}

// Integer phone label -> phone symbol, one "<label> <symbol>" pair per line.
using PhoneTable = std::map<std::uint32_t, std::string>;

inline PhoneTable read_phone_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open phone table " + path.string());
  PhoneTable table;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::uint32_t label;
    std::string symbol;
    if (!(ss >> label)) continue;
    if (!(ss >> symbol)) fail(ErrorKind::kFormat, "phone table line missing symbol: " + line);
    if (!table.emplace(label, symbol).second) fail(ErrorKind::kSchema, "duplicate phone label " + std::to_string(label));
  }
  return table;
}

inline void write_phone_table(const PhoneTable& table, const std::filesystem::path& path) {
  std::string text;
  for (const auto& [label, symbol] : table) text += std::to_string(label) + " " + symbol + "\n";
  io::write_text_atomic(path, text);
}

// ---------------------------------------------------------------------------
// Subset sampling and frame iteration

// Shortest prefix of a seeded random permutation whose duration reaches the target.
inline Manifest sample_subset(const Manifest& manifest, double target_hours, std::uint64_t seed) {
  if (!(target_hours > 0.0)) fail(ErrorKind::kConfig, "target_hours must be > 0");
  const double target_s = target_hours * 3600.0;
  if (manifest.total_seconds() < target_s) {
    fail(ErrorKind::kCapacity, "manifest holds " + std::to_string(manifest.total_seconds() / 3600.0) +
                                   " h, fewer than the requested " + std::to_string(target_hours) + " h");
  }
  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Manifest subset;
  double total = 0.0;
  for (std::size_t idx : order) {
    if (total >= target_s) break;
    subset.entries.push_back(manifest.entries[idx]);
    total += manifest.entries[idx].duration_s;
  }
  return subset;
}

struct FrameSampler {
  enum class Kind { kAll, kBernoulli } kind = Kind::kAll;
  double p = 1.0;

  static FrameSampler all() { return {}; }
  static FrameSampler bernoulli(double prob) {
    if (!(prob >= 0.0 && prob <= 1.0)) fail(ErrorKind::kConfig, "bernoulli probability must be in [0,1]");
    return {Kind::kBernoulli, prob};
  }
};

// Pulls frames utterance by utterance; only one matrix is resident at a time.
class FrameStream {
 public:
  FrameStream(Manifest manifest, FrameSampler sampler, std::uint64_t seed)
      : manifest_(std::move(manifest)), sampler_(sampler), rng_(seed) {}

  // Next selected frame, or std::nullopt at the end. The span stays valid until
  // the following call.
  std::optional<std::span<const float>> next() {
    for (;;) {
      while (frame_ >= current_.frames) {
        if (utt_ >= manifest_.entries.size()) return std::nullopt;
        load(manifest_.entries[utt_++]);
      }
      const std::size_t t = frame_++;
      if (sampler_.kind == FrameSampler::Kind::kAll || bernoulli(rng_, sampler_.p)) return current_.row(t);
    }
  }

  // Feature dimension, known once the first file has been opened.
  std::optional<std::size_t> dim() const { return dim_; }

 private:
  void load(const ManifestEntry& e) {
    current_ = read_embedding(e.path);
    frame_ = 0;
    if (dim_ && *dim_ != current_.dim) {
      fail(ErrorKind::kSchema, e.utt_id + ": dim " + std::to_string(current_.dim) + " differs from " + std::to_string(*dim_));
    }
    dim_ = current_.dim;
  }

  Manifest manifest_;
  FrameSampler sampler_;
  Rng rng_;
  EmbeddingMatrix current_;
  std::size_t utt_ = 0;
  std::size_t frame_ = 0;
  std::optional<std::size_t> dim_;
};

inline FrameStream iterate_frames(Manifest manifest, FrameSampler sampler, std::uint64_t seed) {
  return FrameStream(std::move(manifest), sampler, seed);
}

// Materializes a stream into one matrix (frame_rate of the result is nominal).
inline EmbeddingMatrix collect(FrameStream& stream, double frame_rate = 100.0) {
  EmbeddingMatrix out;
  out.frame_rate = frame_rate;
  while (auto frame = stream.next()) {
    out.dim = frame->size();
    out.data.insert(out.data.end(), frame->begin(), frame->end());
    ++out.frames;
  }
  if (auto d = stream.dim()) out.dim = *d;
  return out;
}

}  // namespace dtok
