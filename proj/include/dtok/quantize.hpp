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

// Codebook training and application: plain k-means, grouped VQ and residual VQ.
//
// Training accumulates in double and stores centroids as float. The assignment
// step runs on a fixed chunk grid (see for_each_chunk) and every reduction is
// done serially in frame order, so codebooks are bit-identical for a given seed
// regardless of the worker count.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dtok/binary_io.hpp"
#include "dtok/embio.hpp"
#include "dtok/error.hpp"
#include "dtok/random.hpp"
#include "dtok/tokens.hpp"

namespace dtok {

// Row-major view over `rows() x dim` frames.
template <typename Scalar>
struct FrameView {
  std::span<const Scalar> values;
  std::size_t dim = 1;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const Scalar> row(std::size_t i) const { return values.subspan(i * dim, dim); }
};

inline FrameView<float> view(const EmbeddingMatrix& m) { return {m.data, m.dim}; }

struct Codebook {
  std::size_t entries = 0;
  std::size_t dim = 1;
  std::vector<float> centroids;  // entries x dim
  std::size_t trained_on_frames = 0;

  std::span<const float> row(std::size_t k) const { return {centroids.data() + k * dim, dim}; }
  bool operator==(const Codebook&) const = default;
};

inline void validate(const Codebook& cb) {
  if (cb.entries == 0 || cb.dim == 0) fail(ErrorKind::kValidation, "codebook needs K >= 1 and F >= 1");
  if (cb.centroids.size() != cb.entries * cb.dim) fail(ErrorKind::kValidation, "centroid payload size != K * F");
  for (float v : cb.centroids) {
    if (!std::isfinite(v)) fail(ErrorKind::kValidation, "non-finite centroid");
  }
}

template <typename A, typename B>
double squared_distance(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

struct Nearest {
  std::uint32_t index = 0;
  double distance = 0.0;
};

// Brute-force argmin over `entries` rows of `centroids`; ties go to the lower index.
template <typename C, typename X>
Nearest nearest_centroid(std::span<const C> centroids, std::size_t entries, std::span<const X> x) {
  const std::size_t dim = x.size();
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < entries; ++k) {
    const double d = squared_distance(centroids.subspan(k * dim, dim), x);
    if (d < best.distance) best = {static_cast<std::uint32_t>(k), d};
  }
  return best;
}

inline Nearest nearest_centroid(const Codebook& cb, std::span<const float> x) {
  return nearest_centroid(std::span<const float>(cb.centroids), cb.entries, x);
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansConfig {
  enum class Init { kPlusPlus, kRandom };
  enum class Mode { kLloyd, kMiniBatch };

  std::size_t max_iters = 100;
  // Lloyd stops once (prev - cur) <= tolerance * prev.
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  Init init = Init::kPlusPlus;
  Mode mode = Mode::kLloyd;
  std::size_t batch_size = 1024;
  unsigned workers = 1;
};

struct TrainReport {
  // Lloyd: full-data inertia per assignment pass. Minibatch: batch inertia
  // scaled to the full frame count.
  std::vector<double> inertia_trace;
  std::size_t iterations = 0;
  // Full-data inertia of the returned codebook.
  double inertia = 0.0;
  std::size_t frames = 0;
  bool degenerate = false;
  std::vector<std::string> warnings;
};

struct KMeansResult {
  Codebook codebook;
  TrainReport report;
};

inline nlohmann::json to_json(const TrainReport& r) {
  return {{"inertia_trace", r.inertia_trace}, {"iterations", r.iterations}, {"inertia", r.inertia},
          {"frames", r.frames},               {"degenerate", r.degenerate}, {"warnings", r.warnings}};
}

namespace detail {

inline constexpr std::size_t kAssignChunk = 2048;

template <typename Scalar>
struct RowHash {
  const FrameView<Scalar>* frames;
  std::size_t operator()(std::size_t i) const {
    std::size_t h = 0xCBF29CE484222325ULL;
    for (Scalar v : frames->row(i)) {
      // +0.0 and -0.0 compare equal, so they must hash equal.
      const double d = v == Scalar(0) ? 0.0 : static_cast<double>(v);
      h = (h ^ std::hash<double>{}(d)) * 0x100000001B3ULL;
    }
    return h;
  }
};

template <typename Scalar>
struct RowEq {
  const FrameView<Scalar>* frames;
  bool operator()(std::size_t a, std::size_t b) const {
    auto ra = frames->row(a);
    auto rb = frames->row(b);
    return std::equal(ra.begin(), ra.end(), rb.begin());
  }
};

// First-occurrence indices of distinct rows, stopping once `limit` are found.
template <typename Scalar>
std::vector<std::size_t> distinct_rows(const FrameView<Scalar>& frames, std::size_t limit) {
  std::unordered_set<std::size_t, RowHash<Scalar>, RowEq<Scalar>> seen(64, RowHash<Scalar>{&frames},
                                                                          RowEq<Scalar>{&frames});
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < frames.rows() && order.size() < limit; ++i) {
    if (seen.insert(i).second) order.push_back(i);
  }
  return order;
}

template <typename Scalar>
void assign_all(const FrameView<Scalar>& frames, std::span<const double> centroids, std::size_t k,
                std::vector<std::uint32_t>& labels, std::vector<double>& dist, unsigned workers) {
  const std::size_t n = frames.rows();
  labels.resize(n);
  dist.resize(n);
  for_each_chunk(n, kAssignChunk, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto nn = nearest_centroid(centroids, k, frames.row(i));
      labels[i] = nn.index;
      dist[i] = nn.distance;
    }
  });
}

template <typename Scalar>
std::vector<double> init_plus_plus(const FrameView<Scalar>& frames, std::size_t k, Rng& rng, unsigned workers) {
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.dim;
  std::vector<double> centroids;
  centroids.reserve(k * dim);
  auto take = [&](std::size_t i) {
    for (Scalar v : frames.row(i)) centroids.push_back(static_cast<double>(v));
  };
  take(uniform_int<std::size_t>(rng, 0, n - 1));
  std::vector<double> d2(n);
  for_each_chunk(n, kAssignChunk, workers, [&](std::size_t, std::size_t b, std::size_t e) {
    std::span<const double> c0(centroids.data(), dim);
    for (std::size_t i = b; i < e; ++i) d2[i] = squared_distance(c0, frames.row(i));
  });
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = uniform01(rng) * total;
    std::size_t pick = n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) {
      // Rounding left the cumulative sum short; take the last positive-weight row.
      for (std::size_t i = n; i-- > 0;) {
        if (d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    take(pick);
    std::span<const double> cn(centroids.data() + c * dim, dim);
    for_each_chunk(n, kAssignChunk, workers, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) d2[i] = std::min(d2[i], squared_distance(cn, frames.row(i)));
    });
  }
  return centroids;
}

template <typename Scalar>
std::vector<double> init_random(const FrameView<Scalar>& frames, std::size_t k, Rng& rng) {
  const std::size_t n = frames.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[uniform_int<std::size_t>(rng, i, n - 1)]);
  std::vector<double> centroids;
  centroids.reserve(k * frames.dim);
  for (std::size_t i = 0; i < k; ++i) {
    for (Scalar v : frames.row(idx[i])) centroids.push_back(static_cast<double>(v));
  }
  return centroids;
}

// Moves each empty cluster onto the frame currently farthest from its centroid.
template <typename Scalar>
void reseed_empty(const FrameView<Scalar>& frames, std::vector<double>& centroids, std::size_t k,
                  const std::vector<std::uint32_t>& labels, const std::vector<std::size_t>& counts, unsigned workers) {
  std::vector<std::size_t> empty;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) empty.push_back(c);
  }
  if (empty.empty()) return;
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.dim;
  std::vector<double> far(n);
  for_each_chunk(n, kAssignChunk, workers, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      far[i] = squared_distance(std::span<const double>(centroids.data() + labels[i] * dim, dim), frames.row(i));
    }
  });
  for (std::size_t c : empty) {
    const auto it = std::max_element(far.begin(), far.end());
    const auto i = static_cast<std::size_t>(it - far.begin());
    auto row = frames.row(i);
    std::copy(row.begin(), row.end(), centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    *it = 0.0;
  }
}

inline Codebook to_codebook(const std::vector<double>& centroids, std::size_t k, std::size_t dim, std::size_t frames) {
  Codebook cb;
  cb.entries = k;
  cb.dim = dim;
  cb.trained_on_frames = frames;
  cb.centroids.assign(centroids.begin(), centroids.end());
  return cb;
}

template <typename Scalar>
double full_inertia(const FrameView<Scalar>& frames, const Codebook& cb, unsigned workers) {
  std::vector<double> centroids(cb.centroids.begin(), cb.centroids.end());
  std::vector<std::uint32_t> labels;
  std::vector<double> dist;
  assign_all(frames, centroids, cb.entries, labels, dist, workers);
  return std::accumulate(dist.begin(), dist.end(), 0.0);
}

template <typename Scalar>
void lloyd(const FrameView<Scalar>& frames, std::vector<double>& centroids, std::size_t k, const KMeansConfig& cfg,
           TrainReport& report) {
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.dim;
  const std::size_t max_iters = std::max<std::size_t>(1, cfg.max_iters);
  std::vector<std::uint32_t> labels;
  std::vector<double> dist;
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0;; ++iter) {
    assign_all(frames, centroids, k, labels, dist, cfg.workers);
    const double inertia = std::accumulate(dist.begin(), dist.end(), 0.0);
    const bool converged = inertia == 0.0 || (!report.inertia_trace.empty() &&
                                              report.inertia_trace.back() - inertia <= cfg.tolerance * report.inertia_trace.back());
    report.inertia_trace.push_back(inertia);
    report.inertia = inertia;
    if (converged || iter + 1 >= max_iters) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = labels[i];
      ++counts[c];
      auto row = frames.row(i);
      for (std::size_t f = 0; f < dim; ++f) sums[c * dim + f] += static_cast<double>(row[f]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t f = 0; f < dim; ++f) centroids[c * dim + f] = sums[c * dim + f] / static_cast<double>(counts[c]);
    }
    reseed_empty(frames, centroids, k, labels, counts, cfg.workers);
  }
  report.iterations = report.inertia_trace.size();
}

template <typename Scalar>
void minibatch(const FrameView<Scalar>& frames, std::vector<double>& centroids, std::size_t k, const KMeansConfig& cfg,
               Rng& rng, TrainReport& report) {
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.dim;
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t max_iters = std::max<std::size_t>(1, cfg.max_iters);
  const double alpha = std::min(1.0, 2.0 * static_cast<double>(batch) / static_cast<double>(n + 1));
  constexpr std::size_t kPatience = 10;

  std::vector<double> counts(k, 0.0);
  std::vector<std::size_t> picks(batch);
  std::vector<std::uint32_t> labels(batch);
  std::vector<double> dist(batch);
  double ewa = 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (auto& p : picks) p = uniform_int<std::size_t>(rng, 0, n - 1);
    for_each_chunk(batch, detail::kAssignChunk, cfg.workers, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j) {
        const auto nn = nearest_centroid(std::span<const double>(centroids), k, frames.row(picks[j]));
        labels[j] = nn.index;
        dist[j] = nn.distance;
      }
    });
    double batch_inertia = 0.0;
    for (std::size_t j = 0; j < batch; ++j) {
      batch_inertia += dist[j];
      const auto c = labels[j];
      counts[c] += 1.0;
      const double eta = 1.0 / counts[c];
      auto row = frames.row(picks[j]);
      for (std::size_t f = 0; f < dim; ++f) {
        double& v = centroids[c * dim + f];
        v += eta * (static_cast<double>(row[f]) - v);
      }
    }
    const double estimate = batch_inertia * static_cast<double>(n) / static_cast<double>(batch);
    report.inertia_trace.push_back(estimate);
    ewa = iter == 0 ? estimate : ewa * (1.0 - alpha) + estimate * alpha;
    if (ewa < best * (1.0 - cfg.tolerance)) {
      best = ewa;
      stale = 0;
    } else if (++stale >= kPatience) {
      break;
    }
  }
  report.iterations = report.inertia_trace.size();
}

}  // namespace detail

template <typename Scalar>
KMeansResult train_kmeans(const FrameView<Scalar>& frames, std::size_t k, const KMeansConfig& cfg = {}) {
  const std::size_t n = frames.rows();
  if (n == 0) fail(ErrorKind::kInput, "empty frame stream");
  if (k == 0) fail(ErrorKind::kConfig, "k must be >= 1");
  if (frames.dim == 0) fail(ErrorKind::kConfig, "dim must be >= 1");
  if (n < k) fail(ErrorKind::kInput, "need at least k=" + std::to_string(k) + " frames, got " + std::to_string(n));

  KMeansResult result;
  result.report.frames = n;
  const std::size_t dim = frames.dim;

  const auto distinct = detail::distinct_rows(frames, k);
  if (distinct.size() < k) {
    // Fewer distinct points than clusters: keep every distinct point once and
    // fill the remaining slots with copies. Copies never win an assignment
    // because ties resolve to the lower index.
    std::vector<double> centroids;
    centroids.reserve(k * dim);
    for (std::size_t c = 0; c < k; ++c) {
      for (Scalar v : frames.row(distinct[c % distinct.size()])) centroids.push_back(static_cast<double>(v));
    }
    result.codebook = detail::to_codebook(centroids, k, dim, n);
    result.report.degenerate = true;
    result.report.warnings.push_back("only " + std::to_string(distinct.size()) + " distinct frames for k=" +
                                     std::to_string(k) + "; duplicate centroids were filled in");
    result.report.inertia_trace = {0.0};
    result.report.iterations = 0;
    result.report.inertia = 0.0;
    return result;
  }

  Rng rng(cfg.seed);
  std::vector<double> centroids = cfg.init == KMeansConfig::Init::kPlusPlus
                                      ? detail::init_plus_plus(frames, k, rng, cfg.workers)
                                      : detail::init_random(frames, k, rng);
  if (cfg.mode == KMeansConfig::Mode::kLloyd) {
    detail::lloyd(frames, centroids, k, cfg, result.report);
    result.codebook = detail::to_codebook(centroids, k, dim, n);
  } else {
    detail::minibatch(frames, centroids, k, cfg, rng, result.report);
    result.codebook = detail::to_codebook(centroids, k, dim, n);
    result.report.inertia = detail::full_inertia(frames, result.codebook, cfg.workers);
  }
  return result;
}

inline KMeansResult train_kmeans(const EmbeddingMatrix& frames, std::size_t k, const KMeansConfig& cfg = {}) {
  return train_kmeans(view(frames), k, cfg);
}

inline KMeansResult train_kmeans(FrameStream& stream, std::size_t k, const KMeansConfig& cfg = {}) {
  const auto frames = collect(stream);
  return train_kmeans(view(frames), k, cfg);
}

namespace detail {

inline std::vector<Token> assign_slice(const Codebook& cb, const EmbeddingMatrix& m, std::size_t offset, unsigned workers) {
  std::vector<Token> out(m.frames);
  for_each_chunk(m.frames, kAssignChunk, workers, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t t = b; t < e; ++t) out[t] = nearest_centroid(cb, m.row(t).subspan(offset, cb.dim)).index;
  });
  return out;
}

}  // namespace detail

inline TokenSequence assign(const Codebook& cb, const EmbeddingMatrix& m, unsigned workers = 1) {
  if (m.dim != cb.dim) {
    fail(ErrorKind::kSchema, "matrix dim " + std::to_string(m.dim) + " != codebook dim " + std::to_string(cb.dim));
  }
  return TokenSequence::single(detail::assign_slice(cb, m, 0, workers), static_cast<std::uint32_t>(cb.entries),
                               m.frame_rate);
}

// ---------------------------------------------------------------------------
// Grouped VQ: contiguous equal slices of the feature axis, one codebook each.

struct GroupedCodebook {
  std::vector<Codebook> groups;
  std::size_t total_dim = 0;

  std::size_t group_dim() const { return groups.empty() ? 0 : total_dim / groups.size(); }
  bool operator==(const GroupedCodebook&) const = default;
};

struct GroupedResult {
  GroupedCodebook codebook;
  std::vector<TrainReport> reports;
};

template <typename Scalar>
GroupedResult train_grouped(const FrameView<Scalar>& frames, std::span<const std::size_t> k_per_group,
                            const KMeansConfig& cfg = {}) {
  const std::size_t groups = k_per_group.size();
  if (groups == 0) fail(ErrorKind::kConfig, "groups must be >= 1");
  if (frames.dim % groups != 0) {
    fail(ErrorKind::kConfig, "dim " + std::to_string(frames.dim) + " not divisible by " + std::to_string(groups) + " groups");
  }
  const std::size_t sub = frames.dim / groups;
  const std::size_t n = frames.rows();
  GroupedResult result;
  result.codebook.total_dim = frames.dim;
  std::vector<Scalar> slice(n * sub);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = frames.row(i).subspan(g * sub, sub);
      std::copy(row.begin(), row.end(), slice.begin() + static_cast<std::ptrdiff_t>(i * sub));
    }
    KMeansConfig group_cfg = cfg;
    group_cfg.seed = cfg.seed + g;
    auto r = train_kmeans(FrameView<Scalar>{slice, sub}, k_per_group[g], group_cfg);
    result.codebook.groups.push_back(std::move(r.codebook));
    result.reports.push_back(std::move(r.report));
  }
  return result;
}

template <typename Scalar>
GroupedResult train_grouped(const FrameView<Scalar>& frames, std::size_t groups, std::size_t k_per_group,
                            const KMeansConfig& cfg = {}) {
  const std::vector<std::size_t> ks(groups, k_per_group);
  return train_grouped(frames, std::span<const std::size_t>(ks), cfg);
}

inline TokenSequence assign_grouped(const GroupedCodebook& cb, const EmbeddingMatrix& m, unsigned workers = 1) {
  if (m.dim != cb.total_dim) {
    fail(ErrorKind::kSchema, "matrix dim " + std::to_string(m.dim) + " != grouped codebook dim " + std::to_string(cb.total_dim));
  }
  TokenSequence seq;
  seq.frame_rate = m.frame_rate;
  const std::size_t sub = cb.group_dim();
  for (std::size_t g = 0; g < cb.groups.size(); ++g) {
    seq.vocab_sizes.push_back(static_cast<std::uint32_t>(cb.groups[g].entries));
    seq.streams.push_back(detail::assign_slice(cb.groups[g], m, g * sub, workers));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Residual VQ

struct ResidualCodebookStack {
  std::vector<Codebook> stages;

  std::size_t dim() const { return stages.empty() ? 0 : stages.front().dim; }
  bool operator==(const ResidualCodebookStack&) const = default;
};

struct ResidualResult {
  ResidualCodebookStack stack;
  std::vector<TrainReport> reports;
  // Mean squared residual norm per frame after each stage.
  std::vector<double> residual_energy;
};

template <typename Scalar>
ResidualResult train_rvq(const FrameView<Scalar>& frames, std::span<const std::size_t> k_per_stage,
                         const KMeansConfig& cfg = {}) {
  const std::size_t stages = k_per_stage.size();
  if (stages == 0) fail(ErrorKind::kConfig, "stages must be >= 1");
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.dim;
  std::vector<double> residual(frames.values.begin(), frames.values.end());
  ResidualResult result;
  for (std::size_t q = 0; q < stages; ++q) {
    KMeansConfig stage_cfg = cfg;
    stage_cfg.seed = cfg.seed + q;
    auto r = train_kmeans(FrameView<double>{residual, dim}, k_per_stage[q], stage_cfg);
    const Codebook& cb = r.codebook;
    double energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> res(residual.data() + i * dim, dim);
      const auto nn = nearest_centroid(std::span<const float>(cb.centroids), cb.entries, std::span<const double>(res));
      auto c = cb.row(nn.index);
      for (std::size_t f = 0; f < dim; ++f) {
        res[f] -= static_cast<double>(c[f]);
        energy += res[f] * res[f];
      }
    }
    result.residual_energy.push_back(energy / static_cast<double>(n));
    result.stack.stages.push_back(std::move(r.codebook));
    result.reports.push_back(std::move(r.report));
  }
  return result;
}

template <typename Scalar>
ResidualResult train_rvq(const FrameView<Scalar>& frames, std::size_t stages, std::size_t k_per_stage,
                         const KMeansConfig& cfg = {}) {
  const std::vector<std::size_t> ks(stages, k_per_stage);
  return train_rvq(frames, std::span<const std::size_t>(ks), cfg);
}

// Greedy per-stage nearest codeword on the running residual.
inline TokenSequence rvq_encode(const ResidualCodebookStack& stack, const EmbeddingMatrix& m, std::size_t use_stages) {
  if (use_stages == 0 || use_stages > stack.stages.size()) {
    fail(ErrorKind::kRange, "use_stages " + std::to_string(use_stages) + " outside [1, " +
                                std::to_string(stack.stages.size()) + "]");
  }
  if (m.dim != stack.dim()) fail(ErrorKind::kSchema, "matrix dim " + std::to_string(m.dim) + " != stack dim " + std::to_string(stack.dim()));
  TokenSequence seq;
  seq.frame_rate = m.frame_rate;
  seq.streams.assign(use_stages, std::vector<Token>(m.frames));
  for (std::size_t q = 0; q < use_stages; ++q) seq.vocab_sizes.push_back(static_cast<std::uint32_t>(stack.stages[q].entries));
  std::vector<double> res(m.dim);
  for (std::size_t t = 0; t < m.frames; ++t) {
    auto row = m.row(t);
    std::copy(row.begin(), row.end(), res.begin());
    for (std::size_t q = 0; q < use_stages; ++q) {
      const Codebook& cb = stack.stages[q];
      const auto nn = nearest_centroid(std::span<const float>(cb.centroids), cb.entries, std::span<const double>(res));
      seq.streams[q][t] = nn.index;
      auto c = cb.row(nn.index);
      for (std::size_t f = 0; f < m.dim; ++f) res[f] -= static_cast<double>(c[f]);
    }
  }
  return seq;
}

inline TokenSequence rvq_encode(const ResidualCodebookStack& stack, const EmbeddingMatrix& m) {
  return rvq_encode(stack, m, stack.stages.size());
}

// Sum of the selected codewords over the streams present in `tokens`.
inline EmbeddingMatrix rvq_decode(const ResidualCodebookStack& stack, const TokenSequence& tokens) {
  if (tokens.stream_count() > stack.stages.size()) {
    fail(ErrorKind::kRange, std::to_string(tokens.stream_count()) + " token streams for a " +
                                std::to_string(stack.stages.size()) + "-stage stack");
  }
  const std::size_t frames = tokens.frames();
  const std::size_t dim = stack.dim();
  std::vector<double> acc(frames * dim, 0.0);
  for (std::size_t q = 0; q < tokens.stream_count(); ++q) {
    const Codebook& cb = stack.stages[q];
    if (tokens.streams[q].size() != frames) fail(ErrorKind::kValidation, "streams differ in length");
    for (std::size_t t = 0; t < frames; ++t) {
      const Token tok = tokens.streams[q][t];
      if (tok >= cb.entries) {
        fail(ErrorKind::kRange, "token " + std::to_string(tok) + " out of range for stage " + std::to_string(q) +
                                    " with " + std::to_string(cb.entries) + " entries");
      }
      auto c = cb.row(tok);
      for (std::size_t f = 0; f < dim; ++f) acc[t * dim + f] += static_cast<double>(c[f]);
    }
  }
  return EmbeddingMatrix(frames, dim, tokens.frame_rate, std::vector<float>(acc.begin(), acc.end()));
}

// ---------------------------------------------------------------------------
// .dtcb files

using Quantizer = std::variant<Codebook, GroupedCodebook, ResidualCodebookStack>;

enum class QuantizerKind : std::uint32_t { kPlain = 0, kGrouped = 1, kResidual = 2 };

inline QuantizerKind kind_of(const Quantizer& q) { return static_cast<QuantizerKind>(q.index()); }

inline const char* kind_name(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::kPlain: return "kmeans";
    case QuantizerKind::kGrouped: return "grouped";
    case QuantizerKind::kResidual: return "rvq";
  }
  return "unknown";
}

inline std::vector<const Codebook*> books_of(const Quantizer& q) {
  std::vector<const Codebook*> out;
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, Codebook>) {
          out.push_back(&v);
        } else if constexpr (std::is_same_v<V, GroupedCodebook>) {
          for (const auto& g : v.groups) out.push_back(&g);
        } else {
          for (const auto& s : v.stages) out.push_back(&s);
        }
      },
      q);
  return out;
}

inline std::size_t input_dim(const Quantizer& q) {
  return std::visit(
      [](const auto& v) -> std::size_t {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, Codebook>) return v.dim;
        else if constexpr (std::is_same_v<V, GroupedCodebook>) return v.total_dim;
        else return v.dim();
      },
      q);
}

// Applies any quantizer; residual stacks use every stage.
inline TokenSequence encode(const Quantizer& q, const EmbeddingMatrix& m, unsigned workers = 1) {
  return std::visit(
      [&](const auto& v) -> TokenSequence {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, Codebook>) return assign(v, m, workers);
        else if constexpr (std::is_same_v<V, GroupedCodebook>) return assign_grouped(v, m, workers);
        else return rvq_encode(v, m);
      },
      q);
}

// Inverse lookup for any quantizer: centroid rows, concatenated group slices,
// or summed residual stages.
inline EmbeddingMatrix dequantize(const Quantizer& q, const TokenSequence& tokens) {
  return std::visit(
      [&](const auto& v) -> EmbeddingMatrix {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, ResidualCodebookStack>) {
          return rvq_decode(v, tokens);
        } else {
          std::vector<const Codebook*> books;
          if constexpr (std::is_same_v<V, Codebook>) books.push_back(&v);
          else for (const auto& g : v.groups) books.push_back(&g);
          if (tokens.stream_count() != books.size()) {
            fail(ErrorKind::kSchema, std::to_string(tokens.stream_count()) + " token streams for " +
                                         std::to_string(books.size()) + " codebooks");
          }
          const std::size_t sub = books.front()->dim;
          EmbeddingMatrix out(tokens.frames(), sub * books.size(), tokens.frame_rate);
          for (std::size_t g = 0; g < books.size(); ++g) {
            for (std::size_t t = 0; t < tokens.frames(); ++t) {
              const Token tok = tokens.streams[g][t];
              if (tok >= books[g]->entries) fail(ErrorKind::kRange, "token " + std::to_string(tok) + " out of range");
              auto c = books[g]->row(tok);
              std::copy(c.begin(), c.end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(g * sub));
            }
          }
          return out;
        }
      },
      q);
}

namespace cbio {

inline constexpr char kMagic[] = "DTCB";
inline constexpr std::uint32_t kVersion = 1;

// magic, u32 version, u32 kind, u32 count (G or Q; 1 for plain), u32 K[count],
// u32 F, then each book's K x dim f32 payload in order.
inline std::vector<char> encode(const Quantizer& q) {
  const auto books = books_of(q);
  if (books.empty()) fail(ErrorKind::kValidation, "quantizer has no codebooks");
  for (const auto* b : books) validate(*b);
  io::Writer w;
  w.bytes({kMagic, 4});
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind_of(q)));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(books.size()));
  for (const auto* b : books) w.put<std::uint32_t>(static_cast<std::uint32_t>(b->entries));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(input_dim(q)));
  for (const auto* b : books) w.put_all<float>(b->centroids);
  return w.buffer();
}

inline Quantizer decode(std::span<const char> bytes) {
  io::Reader r(bytes);
  r.expect_magic({kMagic, 4});
  if (auto v = r.get<std::uint32_t>(); v != kVersion) fail(ErrorKind::kFormat, "unsupported version " + std::to_string(v));
  const auto kind = r.get<std::uint32_t>();
  if (kind > 2) fail(ErrorKind::kFormat, "unknown quantizer kind " + std::to_string(kind));
  const auto count = r.get<std::uint32_t>();
  if (count == 0) fail(ErrorKind::kFormat, "zero codebooks");
  if (kind == 0 && count != 1) fail(ErrorKind::kFormat, "plain codebook file with count != 1");
  std::vector<std::uint32_t> ks(count);
  for (auto& k : ks) {
    k = r.get<std::uint32_t>();
    if (k == 0) fail(ErrorKind::kFormat, "codebook with K = 0");
  }
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) fail(ErrorKind::kFormat, "F = 0");
  const auto kind_enum = static_cast<QuantizerKind>(kind);
  if (kind_enum == QuantizerKind::kGrouped && dim % count != 0) fail(ErrorKind::kFormat, "F not divisible by G");
  const std::size_t book_dim = kind_enum == QuantizerKind::kGrouped ? dim / count : dim;
  std::size_t expected = 0;
  for (auto k : ks) expected += std::size_t(k) * book_dim * sizeof(float);
  if (r.remaining() != expected) fail(ErrorKind::kCorruption, "centroid payload size does not match header");
  std::vector<Codebook> books;
  for (auto k : ks) {
    Codebook cb;
    cb.entries = k;
    cb.dim = book_dim;
    cb.centroids.resize(std::size_t(k) * book_dim);
    r.get_all<float>(cb.centroids);
    validate(cb);
    books.push_back(std::move(cb));
  }
  switch (kind_enum) {
    case QuantizerKind::kPlain: return books.front();
    case QuantizerKind::kGrouped: return GroupedCodebook{std::move(books), dim};
    case QuantizerKind::kResidual: return ResidualCodebookStack{std::move(books)};
  }
  fail(ErrorKind::kFormat, "unknown quantizer kind");
}

}  // namespace cbio

inline std::size_t write_quantizer(const Quantizer& q, const std::filesystem::path& dest) {
  auto bytes = cbio::encode(q);
  io::write_file_atomic(dest, bytes);
  return bytes.size();
}

inline Quantizer read_quantizer(const std::filesystem::path& src) { return cbio::decode(io::read_file(src)); }

// Training metadata lives next to the codebook as "<file>.json".
inline std::filesystem::path sidecar_path(const std::filesystem::path& codebook) {
  auto p = codebook;
  p += ".json";
  return p;
}

}  // namespace dtok
