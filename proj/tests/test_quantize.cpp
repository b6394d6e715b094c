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

#include <algorithm>
#include <random>

#include "dtok/metrics.hpp"
#include "dtok/quantize.hpp"
#include "oracles.hpp"

namespace dtok {
namespace {

EmbeddingMatrix random_matrix(std::size_t t, std::size_t f, std::uint64_t seed, double rate = 100.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  EmbeddingMatrix m(t, f, rate);
  for (auto& v : m.data) v = n(rng);
  return m;
}

Codebook random_codebook(std::size_t k, std::size_t f, std::uint64_t seed) {
  auto m = random_matrix(k, f, seed);
  return Codebook{k, f, m.data, 0};
}

TEST(TrainKMeans, SingleClusterIsMean) {
  EmbeddingMatrix m(2, 2, 100.0, {0, 0, 2, 0});
  const auto r = train_kmeans(m, 1);
  EXPECT_EQ(r.codebook.centroids, (std::vector<float>{1.0f, 0.0f}));
  EXPECT_DOUBLE_EQ(r.report.inertia, 2.0);
}

TEST(TrainKMeans, OneDimensionalTwoClustersMatchesEnumeration) {
  const std::vector<double> pts{0, 1, 10, 11};
  const auto best = oracle::best_two_partition(pts);  // {1.0, 0.5, 10.5}
  EmbeddingMatrix m(4, 1, 100.0, {0, 1, 10, 11});
  for (auto init : {KMeansConfig::Init::kPlusPlus, KMeansConfig::Init::kRandom}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      KMeansConfig cfg;
      cfg.seed = seed;
      cfg.init = init;
      const auto r = train_kmeans(m, 2, cfg);
      auto c = r.codebook.centroids;
      std::sort(c.begin(), c.end());
      EXPECT_NEAR(r.report.inertia, best.inertia, 1e-9);
      EXPECT_NEAR(c[0], best.lo, 1e-9);
      EXPECT_NEAR(c[1], best.hi, 1e-9);
    }
  }
  EXPECT_DOUBLE_EQ(best.inertia, 1.0);
}

TEST(TrainKMeans, RecoversWellSeparatedClusters) {
  const auto mix = oracle::gaussian_mixture(4, 4, 4000, 0.01, 10.0, 5);
  ASSERT_GE(oracle::min_centre_distance(mix.centres, 4, 4), 10.0);
  const auto r = train_kmeans(FrameView<float>{mix.points, 4}, 4, KMeansConfig{.seed = 1});
  const auto [err, bijective] = oracle::recovery_error(mix.centres, r.codebook.centroids, 4, 4);
  EXPECT_TRUE(bijective);
  EXPECT_LT(err, 0.05);
}

TEST(TrainKMeans, LloydInertiaNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto m = random_matrix(300, 3, seed);
    KMeansConfig cfg;
    cfg.seed = seed;
    cfg.tolerance = 0.0;
    cfg.init = seed % 2 ? KMeansConfig::Init::kRandom : KMeansConfig::Init::kPlusPlus;
    const auto r = train_kmeans(m, 12, cfg);
    for (std::size_t i = 1; i < r.report.inertia_trace.size(); ++i) {
      EXPECT_LE(r.report.inertia_trace[i], r.report.inertia_trace[i - 1]);
    }
  }
}

TEST(TrainKMeans, StopsAtMaxIters) {
  const auto m = random_matrix(500, 2, 3);
  KMeansConfig cfg;
  cfg.max_iters = 3;
  cfg.tolerance = 0.0;
  EXPECT_LE(train_kmeans(m, 20, cfg).report.iterations, 3u);
}

TEST(TrainKMeans, EmptyClusterIsReseeded) {
  // Random init from duplicated points makes an exact duplicate centroid that
  // loses every tie; it must be moved rather than left empty.
  EmbeddingMatrix m(6, 1, 100.0, {0, 0, 0, 0, 5, 9});
  bool saw_reseed = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    KMeansConfig cfg{.seed = seed, .init = KMeansConfig::Init::kRandom};
    const auto r = train_kmeans(m, 3, cfg);
    auto c = r.codebook.centroids;
    std::sort(c.begin(), c.end());
    EXPECT_EQ(c, (std::vector<float>{0, 5, 9}));
    saw_reseed |= r.report.iterations > 1;
  }
  EXPECT_TRUE(saw_reseed);
}

TEST(TrainKMeans, DegenerateInputFillsDuplicatesAndWarns) {
  EmbeddingMatrix m(5, 1, 100.0, {1, 1, 2, 2, 1});
  const auto r = train_kmeans(m, 4);
  EXPECT_TRUE(r.report.degenerate);
  EXPECT_FALSE(r.report.warnings.empty());
  EXPECT_EQ(r.codebook.entries, 4u);
  EXPECT_EQ(r.codebook.centroids, (std::vector<float>{1, 2, 1, 2}));
  const auto toks = assign(r.codebook, m);
  EXPECT_EQ(toks.streams[0], (std::vector<Token>{0, 0, 1, 1, 0}));
}

TEST(TrainKMeans, InputErrors) {
  EmbeddingMatrix empty(0, 3, 100.0);
  try {
    train_kmeans(empty, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
  EXPECT_THROW(train_kmeans(random_matrix(3, 2, 0), 0), Error);
  EXPECT_THROW(train_kmeans(random_matrix(3, 2, 0), 4), Error);
}

TEST(TrainKMeans, DeterministicAcrossRunsAndWorkerCounts) {
  const auto m = random_matrix(5000, 4, 11);
  for (auto mode : {KMeansConfig::Mode::kLloyd, KMeansConfig::Mode::kMiniBatch}) {
    KMeansConfig cfg{.max_iters = 30, .seed = 42, .mode = mode, .batch_size = 256, .workers = 1};
    const auto a = train_kmeans(m, 16, cfg);
    const auto b = train_kmeans(m, 16, cfg);
    cfg.workers = 4;
    const auto c = train_kmeans(m, 16, cfg);
    EXPECT_EQ(cbio::encode(a.codebook), cbio::encode(b.codebook));
    EXPECT_EQ(cbio::encode(a.codebook), cbio::encode(c.codebook));
    EXPECT_EQ(a.report.inertia_trace, c.report.inertia_trace);
  }
}

TEST(TrainKMeans, MiniBatchApproachesLloyd) {
  const auto mix = oracle::gaussian_mixture(6, 6, 6000, 0.05, 10.0, 8);
  KMeansConfig cfg{.max_iters = 200, .seed = 3, .mode = KMeansConfig::Mode::kMiniBatch, .batch_size = 256};
  const auto r = train_kmeans(FrameView<float>{mix.points, 6}, 6, cfg);
  const auto [err, bijective] = oracle::recovery_error(mix.centres, r.codebook.centroids, 6, 6);
  EXPECT_TRUE(bijective);
  EXPECT_LT(err, 0.1);
  EXPECT_FALSE(r.report.inertia_trace.empty());
}

TEST(TrainKMeans, DistinctCentroidsWhenEnoughDistinctPoints) {
  const auto m = random_matrix(200, 2, 4);
  const auto r = train_kmeans(m, 32, KMeansConfig{.seed = 2});
  std::set<std::vector<float>> rows;
  for (std::size_t k = 0; k < 32; ++k) rows.emplace(r.codebook.row(k).begin(), r.codebook.row(k).end());
  EXPECT_EQ(rows.size(), 32u);
}

TEST(Assign, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng() % 64, f = 1 + rng() % 8, t = 1 + rng() % 1000;
    const auto cb = random_codebook(k, f, rng());
    const auto m = random_matrix(t, f, rng(), 50.0);
    const auto seq = assign(cb, m);
    EXPECT_EQ(seq.frame_rate, 50.0);
    EXPECT_EQ(seq.vocab_sizes, (std::vector<std::uint32_t>{static_cast<std::uint32_t>(k)}));
    for (std::size_t i = 0; i < t; ++i) {
      ASSERT_EQ(seq.streams[0][i], oracle::nearest_row(cb.centroids, k, f, m.row(i).data()));
    }
  }
}

TEST(Assign, ExactCentroidTieAndOneD) {
  auto cb = random_codebook(10, 3, 1);
  EmbeddingMatrix m(1, 3, 100.0, {cb.row(7).begin(), cb.row(7).end()});
  EXPECT_EQ(assign(cb, m).streams[0][0], 7u);

  Codebook oned{2, 1, {0.5f, 10.5f}, 0};
  EXPECT_EQ(assign(oned, EmbeddingMatrix(1, 1, 100.0, {0.6f})).streams[0][0], 0u);

  Codebook tie{6, 1, {100, 100, -1, 100, 100, 1}, 0};
  EXPECT_EQ(assign(tie, EmbeddingMatrix(1, 1, 100.0, {0.0f})).streams[0][0], 2u);
}

TEST(Assign, DimensionMismatchIsSchemaError) {
  try {
    assign(random_codebook(4, 3, 0), random_matrix(2, 2, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSchema);
  }
}

TEST(Grouped, ShapesAndReduction) {
  const auto m = random_matrix(400, 4, 2);
  const auto g = train_grouped(view(m), 2, 5, KMeansConfig{.seed = 9});
  ASSERT_EQ(g.codebook.groups.size(), 2u);
  EXPECT_EQ(g.codebook.groups[0].dim, 2u);
  EXPECT_EQ(g.codebook.groups[1].dim, 2u);

  const auto one = train_grouped(view(m), 1, 5, KMeansConfig{.seed = 9});
  const auto plain = train_kmeans(m, 5, KMeansConfig{.seed = 9});
  EXPECT_EQ(one.codebook.groups[0].centroids, plain.codebook.centroids);
  EXPECT_EQ(assign_grouped(one.codebook, m), assign(plain.codebook, m));
}

TEST(Grouped, IndivisibleDimIsConfigError) {
  try {
    train_grouped(view(random_matrix(10, 5, 0)), 2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Grouped, UnequalEntryCountsAllowed) {
  const auto m = random_matrix(100, 4, 3);
  const std::vector<std::size_t> ks{3, 7};
  const auto g = train_grouped(view(m), std::span<const std::size_t>(ks), KMeansConfig{});
  const auto seq = assign_grouped(g.codebook, m);
  EXPECT_EQ(seq.vocab_sizes, (std::vector<std::uint32_t>{3, 7}));
}

TEST(Grouped, SliceCentroidsMapToTheirIndices) {
  GroupedCodebook g{{random_codebook(10, 2, 1), random_codebook(12, 2, 2)}, 4};
  EmbeddingMatrix m(1, 4, 100.0);
  std::copy_n(g.groups[0].row(3).begin(), 2, m.data.begin());
  std::copy_n(g.groups[1].row(9).begin(), 2, m.data.begin() + 2);
  const auto seq = assign_grouped(g, m);
  EXPECT_EQ(seq.streams[0][0], 3u);
  EXPECT_EQ(seq.streams[1][0], 9u);
}

TEST(Grouped, RandomFramesMatchSliceBruteForce) {
  GroupedCodebook g{{random_codebook(8, 3, 4), random_codebook(8, 3, 5)}, 6};
  const auto m = random_matrix(10, 6, 6);
  const auto seq = assign_grouped(g, m);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t grp = 0; grp < 2; ++grp) {
      EXPECT_EQ(seq.streams[grp][t], oracle::nearest_row(g.groups[grp].centroids, 8, 3, m.row(t).data() + 3 * grp));
    }
  }
}

TEST(Grouped, PermutingGroupsPermutesStreams) {
  GroupedCodebook g{{random_codebook(8, 2, 4), random_codebook(5, 2, 5)}, 4};
  GroupedCodebook swapped{{g.groups[1], g.groups[0]}, 4};
  auto m = random_matrix(50, 4, 6);
  auto ms = m;
  for (std::size_t t = 0; t < m.frames; ++t) {
    std::swap_ranges(ms.row(t).begin(), ms.row(t).begin() + 2, ms.row(t).begin() + 2);
  }
  const auto a = assign_grouped(g, m);
  const auto b = assign_grouped(swapped, ms);
  EXPECT_EQ(a.streams[0], b.streams[1]);
  EXPECT_EQ(a.streams[1], b.streams[0]);
}

TEST(Rvq, SingleStageOnDistinctPointsIsExact) {
  EmbeddingMatrix m(6, 2, 100.0, {0, 0, 1, 2, 3, 4, 1, 2, 0, 0, 5, 5});
  for (std::size_t k : {4, 6}) {
    const auto r = train_rvq(view(m), 1, k);
    EXPECT_EQ(r.residual_energy[0], 0.0);
    EXPECT_EQ(rvq_decode(r.stack, rvq_encode(r.stack, m)), m);
  }
}

TEST(Rvq, HandComputedTwoStageExample) {
  // Oracle: stage 0 with k=1 is the mean; stage 1 is the best 2-partition of the residuals.
  const std::vector<double> pts{0, 1, 10, 11};
  const double mean = (0 + 1 + 10 + 11) / 4.0;
  std::vector<double> residual;
  for (double p : pts) residual.push_back(p - mean);
  const auto split = oracle::best_two_partition(residual);
  ASSERT_DOUBLE_EQ(mean, 5.5);
  ASSERT_DOUBLE_EQ(split.lo, -5.0);
  ASSERT_DOUBLE_EQ(split.hi, 5.0);
  const double expected_mse = split.inertia / 4.0;  // 0.25

  EmbeddingMatrix m(4, 1, 100.0, {0, 1, 10, 11});
  const std::vector<std::size_t> ks{1, 2};
  const auto r = train_rvq(view(m), std::span<const std::size_t>(ks));
  const auto& stack = r.stack;
  EXPECT_EQ(stack.stages[0].centroids[0], 5.5f);
  auto c = stack.stages[1].centroids;
  std::sort(c.begin(), c.end());
  EXPECT_EQ(c, (std::vector<float>{-5.0f, 5.0f}));
  EXPECT_NEAR(r.residual_energy[1], expected_mse, 1e-9);

  const auto recon = rvq_decode(stack, rvq_encode(stack, m));
  EXPECT_NEAR(reconstruction_error(m, recon).mse, expected_mse, 1e-9);
  EXPECT_FLOAT_EQ(recon.data[0], 0.5f);
}

TEST(Rvq, ResidualEnergyAndMseMonotone) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_matrix(300, 4, seed);
    const auto r = train_rvq(view(m), 6, 8, KMeansConfig{.seed = seed});
    for (std::size_t q = 1; q < r.residual_energy.size(); ++q) EXPECT_LE(r.residual_energy[q], r.residual_energy[q - 1]);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t q = 1; q <= 6; ++q) {
      const double mse = reconstruction_error(m, rvq_decode(r.stack, rvq_encode(r.stack, m, q))).mse;
      EXPECT_LE(mse, prev);
      prev = mse;
    }
  }
}

TEST(Rvq, EncodeMatchesGreedyOracle) {
  ResidualCodebookStack stack{{random_codebook(8, 4, 1), random_codebook(8, 4, 2), random_codebook(8, 4, 3)}};
  for (auto& s : stack.stages) {
    for (auto& v : s.centroids) v *= 0.5f;
  }
  const auto m = random_matrix(5, 4, 9);
  const auto seq = rvq_encode(stack, m, 3);
  for (std::size_t t = 0; t < 5; ++t) {
    std::vector<double> res(m.row(t).begin(), m.row(t).end());
    for (std::size_t q = 0; q < 3; ++q) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t k = 0; k < 8; ++k) {
        double d = 0;
        for (std::size_t f = 0; f < 4; ++f) d += std::pow(res[f] - stack.stages[q].centroids[k * 4 + f], 2);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      EXPECT_EQ(seq.streams[q][t], best);
      for (std::size_t f = 0; f < 4; ++f) res[f] -= stack.stages[q].centroids[best * 4 + f];
    }
  }
  EXPECT_EQ(rvq_encode(stack, m, 1).streams[0], assign(stack.stages[0], m).streams[0]);
}

TEST(Rvq, DecodeErrorEqualsGreedyResidualEnergy) {
  const auto m = random_matrix(200, 3, 21);
  const auto r = train_rvq(view(m), 3, 4, KMeansConfig{.seed = 5});
  const auto recon = rvq_decode(r.stack, rvq_encode(r.stack, m));
  EXPECT_NEAR(reconstruction_error(m, recon).mse * 3, r.residual_energy.back(), 1e-5);
}

TEST(Rvq, CentroidInputLaterStagesPickNearestToResidual) {
  const auto m = random_matrix(200, 3, 22);
  const auto r = train_rvq(view(m), 4, 6, KMeansConfig{.seed = 1});
  EmbeddingMatrix centres(6, 3, 100.0, r.stack.stages[0].centroids);
  const auto seq = rvq_encode(r.stack, centres, 4);
  for (std::size_t t = 0; t < 6; ++t) {
    EXPECT_EQ(seq.streams[0][t], t);
    // Stage-0 residual is exactly zero, so every later stage walks the
    // nearest-to-residual chain starting from the origin.
    std::vector<double> res(3, 0.0);
    for (std::size_t q = 1; q < 4; ++q) {
      std::vector<float> target(res.begin(), res.end());
      const auto want = oracle::nearest_row(r.stack.stages[q].centroids, 6, 3, target.data());
      EXPECT_EQ(seq.streams[q][t], want);
      for (std::size_t f = 0; f < 3; ++f) res[f] -= r.stack.stages[q].centroids[want * 3 + f];
    }
  }
}

TEST(Rvq, RangeErrors) {
  ResidualCodebookStack stack{{random_codebook(4, 2, 1), random_codebook(4, 2, 2)}};
  const auto m = random_matrix(3, 2, 0);
  EXPECT_THROW(rvq_encode(stack, m, 0), Error);
  EXPECT_THROW(rvq_encode(stack, m, 3), Error);
  auto seq = rvq_encode(stack, m);
  seq.streams[1][0] = 4;
  try {
    rvq_decode(stack, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRange);
  }
}

TEST(QuantizerFile, RoundtripAllKinds) {
  const std::vector<Quantizer> qs{
      random_codebook(5, 3, 1),
      GroupedCodebook{{random_codebook(4, 2, 2), random_codebook(3, 2, 3)}, 4},
      ResidualCodebookStack{{random_codebook(4, 3, 4), random_codebook(4, 3, 5), random_codebook(2, 3, 6)}}};
  for (const auto& q : qs) {
    const auto bytes = cbio::encode(q);
    EXPECT_EQ(std::string(bytes.data(), 4), "DTCB");
    const auto back = cbio::decode(bytes);
    EXPECT_EQ(back.index(), q.index());
    EXPECT_EQ(cbio::encode(back), bytes);
  }
  auto bytes = cbio::encode(qs[0]);
  bytes.pop_back();
  EXPECT_THROW(cbio::decode(bytes), Error);
}

TEST(Dequantize, PlainAndGroupedInvertAssignOnCentroids) {
  GroupedCodebook g{{random_codebook(4, 2, 2), random_codebook(3, 2, 3)}, 4};
  TokenSequence seq(100.0, {4, 3}, {{0, 3, 1}, {2, 0, 1}});
  const auto m = dequantize(g, seq);
  EXPECT_EQ(assign_grouped(g, m), seq);
}

}  // namespace
}  // namespace dtok
