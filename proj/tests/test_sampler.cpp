#include <map>
#include <set>

#include <gtest/gtest.h>

#include "causpref/sampler.hpp"
#include "test_support.hpp"

namespace causpref {
namespace {

using testing::chi_square_stat;

Matrix items_1d(const std::vector<double>& xs) {
  Matrix m(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m(i, 0) = xs[i];
  return m;
}

std::vector<std::uint32_t> ids(std::size_t n) {
  std::vector<std::uint32_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint32_t>(i);
  return v;
}

TEST(SamplingWeights, EuclideanDistancesNormalize) {
  // distances (1, 3) -> probabilities (0.25, 0.75)
  const Matrix items = items_1d({1.0, 3.0});
  ApsConfig config;
  const auto w = sampling_weights({0.0}, items, ids(2), config);
  const double total = w[0] + w[1];
  EXPECT_DOUBLE_EQ(w[0] / total, 0.25);
  EXPECT_DOUBLE_EQ(w[1] / total, 0.75);
}

TEST(SamplingWeights, InnerProductReversesPreference) {
  // inner products (2, 0): in the small-floor limit the most-preferred
  // candidate is (almost) never the negative.
  const Matrix items = items_1d({2.0, 0.0});
  ApsConfig config;
  config.distance = DistanceKind::kInnerProduct;
  config.tie_floor = 1e-12;
  const auto w = sampling_weights({1.0}, items, ids(2), config);
  const double p0 = w[0] / (w[0] + w[1]);
  EXPECT_LT(p0, 1e-9);
  EXPECT_GT(w[0], 0.0);  // but still reachable
}

TEST(SamplingWeights, IdenticalCandidatesFallBackToUniform) {
  const Matrix items = items_1d({1.0, 1.0, 1.0});
  ApsConfig config;
  const auto w = sampling_weights({1.0}, items, ids(3), config);
  EXPECT_DOUBLE_EQ(w[0], w[1]);
  EXPECT_DOUBLE_EQ(w[1], w[2]);
  EXPECT_GT(w[0], 0.0);

  config.distance = DistanceKind::kInnerProduct;
  const auto wi = sampling_weights({1.0}, items, ids(3), config);
  EXPECT_DOUBLE_EQ(wi[0], wi[1]);
  EXPECT_GT(wi[0], 0.0);
}

TEST(SamplingWeights, AllWeightsStrictlyPositiveAndFinite) {
  Rng rng(3);
  Matrix items(20, 3);
  for (double& v : items.values()) v = rng.normal();
  for (DistanceKind kind :
       {DistanceKind::kEuclidean, DistanceKind::kInnerProduct}) {
    ApsConfig config;
    config.distance = kind;
    const auto w = sampling_weights({0.1, -0.5, 2.0}, items, ids(20), config);
    for (double x : w) {
      EXPECT_GT(x, 0.0);
      EXPECT_TRUE(std::isfinite(x));
    }
  }
}

TEST(SamplingWeights, FarthestCandidateGetsLargestWeight) {
  Rng rng(4);
  Matrix items(30, 2);
  for (double& v : items.values()) v = rng.normal();
  const std::vector<double> pref{0.3, -0.2};
  ApsConfig config;
  const auto w = sampling_weights(pref, items, ids(30), config);
  std::size_t argmax_w = 0, argmax_d = 0;
  double best_w = -1.0, best_d = -1.0;
  for (std::size_t i = 0; i < 30; ++i) {
    const double dx = pref[0] - items(i, 0), dy = pref[1] - items(i, 1);
    const double d = dx * dx + dy * dy;
    if (w[i] > best_w) { best_w = w[i]; argmax_w = i; }
    if (d > best_d) { best_d = d; argmax_d = i; }
  }
  EXPECT_EQ(argmax_w, argmax_d);
}

TEST(SamplingWeights, EmptyCandidateListRejected) {
  ApsConfig config;
  EXPECT_THROW(sampling_weights({0.0}, items_1d({1.0}), {}, config), DataError);
}

TEST(ApsSample, SingleCandidateAlwaysReturned) {
  const Matrix items = items_1d({1.0, 5.0});
  ApsConfig config;
  config.candidates = 1;
  Rng rng(0);
  for (int i = 0; i < 20; ++i) {
    const auto pick = aps_sample_with_preference({0.0}, items, ids(2),
                                                 /*positive=*/0, nullptr,
                                                 config, rng);
    EXPECT_EQ(pick, 1u);  // only non-positive candidate
  }
}

TEST(ApsSample, DrawFrequenciesMatchWeights) {
  // Candidates at distances (1, 2, 3) from the preference; 1e4 draws must
  // match (1/6, 2/6, 3/6) by chi-square at p > 0.01 (df 2: crit 9.21).
  const Matrix items = items_1d({1.0, 2.0, 3.0, 0.0});
  ApsConfig config;
  config.candidates = 3;
  Rng rng(99);
  std::vector<std::size_t> counts(3, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto pick = aps_sample_with_preference(
        {0.0}, items, {0, 1, 2, 3}, /*positive=*/3, nullptr, config, rng);
    ASSERT_LT(pick, 3u);
    ++counts[pick];
  }
  const double stat =
      chi_square_stat(counts, {1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0});
  EXPECT_LT(stat, 9.21);  // exact chi-square(2) critical value at 0.01
}

TEST(ApsSample, DeterministicGivenSeed) {
  Rng items_rng(5);
  Matrix items(50, 2);
  for (double& v : items.values()) v = items_rng.normal();
  ApsConfig config;
  config.candidates = 10;
  auto run = [&](std::vector<std::uint32_t>* out) {
    Rng rng(123);
    for (int i = 0; i < 30; ++i) {
      out->push_back(aps_sample_with_preference({0.5, 0.5}, items, ids(50), 7,
                                                nullptr, config, rng));
    }
  };
  std::vector<std::uint32_t> a, b;
  run(&a);
  run(&b);
  EXPECT_EQ(a, b);
}

TEST(ApsSample, PositiveAndKnownPositivesNeverDrawn) {
  Rng items_rng(6);
  Matrix items(20, 2);
  for (double& v : items.values()) v = items_rng.normal();
  const std::set<std::uint32_t> known{2, 3, 4};
  ApsConfig config;
  config.candidates = 20;  // clamped to what is left
  Rng rng(7);
  SamplerStats stats;
  for (int i = 0; i < 500; ++i) {
    const auto pick = aps_sample_with_preference({0.0, 0.0}, items, ids(20), 5,
                                                 &known, config, rng, &stats);
    EXPECT_NE(pick, 5u);
    EXPECT_FALSE(known.count(pick));
  }
  EXPECT_EQ(stats.candidate_clamps, 500u);  // 16 candidates < requested 20
}

TEST(ApsSample, PoolOfOnlyPositiveRejected) {
  const Matrix items = items_1d({1.0});
  ApsConfig config;
  Rng rng(0);
  EXPECT_THROW(aps_sample_with_preference({0.0}, items, {0}, 0, nullptr,
                                          config, rng),
               DataError);
}

TEST(ApsSample, HardestModePicksArgmaxDistance) {
  const Matrix items = items_1d({1.0, 4.0, 9.0});
  ApsConfig config;
  config.candidates = 3;
  config.hardest = true;
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(aps_sample_with_preference({0.0}, items, ids(3), 0, nullptr,
                                         config, rng),
              2u);
  }
}

TEST(ApsSample, UsesThetaPreference) {
  // Through a hand-built network the preference is (6); the farthest item
  // from 6 dominates the draw.
  DagParams p;
  p.q_u = 1;
  p.q_v = 1;
  p.hidden_width = 1;
  p.depth = 2;
  p.first = {Matrix(2, 1), Matrix(2, 1)};
  p.out = {Matrix(1, 1), Matrix(1, 1)};
  p.first[1](0, 0) = 1.0;
  p.out[1](0, 0) = 2.0;
  const Matrix items = items_1d({6.0, 0.0});
  ApsConfig config;
  config.candidates = 2;
  config.hardest = true;
  Rng rng(0);
  EXPECT_EQ(aps_sample(p, {3.0}, items, ids(2), 0, nullptr, config, rng), 1u);
}

TEST(RandomSample, SingletonAndExclusion) {
  Rng rng(1);
  EXPECT_EQ(random_sample(ids(2), 0, rng), 1u);
  for (int i = 0; i < 200; ++i) {
    EXPECT_NE(random_sample(ids(5), 3, rng), 3u);
  }
  EXPECT_THROW(random_sample({4}, 4, rng), DataError);
}

TEST(RandomSample, UniformWithinThreeSigma) {
  Rng rng(2);
  std::map<std::uint32_t, std::size_t> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[random_sample(ids(5), 4, rng)];
  // 4 candidates at p = 0.25 each
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (std::uint32_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(static_cast<double>(counts[c]), n * 0.25, 3.0 * sigma);
  }
}

}  // namespace
}  // namespace causpref
