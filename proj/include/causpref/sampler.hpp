#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "causpref/dag.hpp"
#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"
#include "causpref/rng.hpp"

namespace causpref {

enum class DistanceKind { kEuclidean, kInnerProduct };

inline std::string to_string(DistanceKind k) {
  return k == DistanceKind::kEuclidean ? "euclidean" : "inner_product";
}

inline DistanceKind distance_kind_from_string(const std::string& s) {
  if (s == "euclidean") return DistanceKind::kEuclidean;
  if (s == "inner_product") return DistanceKind::kInnerProduct;
  throw UsageError("unknown distance kind '" + s + "'");
}

struct ApsConfig {
  std::size_t candidates = 20;  // K, clamped to the pool when larger
  DistanceKind distance = DistanceKind::kEuclidean;
  double tie_floor = 1e-6;  // keeps every candidate reachable (inner product)
  bool hardest = false;     // argmax weight instead of a probabilistic draw
};

struct SamplerStats {
  std::size_t candidate_clamps = 0;
};

// Anti-preference weights: larger means further from what the user likes.
// Euclidean distance already points away from the preference; inner-product
// similarity is reversed by a max-shift with a tie floor so the best
// candidate keeps a nonzero draw chance.
inline std::vector<double> sampling_weights(
    const std::vector<double>& preference, const Matrix& item_features,
    const std::vector<std::uint32_t>& candidates, const ApsConfig& config) {
  if (candidates.empty()) {
    throw DataError("sampling_weights: empty candidate list");
  }
  const std::size_t q_v = item_features.cols();
  std::vector<double> w(candidates.size());
  if (config.distance == DistanceKind::kEuclidean) {
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < q_v; ++j) {
        const double d = preference[j] - item_features(candidates[i], j);
        s += d * d;
      }
      w[i] = std::sqrt(s);
      total += w[i];
    }
    if (total == 0.0) {
      std::fill(w.begin(), w.end(), 1.0);  // all candidates coincide: uniform
    }
  } else {
    double mx = -std::numeric_limits<double>::infinity();
    double mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < q_v; ++j) {
        s += preference[j] * item_features(candidates[i], j);
      }
      w[i] = s;
      mx = std::max(mx, s);
      mn = std::min(mn, s);
    }
    const double floor = config.tie_floor * (mx - mn + 1.0);
    for (double& s : w) s = mx - s + floor;
  }
  return w;
}

namespace detail {

inline std::vector<std::uint32_t> candidate_pool(
    const std::vector<std::uint32_t>& item_pool, std::uint32_t positive,
    const std::set<std::uint32_t>* excluded) {
  std::vector<std::uint32_t> pool;
  pool.reserve(item_pool.size());
  for (std::uint32_t item : item_pool) {
    if (item == positive) continue;
    if (excluded && excluded->count(item)) continue;
    pool.push_back(item);
  }
  return pool;
}

}  // namespace detail

// Algorithm: infer the preferred-item expectation, draw K pool candidates
// uniformly without replacement, weight them by anti-preference, then sample
// one in proportion to weight. The positive item and any known positives of
// the user never become candidates.
inline std::uint32_t aps_sample_with_preference(
    const std::vector<double>& preference, const Matrix& item_features,
    const std::vector<std::uint32_t>& item_pool, std::uint32_t positive,
    const std::set<std::uint32_t>* excluded, const ApsConfig& config, Rng& rng,
    SamplerStats* stats = nullptr) {
  const auto pool = detail::candidate_pool(item_pool, positive, excluded);
  if (pool.empty()) {
    throw DataError("aps_sample: no candidate items besides the positive");
  }
  std::size_t k = config.candidates;
  if (k < 1) throw UsageError("aps_sample: candidate count must be >= 1");
  if (k > pool.size()) {
    k = pool.size();
    if (stats) ++stats->candidate_clamps;
  }
  std::vector<std::uint32_t> candidates(k);
  const auto picks = sample_without_replacement(pool.size(), k, rng);
  for (std::size_t i = 0; i < k; ++i) candidates[i] = pool[picks[i]];

  const auto weights =
      sampling_weights(preference, item_features, candidates, config);
  if (config.hardest) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (weights[i] > weights[best]) best = i;
    }
    return candidates[best];
  }
  return candidates[weighted_pick(weights, rng)];
}

inline std::uint32_t aps_sample(const DagParams& theta,
                                const std::vector<double>& user,
                                const Matrix& item_features,
                                const std::vector<std::uint32_t>& item_pool,
                                std::uint32_t positive,
                                const std::set<std::uint32_t>* excluded,
                                const ApsConfig& config, Rng& rng,
                                SamplerStats* stats = nullptr) {
  return aps_sample_with_preference(infer_preference(theta, user),
                                    item_features, item_pool, positive,
                                    excluded, config, rng, stats);
}

// Uniform baseline: any pool item except the positive.
inline std::uint32_t random_sample(const std::vector<std::uint32_t>& item_pool,
                                   std::uint32_t positive, Rng& rng) {
  const auto pool = detail::candidate_pool(item_pool, positive, nullptr);
  if (pool.empty()) {
    throw DataError("random_sample: no candidate items besides the positive");
  }
  return pool[rng.index(pool.size())];
}

}  // namespace causpref
