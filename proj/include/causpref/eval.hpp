#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "causpref/dag.hpp"
#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/predictor.hpp"
#include "causpref/rng.hpp"
#include "causpref/synth.hpp"

namespace causpref {

enum class PoolMode { kAllTestItems, kSampledPool };

struct EvalConfig {
  std::vector<std::size_t> k_list{10};
  PoolMode pool_mode = PoolMode::kAllTestItems;
  std::size_t pool_size = 100;    // sampled mode
  std::uint64_t pool_seed = 0;    // sampled mode
  bool region_aware = false;      // restrict pools to co-located items
};

// What evaluation needs from a trained model: the scoring head plus,
// under preference replacement, the structure learner feeding it.
struct Scorer {
  const PredictorParams* phi = nullptr;
  const DagParams* theta = nullptr;  // required when preference_input is set
  bool preference_input = true;

  Matrix user_repr(const EncodedDataset& ds, std::uint32_t user) const {
    Matrix u(1, ds.q_u());
    for (std::size_t j = 0; j < ds.q_u(); ++j) {
      u(0, j) = ds.user_features(user, j);
    }
    if (!preference_input) return u;
    if (theta == nullptr) {
      throw UsageError("scorer: preference input needs structure parameters");
    }
    return infer_preference_batch(*theta, u);
  }
};

namespace detail {

// Scores one user representation against every pool item in one batch.
inline std::vector<double> pool_scores(const Scorer& scorer,
                                       const EncodedDataset& ds,
                                       const Matrix& repr,
                                       const std::vector<std::uint32_t>& pool) {
  Matrix users(pool.size(), repr.cols());
  Matrix items(pool.size(), ds.q_v());
  for (std::size_t r = 0; r < pool.size(); ++r) {
    for (std::size_t j = 0; j < repr.cols(); ++j) users(r, j) = repr(0, j);
    for (std::size_t j = 0; j < ds.q_v(); ++j) {
      items(r, j) = ds.item_features(pool[r], j);
    }
  }
  return score_batch(*scorer.phi, users, items).values();
}

}  // namespace detail

// Pool items ordered by descending score; ties break toward the smaller
// item index so rankings are reproducible.
inline std::vector<std::uint32_t> rank_items(
    const Scorer& scorer, const EncodedDataset& ds, std::uint32_t user,
    std::vector<std::uint32_t> pool) {
  if (pool.empty()) throw DataError("rank_items: empty pool");
  const Matrix repr = scorer.user_repr(ds, user);
  const auto scores = detail::pool_scores(scorer, ds, repr, pool);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return pool[a] < pool[b];
  });
  std::vector<std::uint32_t> ranked(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = pool[order[i]];
  return ranked;
}

struct MetricsTable {
  std::vector<std::size_t> k_list;
  std::vector<double> ndcg;    // aligned with k_list
  std::vector<double> recall;  // aligned with k_list
  std::size_t queries = 0;
  std::size_t rejected = 0;  // truth item missing from the pool

  double at(const std::string& metric, std::size_t k) const {
    for (std::size_t i = 0; i < k_list.size(); ++i) {
      if (k_list[i] == k) return metric == "ndcg" ? ndcg[i] : recall[i];
    }
    throw UsageError("metrics: K " + std::to_string(k) + " was not evaluated");
  }
};

// Per-interaction protocol: each test pair (u, v) is one query with a single
// relevant item. Recall@K counts rank(v) <= K; NDCG@K credits
// 1/log2(rank(v) + 1) inside the cut and zero outside.
inline MetricsTable evaluate(const Scorer& scorer, const EncodedDataset& ds,
                             const std::vector<std::uint32_t>& test_interactions,
                             const EvalConfig& config) {
  if (test_interactions.empty()) throw DataError("evaluate: empty test set");
  if (config.k_list.empty()) throw UsageError("evaluate: empty K list");

  // Candidate universe at test time: the whole item table, ascending.
  std::vector<std::uint32_t> all_items(ds.item_features.rows());
  for (std::size_t i = 0; i < all_items.size(); ++i) {
    all_items[i] = static_cast<std::uint32_t>(i);
  }

  // Region map, when pooling is region-aware: items carry every region they
  // occur with anywhere in the dataset.
  std::map<std::uint32_t, std::set<std::string>> item_regions;
  if (config.region_aware) {
    if (!ds.has_regions()) {
      throw DataError("evaluate: region-aware pooling needs region labels");
    }
    for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
      item_regions[ds.interactions[i].item].insert(ds.regions[i]);
    }
  }

  MetricsTable table;
  table.k_list = config.k_list;
  table.ndcg.assign(config.k_list.size(), 0.0);
  table.recall.assign(config.k_list.size(), 0.0);

  for (std::size_t q = 0; q < test_interactions.size(); ++q) {
    const Interaction inter = ds.interactions[test_interactions[q]];
    std::vector<std::uint32_t> pool;
    if (config.region_aware) {
      const std::string& region = ds.regions[test_interactions[q]];
      for (std::uint32_t item : all_items) {
        if (item_regions[item].count(region)) pool.push_back(item);
      }
    } else if (config.pool_mode == PoolMode::kAllTestItems) {
      pool = all_items;
    } else {
      // Truth plus pool_size - 1 sampled distractors, per-query stream.
      Rng rng(mix_seed(config.pool_seed, q));
      std::vector<std::uint32_t> others;
      others.reserve(all_items.size());
      for (std::uint32_t item : all_items) {
        if (item != inter.item) others.push_back(item);
      }
      const std::size_t distractors =
          std::min(config.pool_size > 0 ? config.pool_size - 1 : 0,
                   others.size());
      const auto picks =
          sample_without_replacement(others.size(), distractors, rng);
      pool.push_back(inter.item);
      for (std::size_t p : picks) pool.push_back(others[p]);
      std::sort(pool.begin(), pool.end());
    }
    if (std::find(pool.begin(), pool.end(), inter.item) == pool.end()) {
      ++table.rejected;
      continue;
    }
    for (std::size_t k : config.k_list) {
      if (k > pool.size()) {
        throw UsageError("evaluate: K " + std::to_string(k) +
                         " exceeds pool size " + std::to_string(pool.size()));
      }
    }

    const Matrix repr = scorer.user_repr(ds, inter.user);
    const auto scores = detail::pool_scores(scorer, ds, repr, pool);
    double truth_score = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i] == inter.item) truth_score = scores[i];
    }
    // Rank with the deterministic tie rule, without sorting the whole pool.
    std::size_t rank = 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i] == inter.item) continue;
      if (scores[i] > truth_score ||
          (scores[i] == truth_score && pool[i] < inter.item)) {
        ++rank;
      }
    }
    ++table.queries;
    for (std::size_t i = 0; i < config.k_list.size(); ++i) {
      if (rank <= config.k_list[i]) {
        table.recall[i] += 1.0;
        table.ndcg[i] += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
      }
    }
  }
  if (table.queries == 0) throw DataError("evaluate: every query was rejected");
  for (std::size_t i = 0; i < table.k_list.size(); ++i) {
    table.ndcg[i] /= static_cast<double>(table.queries);
    table.recall[i] /= static_cast<double>(table.queries);
  }
  return table;
}

// --- structure recovery -----------------------------------------------------------

struct StructureScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t shd = 0;
};

// Directed-edge precision/recall/F1 of the thresholded adjacency, plus the
// structural Hamming distance where a reversed pair counts once.
inline StructureScore structure_score(const Matrix& a_hat, double threshold,
                                      const GroundTruthGraph& truth) {
  const std::size_t d = truth.node_count();
  if (a_hat.rows() != d || a_hat.cols() != d) {
    throw ShapeError("structure_score: shape mismatch " + a_hat.shape_str() +
                     " vs " + truth.adjacency.shape_str());
  }
  std::size_t tp = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const bool p = a_hat(i, j) > threshold;
      const bool t = truth.adjacency(i, j) != 0.0;
      predicted += p;
      actual += t;
      tp += p && t;
    }
  }
  StructureScore s;
  s.precision = predicted ? static_cast<double>(tp) / predicted
                          : (actual == 0 ? 1.0 : 0.0);
  s.recall = actual ? static_cast<double>(tp) / actual : 1.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;

  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const bool p_ij = a_hat(i, j) > threshold;
      const bool p_ji = a_hat(j, i) > threshold;
      const bool t_ij = truth.adjacency(i, j) != 0.0;
      const bool t_ji = truth.adjacency(j, i) != 0.0;
      if (p_ij == t_ij && p_ji == t_ji) continue;
      if (p_ij != t_ij && p_ji != t_ji && (p_ij || p_ji) && (t_ij || t_ji)) {
        s.shd += 1;  // reversal: one edit
      } else {
        s.shd += (p_ij != t_ij) + (p_ji != t_ji);
      }
    }
  }
  return s;
}

// --- metrics csv -------------------------------------------------------------------

struct MetricRow {
  std::string setting;
  std::string variant;
  std::string metric;
  std::size_t k = 0;
  double value = 0.0;
  std::uint64_t seed = 0;
};

inline std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::string csv = "setting,variant,metric,K,value,seed\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    csv += r.setting + "," + r.variant + "," + r.metric + "," +
           std::to_string(r.k) + "," + buf + "," + std::to_string(r.seed) + "\n";
  }
  return csv;
}

inline void append_metric_rows(std::vector<MetricRow>* rows,
                               const MetricsTable& table,
                               const std::string& setting,
                               const std::string& variant, std::uint64_t seed) {
  for (std::size_t i = 0; i < table.k_list.size(); ++i) {
    rows->push_back({setting, variant, "ndcg", table.k_list[i], table.ndcg[i],
                     seed});
    rows->push_back({setting, variant, "recall", table.k_list[i],
                     table.recall[i], seed});
  }
}

}  // namespace causpref
