#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"
#include "causpref/rng.hpp"

namespace causpref {

enum class SplitKind {
  kIid,
  kUserFeatureBias,
  kItemFeatureBias,
  kUserDegreeBias,
  kItemDegreeBias,
  kRegionBias,
};

inline std::string to_string(SplitKind k) {
  switch (k) {
    case SplitKind::kIid: return "iid";
    case SplitKind::kUserFeatureBias: return "user_feature_bias";
    case SplitKind::kItemFeatureBias: return "item_feature_bias";
    case SplitKind::kUserDegreeBias: return "user_degree_bias";
    case SplitKind::kItemDegreeBias: return "item_degree_bias";
    case SplitKind::kRegionBias: return "region_bias";
  }
  return "?";
}

inline SplitKind split_kind_from_string(const std::string& s) {
  if (s == "iid") return SplitKind::kIid;
  if (s == "user_feature_bias") return SplitKind::kUserFeatureBias;
  if (s == "item_feature_bias") return SplitKind::kItemFeatureBias;
  if (s == "user_degree_bias") return SplitKind::kUserDegreeBias;
  if (s == "item_degree_bias") return SplitKind::kItemDegreeBias;
  if (s == "region_bias") return SplitKind::kRegionBias;
  throw UsageError("unknown split kind '" + s + "'");
}

struct SplitSpec {
  SplitKind kind = SplitKind::kIid;
  // Feature-bias settings: type mix of the two clusters.
  std::pair<double, double> train_ratio_ab{0.5, 0.5};
  std::pair<double, double> test_ratio_ab{0.5, 0.5};
  // Degree-bias skew: test weight = degree(entity)^(-gamma); 0 recovers
  // uniform.
  double degree_skew = 1.0;
  // Region-bias settings.
  std::string train_region, test_region;
  // The paper's 8:1:2 proportions.
  double train_prop = 8.0 / 11.0;
  double val_prop = 1.0 / 11.0;
  double test_prop = 2.0 / 11.0;
  // Total interactions to draw; 0 means everything (for feature bias: the
  // largest total whose type mixes are achievable).
  std::size_t sample_size = 0;
  // Inductive keeps test users/items that never occur in training.
  bool inductive = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_prop > 0 && val_prop > 0 && test_prop > 0)) {
      throw UsageError("split: proportions must be positive");
    }
    if (std::fabs(train_prop + val_prop + test_prop - 1.0) > 1e-9) {
      throw UsageError("split: proportions must sum to 1");
    }
    auto check_ratio = [](const std::pair<double, double>& r, const char* what) {
      if (r.first < 0 || r.second < 0 ||
          std::fabs(r.first + r.second - 1.0) > 1e-9) {
        throw UsageError(std::string("split: ") + what +
                         " ratio pair must be nonnegative and sum to 1");
      }
    };
    if (kind == SplitKind::kUserFeatureBias ||
        kind == SplitKind::kItemFeatureBias) {
      check_ratio(train_ratio_ab, "train");
      check_ratio(test_ratio_ab, "test");
    }
    if (kind == SplitKind::kUserDegreeBias ||
        kind == SplitKind::kItemDegreeBias) {
      if (degree_skew < 0) throw UsageError("split: degree skew must be >= 0");
    }
    if (kind == SplitKind::kRegionBias &&
        (train_region.empty() || test_region.empty())) {
      throw UsageError("split: region bias needs train and test regions");
    }
  }
};

struct Split {
  std::vector<std::uint32_t> train, val, test;  // indices into interactions
};

// --- 2-means -------------------------------------------------------------------

// Plain Lloyd 2-means over encoded feature rows. Initial centroids are the
// two most distant rows among 64 seeded probes; assignment ties go to A.
// Returns 0 for cluster A, 1 for B. All-identical input degenerates to all-A.
inline std::vector<int> two_means(const Matrix& rows, std::uint64_t seed,
                                  bool* degenerate = nullptr) {
  const std::size_t n = rows.rows();
  const std::size_t dim = rows.cols();
  if (n < 2) throw DataError("two_means: need at least 2 rows");
  if (degenerate) *degenerate = false;

  auto sq_dist = [&](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = a[j] - b[j];
      s += d * d;
    }
    return s;
  };

  Rng rng(mix_seed(seed, 0x2beab5));
  const std::size_t probes = std::min<std::size_t>(64, n);
  const auto probe_idx = sample_without_replacement(n, probes, rng);
  std::size_t best_a = probe_idx[0], best_b = probe_idx[0];
  double best = -1.0;
  for (std::size_t i = 0; i < probes; ++i) {
    for (std::size_t j = i + 1; j < probes; ++j) {
      const double d =
          sq_dist(rows.data() + probe_idx[i] * dim, rows.data() + probe_idx[j] * dim);
      if (d > best) {
        best = d;
        best_a = probe_idx[i];
        best_b = probe_idx[j];
      }
    }
  }
  if (best <= 0.0) {
    // Probes all identical; scan everything for any distinct pair.
    bool found = false;
    for (std::size_t i = 1; i < n && !found; ++i) {
      if (sq_dist(rows.data(), rows.data() + i * dim) > 0.0) {
        best_a = 0;
        best_b = i;
        found = true;
      }
    }
    if (!found) {
      if (degenerate) *degenerate = true;
      return std::vector<int>(n, 0);  // all rows identical: everything is A
    }
  }

  std::vector<double> ca(rows.data() + best_a * dim, rows.data() + best_a * dim + dim);
  std::vector<double> cb(rows.data() + best_b * dim, rows.data() + best_b * dim + dim);
  std::vector<int> label(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      const double da = sq_dist(rows.data() + i * dim, ca.data());
      const double db = sq_dist(rows.data() + i * dim, cb.data());
      label[i] = da <= db ? 0 : 1;  // ties toward A
    }
    std::vector<double> na(dim, 0.0), nb(dim, 0.0);
    std::size_t count_a = 0, count_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = label[i] == 0 ? na : nb;
      (label[i] == 0 ? count_a : count_b)++;
      for (std::size_t j = 0; j < dim; ++j) acc[j] += rows(i, j);
    }
    double shift = 0.0;
    if (count_a > 0) {
      for (std::size_t j = 0; j < dim; ++j) {
        na[j] /= static_cast<double>(count_a);
        shift += (na[j] - ca[j]) * (na[j] - ca[j]);
      }
      ca = na;
    }
    if (count_b > 0) {
      for (std::size_t j = 0; j < dim; ++j) {
        nb[j] /= static_cast<double>(count_b);
        shift += (nb[j] - cb[j]) * (nb[j] - cb[j]);
      }
      cb = nb;
    }
    if (std::sqrt(shift) < 1e-8) break;
  }
  return label;
}

// --- split construction ----------------------------------------------------------

namespace detail {

struct Counts {
  std::size_t train = 0, val = 0, test = 0;
};

inline std::size_t effective_total(std::size_t n, const SplitSpec& spec) {
  if (spec.sample_size == 0) return n;
  if (spec.sample_size > n) {
    throw DataError("split: requested " + std::to_string(spec.sample_size) +
                    " interactions, dataset has " + std::to_string(n));
  }
  return spec.sample_size;
}

inline Counts target_counts(std::size_t n, const SplitSpec& spec) {
  Counts c;
  c.test = static_cast<std::size_t>(std::llround(n * spec.test_prop));
  c.val = static_cast<std::size_t>(std::llround(n * spec.val_prop));
  c.test = std::min(c.test, n);
  c.val = std::min(c.val, n - c.test);
  c.train = n - c.test - c.val;
  return c;
}

inline std::vector<std::uint32_t> all_indices(std::size_t n) {
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  return idx;
}

// Splits a pooled train+val list by the train:val proportion.
inline void split_train_val(std::vector<std::uint32_t> pool, double train_prop,
                            double val_prop, Rng& rng, Split* out) {
  shuffle(pool, rng);
  const std::size_t n_val = static_cast<std::size_t>(
      std::llround(pool.size() * val_prop / (train_prop + val_prop)));
  out->val.assign(pool.begin(), pool.begin() + n_val);
  out->train.assign(pool.begin() + n_val, pool.end());
}

// Weighted sampling without replacement (Efraimidis-Spirakis keys).
inline std::vector<std::uint32_t> weighted_sample_without_replacement(
    const std::vector<std::uint32_t>& pool, const std::vector<double>& weights,
    std::size_t k, Rng& rng) {
  std::vector<std::pair<double, std::uint32_t>> keys;
  keys.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double u = 1.0 - rng.real01();  // (0, 1]
    keys.emplace_back(std::pow(u, 1.0 / weights[i]), pool[i]);
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::uint32_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k && i < keys.size(); ++i) {
    out.push_back(keys[i].second);
  }
  return out;
}

struct FeaturePools {
  std::vector<std::uint32_t> a, b;  // shuffled interaction indices per type
};

inline FeaturePools feature_pools(const EncodedDataset& ds,
                                  const SplitSpec& spec,
                                  const std::vector<int>& labels, Rng& rng) {
  const bool by_user = spec.kind == SplitKind::kUserFeatureBias;
  FeaturePools pools;
  for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
    const std::size_t entity =
        by_user ? ds.interactions[i].user : ds.interactions[i].item;
    (labels[entity] == 0 ? pools.a : pools.b)
        .push_back(static_cast<std::uint32_t>(i));
  }
  shuffle(pools.a, rng);
  shuffle(pools.b, rng);
  return pools;
}

inline std::size_t capped_count(double x, std::size_t cap) {
  return std::min(static_cast<std::size_t>(std::llround(x)), cap);
}

// Feature-bias construction in two stages so a sweep can fix the test draw
// and vary only the training mix. Consumed indices are removed from pools.
inline std::vector<std::uint32_t> draw_feature_test(FeaturePools& pools,
                                                    const SplitSpec& spec,
                                                    std::size_t n,
                                                    Rng& rng) {
  // Largest total honoring both mixes decides the default sizing.
  const double share_a =
      spec.test_prop * spec.test_ratio_ab.first +
      (spec.train_prop + spec.val_prop) * spec.train_ratio_ab.first;
  const double share_b =
      spec.test_prop * spec.test_ratio_ab.second +
      (spec.train_prop + spec.val_prop) * spec.train_ratio_ab.second;
  double feasible = static_cast<double>(n);
  if (share_a > 0) feasible = std::min(feasible, pools.a.size() / share_a);
  if (share_b > 0) feasible = std::min(feasible, pools.b.size() / share_b);
  const std::size_t max_total = static_cast<std::size_t>(feasible);
  if (spec.sample_size > max_total) {
    throw DataError(
        "feature bias split infeasible: requested " +
        std::to_string(spec.sample_size) +
        " interactions, achievable maximum with these ratios is " +
        std::to_string(max_total));
  }
  const std::size_t total = spec.sample_size ? spec.sample_size : max_total;
  const std::size_t n_test =
      static_cast<std::size_t>(std::llround(total * spec.test_prop));
  const std::size_t test_a =
      capped_count(n_test * spec.test_ratio_ab.first, pools.a.size());
  const std::size_t test_b = std::min(n_test - test_a, pools.b.size());

  std::vector<std::uint32_t> test(pools.a.begin(), pools.a.begin() + test_a);
  test.insert(test.end(), pools.b.begin(), pools.b.begin() + test_b);
  pools.a.erase(pools.a.begin(), pools.a.begin() + test_a);
  pools.b.erase(pools.b.begin(), pools.b.begin() + test_b);
  shuffle(test, rng);
  return test;
}

inline void draw_feature_train_val(const FeaturePools& pools,
                                   const SplitSpec& spec, std::size_t n_test,
                                   Rng& rng, Split* split) {
  // Train+val sized against the test draw through the proportions, capped by
  // what the remaining pools can supply at the requested mix.
  std::size_t n_tv = static_cast<std::size_t>(std::llround(
      n_test * (spec.train_prop + spec.val_prop) / spec.test_prop));
  if (spec.sample_size) n_tv = spec.sample_size - n_test;
  double feasible = static_cast<double>(pools.a.size() + pools.b.size());
  if (spec.train_ratio_ab.first > 0) {
    feasible = std::min(feasible, pools.a.size() / spec.train_ratio_ab.first);
  }
  if (spec.train_ratio_ab.second > 0) {
    feasible = std::min(feasible, pools.b.size() / spec.train_ratio_ab.second);
  }
  if (spec.sample_size && n_tv > static_cast<std::size_t>(feasible)) {
    throw DataError(
        "feature bias split infeasible: train pool can supply at most " +
        std::to_string(static_cast<std::size_t>(feasible)) +
        " interactions at this mix, achievable maximum is " +
        std::to_string(static_cast<std::size_t>(feasible) + n_test));
  }
  n_tv = std::min(n_tv, static_cast<std::size_t>(feasible));
  const std::size_t train_a =
      capped_count(n_tv * spec.train_ratio_ab.first, pools.a.size());
  const std::size_t train_b = std::min(n_tv - train_a, pools.b.size());
  std::vector<std::uint32_t> tv(pools.a.begin(), pools.a.begin() + train_a);
  tv.insert(tv.end(), pools.b.begin(), pools.b.begin() + train_b);
  split_train_val(std::move(tv), spec.train_prop, spec.val_prop, rng, split);
}

inline Split feature_bias_split(const EncodedDataset& ds, const SplitSpec& spec,
                                const std::vector<int>& labels, Rng& rng) {
  FeaturePools pools = feature_pools(ds, spec, labels, rng);
  Split split;
  split.test = draw_feature_test(pools, spec, ds.interactions.size(), rng);
  draw_feature_train_val(pools, spec, split.test.size(), rng, &split);
  return split;
}

inline Split degree_bias_split(const EncodedDataset& ds, const SplitSpec& spec,
                               Rng& rng) {
  const std::size_t n = ds.interactions.size();
  const bool by_user = spec.kind == SplitKind::kUserDegreeBias;

  // Degrees over the raw dataset.
  std::map<std::uint32_t, std::size_t> degree;
  for (const auto& it : ds.interactions) {
    ++degree[by_user ? it.user : it.item];
  }
  const Counts c = target_counts(effective_total(n, spec), spec);
  auto pool = all_indices(n);
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& it = ds.interactions[i];
    const double deg =
        static_cast<double>(degree[by_user ? it.user : it.item]);
    weights[i] = std::pow(deg, -spec.degree_skew);
  }

  Split split;
  split.test = weighted_sample_without_replacement(pool, weights, c.test, rng);
  std::set<std::uint32_t> in_test(split.test.begin(), split.test.end());
  std::vector<std::uint32_t> rest;
  for (std::uint32_t i : pool) {
    if (!in_test.count(i)) rest.push_back(i);
  }
  shuffle(rest, rng);
  rest.resize(std::min(rest.size(), c.train + c.val));
  split_train_val(std::move(rest), spec.train_prop, spec.val_prop, rng, &split);
  return split;
}

inline Split region_bias_split(const EncodedDataset& ds, const SplitSpec& spec,
                               Rng& rng) {
  if (!ds.has_regions()) {
    throw DataError("region bias split requires region labels");
  }
  std::vector<std::uint32_t> train_pool, test_pool;
  for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
    if (ds.regions[i] == spec.train_region) {
      train_pool.push_back(static_cast<std::uint32_t>(i));
    } else if (ds.regions[i] == spec.test_region) {
      test_pool.push_back(static_cast<std::uint32_t>(i));
    }
  }
  if (train_pool.empty()) {
    throw DataError("region bias: no interactions in train region '" +
                    spec.train_region + "'");
  }
  if (test_pool.empty()) {
    throw DataError("region bias: no interactions in test region '" +
                    spec.test_region + "'");
  }
  Split split;
  shuffle(test_pool, rng);
  split.test = std::move(test_pool);
  split_train_val(std::move(train_pool), spec.train_prop, spec.val_prop, rng,
                  &split);
  return split;
}

inline Split iid_split(const EncodedDataset& ds, const SplitSpec& spec,
                       Rng& rng) {
  auto idx = all_indices(ds.interactions.size());
  shuffle(idx, rng);
  idx.resize(effective_total(idx.size(), spec));
  const Counts c = target_counts(idx.size(), spec);
  Split split;
  split.test.assign(idx.begin(), idx.begin() + c.test);
  split.val.assign(idx.begin() + c.test, idx.begin() + c.test + c.val);
  split.train.assign(idx.begin() + c.test + c.val, idx.end());
  return split;
}

inline void apply_transductive_filter(const EncodedDataset& ds, Split* split) {
  std::set<std::uint32_t> users, items;
  for (const auto& part : {&split->train, &split->val}) {
    for (std::uint32_t i : *part) {
      users.insert(ds.interactions[i].user);
      items.insert(ds.interactions[i].item);
    }
  }
  std::vector<std::uint32_t> kept;
  for (std::uint32_t i : split->test) {
    if (users.count(ds.interactions[i].user) &&
        items.count(ds.interactions[i].item)) {
      kept.push_back(i);
    }
  }
  split->test = std::move(kept);
}

}  // namespace detail

inline Split make_split(const EncodedDataset& ds, const SplitSpec& spec) {
  spec.validate();
  if (ds.interactions.empty()) throw DataError("make_split: empty dataset");
  Rng rng(mix_seed(spec.seed, 0x5b717));
  Split split;
  switch (spec.kind) {
    case SplitKind::kIid:
      split = detail::iid_split(ds, spec, rng);
      break;
    case SplitKind::kUserFeatureBias:
    case SplitKind::kItemFeatureBias: {
      const Matrix& feats = spec.kind == SplitKind::kUserFeatureBias
                                ? ds.user_features
                                : ds.item_features;
      const auto labels = two_means(feats, spec.seed);
      split = detail::feature_bias_split(ds, spec, labels, rng);
      break;
    }
    case SplitKind::kUserDegreeBias:
    case SplitKind::kItemDegreeBias:
      split = detail::degree_bias_split(ds, spec, rng);
      break;
    case SplitKind::kRegionBias:
      split = detail::region_bias_split(ds, spec, rng);
      break;
  }
  if (!spec.inductive) detail::apply_transductive_filter(ds, &split);
  return split;
}

// Fig-3-style protocol: one split per training mix, all sharing the test pool
// drawn once from the base spec.
inline std::vector<Split> ratio_sweep(
    const EncodedDataset& ds, const SplitSpec& base,
    const std::vector<std::pair<double, double>>& train_ratios) {
  base.validate();
  if (base.kind != SplitKind::kUserFeatureBias &&
      base.kind != SplitKind::kItemFeatureBias) {
    throw UsageError("ratio_sweep: base spec must be a feature-bias spec");
  }
  std::vector<Split> out;
  if (train_ratios.empty()) return out;

  const Matrix& feats = base.kind == SplitKind::kUserFeatureBias
                            ? ds.user_features
                            : ds.item_features;
  const auto labels = two_means(feats, base.seed);

  // The test pool is drawn once from the base spec; each ratio then fills
  // train/val from the identical remainder with its own derived stream.
  Rng test_rng(mix_seed(base.seed, 0x5b717));
  detail::FeaturePools pools =
      detail::feature_pools(ds, base, labels, test_rng);
  const auto shared_test =
      detail::draw_feature_test(pools, base, ds.interactions.size(), test_rng);

  for (std::size_t r = 0; r < train_ratios.size(); ++r) {
    SplitSpec spec = base;
    spec.train_ratio_ab = train_ratios[r];
    spec.validate();
    Rng rng(mix_seed(base.seed, 0xa110 + r));
    Split split;
    split.test = shared_test;
    detail::draw_feature_train_val(pools, spec, split.test.size(), rng, &split);
    if (!base.inductive) detail::apply_transductive_filter(ds, &split);
    out.push_back(std::move(split));
  }
  return out;
}

// --- manifest io -----------------------------------------------------------------

inline nlohmann::json split_spec_to_json(const SplitSpec& s) {
  return nlohmann::json{
      {"kind", to_string(s.kind)},
      {"train_ratio_ab", {s.train_ratio_ab.first, s.train_ratio_ab.second}},
      {"test_ratio_ab", {s.test_ratio_ab.first, s.test_ratio_ab.second}},
      {"degree_skew", s.degree_skew},
      {"train_region", s.train_region},
      {"test_region", s.test_region},
      {"proportions", {s.train_prop, s.val_prop, s.test_prop}},
      {"sample_size", s.sample_size},
      {"inductive", s.inductive},
      {"seed", s.seed}};
}

inline SplitSpec split_spec_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.kind = split_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("train_ratio_ab")) {
    s.train_ratio_ab = {j["train_ratio_ab"][0].get<double>(),
                        j["train_ratio_ab"][1].get<double>()};
  }
  if (j.contains("test_ratio_ab")) {
    s.test_ratio_ab = {j["test_ratio_ab"][0].get<double>(),
                       j["test_ratio_ab"][1].get<double>()};
  }
  if (j.contains("degree_skew")) s.degree_skew = j["degree_skew"].get<double>();
  if (j.contains("train_region")) s.train_region = j["train_region"];
  if (j.contains("test_region")) s.test_region = j["test_region"];
  if (j.contains("proportions")) {
    s.train_prop = j["proportions"][0].get<double>();
    s.val_prop = j["proportions"][1].get<double>();
    s.test_prop = j["proportions"][2].get<double>();
  }
  if (j.contains("sample_size")) {
    s.sample_size = j["sample_size"].get<std::size_t>();
  }
  if (j.contains("inductive")) s.inductive = j["inductive"].get<bool>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  return s;
}

inline void save_split(const Split& split, const SplitSpec& spec,
                       const std::string& path) {
  nlohmann::json j{{"spec", split_spec_to_json(spec)},
                   {"train", split.train},
                   {"val", split.val},
                   {"test", split.test}};
  detail::write_text_file(path, j.dump());
}

inline std::pair<Split, SplitSpec> load_split(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path);
  try {
    Split split;
    split.train = j.at("train").get<std::vector<std::uint32_t>>();
    split.val = j.at("val").get<std::vector<std::uint32_t>>();
    split.test = j.at("test").get<std::vector<std::uint32_t>>();
    return {std::move(split), split_spec_from_json(j.at("spec"))};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("split manifest " + path + ": " + e.what());
  }
}

}  // namespace causpref
