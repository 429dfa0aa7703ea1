#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"
#include "causpref/rng.hpp"

namespace causpref {

// Synthetic benchmark with a known preference DAG. User features follow a
// linear SEM; each positive item is the pool item nearest to the preferred
// expectation plus noise. The last fifth of users is drawn with shifted
// exogenous means and its interactions carry region label "shifted", so a
// region-bias split reproduces the covariate-shift setting.
struct SyntheticSpec {
  std::size_t q_u = 5;
  std::size_t q_v = 5;
  std::size_t n_users = 3000;
  std::size_t n_items = 2000;
  std::size_t n_interactions = 4000;
  double edge_density = 0.3;
  double noise_std = 0.1;
  enum class Mechanism { kLinear } mechanism = Mechanism::kLinear;
  std::vector<double> user_shift;  // length q_u; empty means zero shift
  std::uint64_t seed = 0;

  void validate() const {
    if (q_u < 1 || q_v < 1) throw UsageError("synth: q_u, q_v must be >= 1");
    if (!(edge_density > 0.0 && edge_density < 1.0)) {
      throw UsageError("synth: edge density must lie in (0, 1); with density " +
                       std::to_string(edge_density) +
                       " constraint C2 is unsatisfiable");
    }
    if (!(noise_std > 0.0)) throw UsageError("synth: noise std must be > 0");
    if (!user_shift.empty() && user_shift.size() != q_u) {
      throw UsageError("synth: user shift must have length q_u");
    }
    if (n_users < 2 || n_items < 2 || n_interactions < 1) {
      throw UsageError("synth: sizes too small");
    }
  }
};

constexpr const char* kRegionBase = "base";
constexpr const char* kRegionShifted = "shifted";

struct GroundTruthGraph {
  std::size_t q_u = 0, q_v = 0;
  Matrix adjacency;  // D x D, entries 0/1

  std::size_t node_count() const { return q_u + q_v; }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (double x : adjacency.values()) n += x != 0.0;
    return n;
  }

  // C1: no item -> user edges; C2: every item column has in-degree >= 1;
  // and the graph is acyclic.
  void validate() const {
    const std::size_t d = node_count();
    if (adjacency.rows() != d || adjacency.cols() != d) {
      throw DataError("truth graph: adjacency shape mismatch");
    }
    for (std::size_t k = q_u; k < d; ++k) {
      for (std::size_t c = 0; c < q_u; ++c) {
        if (adjacency(k, c) != 0.0) {
          throw DataError("truth graph violates C1: item->user edge");
        }
      }
    }
    for (std::size_t c = q_u; c < d; ++c) {
      bool has_parent = false;
      for (std::size_t k = 0; k < d; ++k) has_parent |= adjacency(k, c) != 0.0;
      if (!has_parent) {
        throw DataError("truth graph violates C2: item feature " +
                        std::to_string(c - q_u) + " is a root");
      }
    }
    // Kahn's algorithm; leftovers mean a cycle.
    std::vector<std::size_t> indeg(d, 0);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t c = 0; c < d; ++c) indeg[c] += adjacency(k, c) != 0.0;
    }
    std::vector<std::size_t> queue;
    for (std::size_t c = 0; c < d; ++c) {
      if (indeg[c] == 0) queue.push_back(c);
    }
    std::size_t seen = 0;
    while (!queue.empty()) {
      const std::size_t k = queue.back();
      queue.pop_back();
      ++seen;
      for (std::size_t c = 0; c < d; ++c) {
        if (adjacency(k, c) != 0.0 && --indeg[c] == 0) queue.push_back(c);
      }
    }
    if (seen != d) throw DataError("truth graph contains a cycle");
  }
};

namespace detail {

struct SemModel {
  // Weighted adjacency in topological coordinates is implicit: weights(k, d)
  // is the edge k -> d in the natural node order (users 0..q_u-1, then items).
  Matrix weights;                  // D x D signed edge weights
  std::vector<std::size_t> order;  // topological order of all D nodes
};

inline SemModel sample_sem(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t d = spec.q_u + spec.q_v;
  SemModel sem;
  sem.weights = Matrix(d, d);

  // Random topological order within users and within items; items always
  // come after users so C1 holds by construction.
  std::vector<std::size_t> user_order(spec.q_u), item_order(spec.q_v);
  for (std::size_t i = 0; i < spec.q_u; ++i) user_order[i] = i;
  for (std::size_t i = 0; i < spec.q_v; ++i) item_order[i] = spec.q_u + i;
  shuffle(user_order, rng);
  shuffle(item_order, rng);
  sem.order = user_order;
  sem.order.insert(sem.order.end(), item_order.begin(), item_order.end());

  auto edge_weight = [&rng](double lo, double hi) {
    // Moderate magnitudes keep propagated variances near one, so the
    // per-node noise stays informative after standardization.
    const double w = lo + (hi - lo) * rng.real01();
    return rng.real01() < 0.5 ? -w : w;
  };

  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a + 1; b < d; ++b) {
      if (rng.real01() < spec.edge_density) {
        // User-user links are a bit stronger so they stay detectable after
        // standardization.
        const bool within_users = b < spec.q_u;
        sem.weights(sem.order[a], sem.order[b]) =
            within_users ? edge_weight(0.7, 1.1) : edge_weight(0.4, 0.9);
      }
    }
  }
  // C2: every item must have at least one parent; wire a random user in.
  for (std::size_t pos = spec.q_u; pos < d; ++pos) {
    const std::size_t node = sem.order[pos];
    bool has_parent = false;
    for (std::size_t k = 0; k < d; ++k) {
      has_parent |= sem.weights(k, node) != 0.0;
    }
    if (!has_parent) {
      sem.weights(rng.index(spec.q_u), node) = edge_weight(0.4, 0.9);
    }
  }
  return sem;
}

// Ancestral draw of the q_u user coordinates; exogenous noise is standard
// normal around the given per-feature mean shift.
inline std::vector<double> sample_user(const SemModel& sem, std::size_t q_u,
                                       const std::vector<double>& shift,
                                       Rng& rng) {
  std::vector<double> x(q_u, 0.0);
  for (std::size_t pos = 0; pos < q_u; ++pos) {
    const std::size_t node = sem.order[pos];
    double v = rng.normal(shift.empty() ? 0.0 : shift[node], 1.0);
    for (std::size_t k = 0; k < q_u; ++k) {
      v += sem.weights(k, node) * x[k];
    }
    x[node] = v;
  }
  return x;
}

// Preferred-item target: the linear map along the graph, propagated in
// topological order with fresh per-node noise, so item->item edges carry
// noise components that user features alone cannot explain. Zero noise
// gives the plain expectation.
inline std::vector<double> preferred_target(const SemModel& sem,
                                            std::size_t q_u, std::size_t q_v,
                                            const std::vector<double>& u,
                                            double noise_std, Rng* rng) {
  const std::size_t d = q_u + q_v;
  std::vector<double> e(d, 0.0);
  for (std::size_t k = 0; k < q_u; ++k) e[k] = u[k];
  for (std::size_t pos = q_u; pos < d; ++pos) {
    const std::size_t node = sem.order[pos];
    double v = rng ? rng->normal(0.0, noise_std) : 0.0;
    for (std::size_t k = 0; k < d; ++k) v += sem.weights(k, node) * e[k];
    e[node] = v;
  }
  return std::vector<double>(e.begin() + q_u, e.end());
}

inline std::size_t nearest_item(const Matrix& items,
                                const std::vector<double>& target) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < items.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < items.cols(); ++j) {
      const double diff = items(i, j) - target[j];
      s += diff * diff;
    }
    if (s < best_d) {
      best_d = s;
      best = i;
    }
  }
  return best;
}

inline FeatureSchema synth_schema(const std::string& prefix, std::size_t q) {
  FeatureSchema s;
  for (std::size_t i = 0; i < q; ++i) {
    s.columns.push_back({prefix + std::to_string(i), ColumnKind::kNumeric, {}});
  }
  return s;
}

// z-score columns in place using stats computed over rows [0, stat_rows).
inline std::vector<NormStat> zscore_by(Matrix& m, std::size_t stat_rows,
                                       const FeatureSchema& schema) {
  std::vector<NormStat> stats;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < stat_rows; ++r) mean += m(r, j);
    mean /= static_cast<double>(stat_rows);
    double var = 0.0;
    for (std::size_t r = 0; r < stat_rows; ++r) {
      const double d = m(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(stat_rows);
    const double stddev = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      m(r, j) = (m(r, j) - mean) / stddev;
    }
    stats.push_back({schema.columns[j].name, mean, stddev});
  }
  return stats;
}

}  // namespace detail

inline std::pair<EncodedDataset, GroundTruthGraph> synth_generate(
    const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5e77));
  const std::size_t d = spec.q_u + spec.q_v;
  const bool shifted = !spec.user_shift.empty() &&
                       std::any_of(spec.user_shift.begin(), spec.user_shift.end(),
                                   [](double x) { return x != 0.0; });

  const detail::SemModel sem = detail::sample_sem(spec, rng);

  GroundTruthGraph truth;
  truth.q_u = spec.q_u;
  truth.q_v = spec.q_v;
  truth.adjacency = Matrix(d, d);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t c = 0; c < d; ++c) {
      truth.adjacency(k, c) = sem.weights(k, c) != 0.0 ? 1.0 : 0.0;
    }
  }
  truth.validate();

  // User pool: base users first, then the shifted fifth.
  const std::size_t n_shift_users = spec.n_users / 5;
  const std::size_t n_base_users = spec.n_users - n_shift_users;
  Matrix users(spec.n_users, spec.q_u);
  const std::vector<double> no_shift;
  for (std::size_t r = 0; r < spec.n_users; ++r) {
    const auto& shift = r < n_base_users ? no_shift : spec.user_shift;
    const auto u = detail::sample_user(sem, spec.q_u, shift, rng);
    for (std::size_t j = 0; j < spec.q_u; ++j) users(r, j) = u[j];
  }

  // Interactions and items are co-generated: each interaction draws a user
  // and a preferred-item target; while pool slots remain, the target itself
  // becomes a pool item (its own nearest neighbor), afterwards targets snap
  // to the nearest existing pool item. The last fifth of interactions comes
  // from the shifted user pool.
  const std::size_t n_shift_inter = spec.n_interactions / 5;
  const std::size_t n_base_inter = spec.n_interactions - n_shift_inter;
  EncodedDataset ds;
  Matrix items(spec.n_items, spec.q_v);
  std::size_t items_filled = 0;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 100 * spec.n_interactions + 1000;
  while (ds.interactions.size() < spec.n_interactions) {
    if (++attempts > max_attempts) {
      throw DataError(
          "synth: could not draw enough distinct interactions; increase "
          "n_users or n_items");
    }
    // Shifted-pool draws are spread evenly through the sequence so the
    // co-generated item pool represents both segments.
    const std::size_t r = ds.interactions.size();
    const bool from_shift_pool =
        ((r + 1) * n_shift_inter) / spec.n_interactions !=
        (r * n_shift_inter) / spec.n_interactions;
    const std::uint32_t user = static_cast<std::uint32_t>(
        from_shift_pool ? n_base_users + rng.index(n_shift_users ? n_shift_users : 1)
                        : rng.index(n_base_users));
    std::vector<double> u(spec.q_u);
    for (std::size_t j = 0; j < spec.q_u; ++j) u[j] = users(user, j);
    const auto target = detail::preferred_target(sem, spec.q_u, spec.q_v, u,
                                                 spec.noise_std, &rng);
    std::uint32_t item;
    if (items_filled < spec.n_items) {
      item = static_cast<std::uint32_t>(items_filled);
      for (std::size_t j = 0; j < spec.q_v; ++j) items(item, j) = target[j];
      ++items_filled;
    } else {
      item = static_cast<std::uint32_t>(detail::nearest_item(items, target));
      if (!seen.insert({user, item}).second) continue;
    }
    ds.interactions.push_back({user, item});
    ds.regions.push_back(from_shift_pool ? kRegionShifted : kRegionBase);
  }

  // Any pool slots left over are latent-user draws; their latent users
  // interpolate between base and shifted means so the pool covers the test
  // support too.
  for (std::size_t r = items_filled; r < spec.n_items; ++r) {
    std::vector<double> shift;
    if (shifted) {
      const double t = rng.real01();
      shift.resize(spec.q_u);
      for (std::size_t j = 0; j < spec.q_u; ++j) shift[j] = t * spec.user_shift[j];
    }
    const auto latent = detail::sample_user(sem, spec.q_u, shift, rng);
    const auto e = detail::preferred_target(sem, spec.q_u, spec.q_v, latent,
                                            spec.noise_std, &rng);
    for (std::size_t j = 0; j < spec.q_v; ++j) items(r, j) = e[j];
  }

  ds.user_schema = detail::synth_schema("u", spec.q_u);
  ds.item_schema = detail::synth_schema("v", spec.q_v);
  for (std::size_t r = 0; r < spec.n_users; ++r) {
    ds.user_ids.push_back("u" + std::to_string(r));
  }
  for (std::size_t r = 0; r < spec.n_items; ++r) {
    ds.item_ids.push_back("i" + std::to_string(r));
  }
  ds.user_features = std::move(users);
  ds.item_features = std::move(items);
  // Normalization stats come from the base (training-side) users only, so a
  // mean shift survives encoding instead of leaking into the statistics.
  ds.user_norm = detail::zscore_by(ds.user_features, n_base_users, ds.user_schema);
  ds.item_norm = detail::zscore_by(ds.item_features, spec.n_items, ds.item_schema);
  ds.validate();
  return {std::move(ds), std::move(truth)};
}

// "source,target,weight" rows for the ground-truth edges.
inline void save_truth_csv(const GroundTruthGraph& truth,
                           const std::vector<std::string>& node_names,
                           const std::string& path) {
  std::string text = "source,target,weight\n";
  const std::size_t d = truth.node_count();
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t c = 0; c < d; ++c) {
      if (truth.adjacency(k, c) != 0.0) {
        text += node_names[k] + "," + node_names[c] + ",1\n";
      }
    }
  }
  detail::write_text_file(path, text);
}

}  // namespace causpref
