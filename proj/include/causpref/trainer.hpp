#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causpref/dag.hpp"
#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/eval.hpp"
#include "causpref/optim.hpp"
#include "causpref/predictor.hpp"
#include "causpref/rng.hpp"
#include "causpref/sampler.hpp"
#include "causpref/splits.hpp"
#include "causpref/tape.hpp"

namespace causpref {

constexpr const char* kModelVersion = "v1";

// The four named configurations. The weakened variants drop, in order, the
// structure-specific penalties and then the whole DAG regularizer; the
// backbone drops the preference machinery entirely.
enum class Preset { kCausPref, kCausPrefMinus, kCausPrefMinusMinus, kNeuMF };

inline std::string to_string(Preset p) {
  switch (p) {
    case Preset::kCausPref: return "causpref";
    case Preset::kCausPrefMinus: return "causpref-";
    case Preset::kCausPrefMinusMinus: return "causpref--";
    case Preset::kNeuMF: return "neumf";
  }
  return "?";
}

inline Preset preset_from_string(const std::string& s) {
  if (s == "causpref") return Preset::kCausPref;
  if (s == "causpref-") return Preset::kCausPrefMinus;
  if (s == "causpref--") return Preset::kCausPrefMinusMinus;
  if (s == "neumf") return Preset::kNeuMF;
  throw UsageError("unknown preset '" + s + "'");
}

struct TrainConfig {
  double zeta = 1.0;  // weight of the structure term in the joint objective
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // epochs without val NDCG@10 improvement
  std::uint64_t seed = 0;

  bool use_preference_input = true;
  bool use_dag_regularizer = true;
  bool use_rs_constraints = true;
  bool use_aps = true;

  PredictorVariant predictor = PredictorVariant::kNeuMF;
  std::size_t embed_dim = 16;
  std::size_t dag_hidden_width = 16;  // M
  std::size_t dag_depth = 3;          // H
  ApsConfig aps;

  static TrainConfig preset(Preset p) {
    TrainConfig c;
    switch (p) {
      case Preset::kCausPref:
        break;  // everything on
      case Preset::kCausPrefMinus:
        c.use_rs_constraints = false;
        break;
      case Preset::kCausPrefMinusMinus:
        c.use_rs_constraints = false;
        c.use_dag_regularizer = false;
        break;
      case Preset::kNeuMF:
        c.use_preference_input = false;
        c.use_dag_regularizer = false;
        c.use_rs_constraints = false;
        c.use_aps = false;
        break;
    }
    return c;
  }

  // The structure learner participates only when something consumes it.
  bool trains_dag() const {
    return use_preference_input || use_aps || use_dag_regularizer ||
           use_rs_constraints;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // full objective, mean over batches
  double bpr = 0.0;
  double dag = 0.0;  // structure term (unweighted by zeta)
  double val_ndcg10 = 0.0;
  double val_recall10 = 0.0;
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainedModel {
  DagParams theta;
  PredictorParams phi;
  DagHyper dag_hyper;
  TrainConfig config;
  std::uint64_t schema_hash = 0;

  Scorer scorer() const {
    Scorer s;
    s.phi = &phi;
    s.theta = &theta;
    s.preference_input = config.use_preference_input;
    return s;
  }
};

namespace detail {

struct BatchInputs {
  Matrix users;      // B x q_u
  Matrix pos_items;  // B x q_v
  Matrix neg_items;  // B x q_v
};

inline Matrix gather_rows(const Matrix& table,
                          const std::vector<std::uint32_t>& rows) {
  Matrix out(rows.size(), table.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) {
      out(r, c) = table(rows[r], c);
    }
  }
  return out;
}

}  // namespace detail

// The whole joint objective for one batch with the negatives already fixed:
// pairwise ranking loss over scores of (user repr, pos) vs (user repr, neg),
// plus zeta times the structure term. The user representation is the
// inferred preference when the flag is set, so ranking gradients reach the
// structure parameters through it.
struct JointGraph {
  DagNodes dag_nodes;
  PredictorNodes phi_nodes;
  NodeId objective = -1;
  NodeId bpr = -1;
  NodeId dag_total = -1;  // stays -1 when the structure term is absent
};

inline JointGraph joint_objective_nodes(Tape& tape, const DagParams& theta,
                                        const PredictorParams& phi,
                                        const DagHyper& dag_hyper,
                                        const TrainConfig& config,
                                        const Matrix& users,
                                        const Matrix& pos_items,
                                        const Matrix& neg_items) {
  const std::size_t q_u = theta.q_u;
  const std::size_t q_v = theta.q_v;
  const std::size_t batch = users.rows();
  const bool train_dag = config.trains_dag();

  JointGraph g;
  if (train_dag) g.dag_nodes = bind_dag_params(tape, theta);
  g.phi_nodes = bind_predictor_params(tape, phi);
  NodeId users_node = tape.input(users, false);
  NodeId pos_node = tape.input(pos_items, false);
  NodeId neg_node = tape.input(neg_items, false);

  NodeId user_repr = users_node;
  if (config.use_preference_input) {
    NodeId padded =
        tape.concat_cols({users_node, tape.input(Matrix(batch, q_v), false)});
    user_repr = reconstruct_cols_node(tape, g.dag_nodes, padded, q_u, q_u + q_v);
  }
  NodeId pos_score = score_node(tape, phi, g.phi_nodes, user_repr, pos_node);
  NodeId neg_score = score_node(tape, phi, g.phi_nodes, user_repr, neg_node);
  g.bpr = bpr_loss_node(tape, pos_score, neg_score);
  g.objective = g.bpr;
  if (train_dag) {
    NodeId pairs_node =
        tape.input(detail::concat_cols_plain(users, pos_items), false);
    DagLossNodes dag_loss = dag_loss_nodes(
        tape, g.dag_nodes, pairs_node, q_u, q_v, dag_hyper,
        config.use_dag_regularizer, config.use_rs_constraints);
    g.dag_total = dag_loss.total;
    g.objective =
        tape.add(g.objective, tape.scale(dag_loss.total, dag_hyper.zeta));
  }
  return g;
}

// Joint training of the structure learner and the scoring head: per batch,
// negatives come from the live structure parameters, the pairwise loss flows
// back into both parameter sets, and the structure term is added with weight
// zeta. The best validation NDCG@10 checkpoint is returned.
inline TrainedModel train(const EncodedDataset& ds, const Split& split,
                          const DagHyper& dag_hyper, const TrainConfig& config,
                          TrainHistory* history = nullptr) {
  if (split.train.empty()) throw DataError("train: empty training split");
  const std::size_t q_u = ds.q_u();
  const std::size_t q_v = ds.q_v();
  const bool train_dag = config.trains_dag();

  TrainedModel model;
  model.dag_hyper = dag_hyper;
  model.config = config;
  model.schema_hash = schema_hash(ds);
  model.theta = DagParams::init(q_u, q_v, config.dag_hidden_width,
                                config.dag_depth, mix_seed(config.seed, 1));
  model.phi = PredictorParams::init(
      config.predictor, config.use_preference_input ? q_v : q_u, q_v,
      config.embed_dim, mix_seed(config.seed, 2));

  // Training-side item universe and per-user known positives; negatives may
  // not collide with either the pair's positive or the user's history.
  std::set<std::uint32_t> train_item_set;
  std::map<std::uint32_t, std::set<std::uint32_t>> known_positives;
  for (std::uint32_t i : split.train) {
    train_item_set.insert(ds.interactions[i].item);
    known_positives[ds.interactions[i].user].insert(ds.interactions[i].item);
  }
  const std::vector<std::uint32_t> item_pool(train_item_set.begin(),
                                             train_item_set.end());

  Adam adam({config.learning_rate, config.adam_beta1, config.adam_beta2,
             config.adam_eps});
  Rng shuffle_rng(mix_seed(config.seed, 3));
  Rng sampler_rng(mix_seed(config.seed, 4));

  EvalConfig val_config;
  val_config.k_list = {10};

  double best_val = -1.0;
  std::size_t epochs_since_best = 0;
  DagParams best_theta = model.theta;
  PredictorParams best_phi = model.phi;
  double last_finite_loss = 0.0;

  std::vector<std::uint32_t> order = split.train;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle(order, shuffle_rng);
    double epoch_loss = 0.0, epoch_bpr = 0.0, epoch_dag = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      std::vector<std::uint32_t> user_rows, pos_rows;
      for (std::size_t i = start; i < end; ++i) {
        user_rows.push_back(ds.interactions[order[i]].user);
        pos_rows.push_back(ds.interactions[order[i]].item);
      }
      const std::size_t batch = user_rows.size();

      detail::BatchInputs in;
      in.users = detail::gather_rows(ds.user_features, user_rows);
      in.pos_items = detail::gather_rows(ds.item_features, pos_rows);

      // Negatives come from the live structure parameters (or uniform);
      // the tape rejects non-finite values eagerly, so a blow-up can
      // surface anywhere from sampling through graph construction. The
      // abort names the batch and the last finite loss either way.
      Tape tape;
      JointGraph graph;
      try {
        const Matrix prefs =
            config.use_aps ? infer_preference_batch(model.theta, in.users)
                           : Matrix();
        std::vector<std::uint32_t> neg_rows(batch);
        for (std::size_t i = 0; i < batch; ++i) {
          if (config.use_aps) {
            std::vector<double> pref(q_v);
            for (std::size_t j = 0; j < q_v; ++j) pref[j] = prefs(i, j);
            neg_rows[i] = aps_sample_with_preference(
                pref, ds.item_features, item_pool, pos_rows[i],
                &known_positives[user_rows[i]], config.aps, sampler_rng);
          } else {
            neg_rows[i] = random_sample(item_pool, pos_rows[i], sampler_rng);
          }
        }
        in.neg_items = detail::gather_rows(ds.item_features, neg_rows);
        graph =
            joint_objective_nodes(tape, model.theta, model.phi, dag_hyper,
                                  config, in.users, in.pos_items, in.neg_items);
      } catch (const NumericError& e) {
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(batches) + "; last finite loss " +
                           std::to_string(last_finite_loss) + " (" + e.what() +
                           ")");
      }
      const double bpr_value = tape.value(graph.bpr)(0, 0);
      const double dag_value =
          graph.dag_total >= 0 ? tape.value(graph.dag_total)(0, 0) : 0.0;
      const double total = tape.value(graph.objective)(0, 0);
      if (!std::isfinite(total)) {
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(batches) + "; last finite loss " +
                           std::to_string(last_finite_loss));
      }
      last_finite_loss = total;
      tape.backward(graph.objective);

      std::vector<Matrix*> params;
      std::vector<Matrix> grads;
      if (train_dag) {
        for (auto* p : model.theta.all_params()) params.push_back(p);
        for (std::size_t k = 0; k < graph.dag_nodes.first.size(); ++k) {
          Matrix g = tape.adjoint(graph.dag_nodes.first[k]);
          for (std::size_t j = 0; j < g.cols(); ++j) g(k, j) = 0.0;
          grads.push_back(std::move(g));
        }
        for (NodeId w : graph.dag_nodes.mid) grads.push_back(tape.adjoint(w));
        for (NodeId w : graph.dag_nodes.out) grads.push_back(tape.adjoint(w));
      }
      {
        std::vector<NodeId> phi_ids;
        if (model.phi.variant == PredictorVariant::kNeuMF) {
          phi_ids = {graph.phi_nodes.gmf_user, graph.phi_nodes.gmf_item};
          for (NodeId w : graph.phi_nodes.mlp) phi_ids.push_back(w);
          phi_ids.push_back(graph.phi_nodes.combine);
        } else {
          phi_ids = {graph.phi_nodes.linear_w, graph.phi_nodes.linear_b};
        }
        for (auto* p : model.phi.all_params()) params.push_back(p);
        for (NodeId id : phi_ids) grads.push_back(tape.adjoint(id));
      }
      std::vector<const Matrix*> grad_ptrs;
      grad_ptrs.reserve(grads.size());
      for (const auto& g : grads) grad_ptrs.push_back(&g);
      adam.step(params, grad_ptrs);
      if (train_dag) model.theta.apply_row_mask();

      epoch_loss += total;
      epoch_bpr += bpr_value;
      epoch_dag += dag_value;
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / batches;
    record.bpr = epoch_bpr / batches;
    record.dag = epoch_dag / batches;

    if (!split.val.empty()) {
      const Scorer scorer = model.scorer();
      const MetricsTable val = evaluate(scorer, ds, split.val, val_config);
      record.val_ndcg10 = val.at("ndcg", 10);
      record.val_recall10 = val.at("recall", 10);
      if (record.val_ndcg10 > best_val) {
        best_val = record.val_ndcg10;
        best_theta = model.theta;
        best_phi = model.phi;
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
      }
    }
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (history) history->push_back(record);
    if (!split.val.empty() && epochs_since_best > config.patience) break;
  }

  if (!split.val.empty()) {
    model.theta = std::move(best_theta);
    model.phi = std::move(best_phi);
  }
  return model;
}

// --- config / model serialization ----------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"zeta", c.zeta},
      {"learning_rate", c.learning_rate},
      {"adam_betas", {c.adam_beta1, c.adam_beta2}},
      {"adam_eps", c.adam_eps},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"seed", c.seed},
      {"use_preference_input", c.use_preference_input},
      {"use_dag_regularizer", c.use_dag_regularizer},
      {"use_rs_constraints", c.use_rs_constraints},
      {"use_aps", c.use_aps},
      {"predictor", to_string(c.predictor)},
      {"embed_dim", c.embed_dim},
      {"dag_hidden_width", c.dag_hidden_width},
      {"dag_depth", c.dag_depth},
      {"aps",
       {{"candidates", c.aps.candidates},
        {"distance", to_string(c.aps.distance)},
        {"tie_floor", c.aps.tie_floor},
        {"hardest", c.aps.hardest}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.zeta = j.at("zeta").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adam_beta1 = j.at("adam_betas")[0].get<double>();
  c.adam_beta2 = j.at("adam_betas")[1].get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_preference_input = j.at("use_preference_input").get<bool>();
  c.use_dag_regularizer = j.at("use_dag_regularizer").get<bool>();
  c.use_rs_constraints = j.at("use_rs_constraints").get<bool>();
  c.use_aps = j.at("use_aps").get<bool>();
  c.predictor = predictor_variant_from_string(j.at("predictor").get<std::string>());
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.dag_hidden_width = j.at("dag_hidden_width").get<std::size_t>();
  c.dag_depth = j.at("dag_depth").get<std::size_t>();
  const auto& aps = j.at("aps");
  c.aps.candidates = aps.at("candidates").get<std::size_t>();
  c.aps.distance = distance_kind_from_string(aps.at("distance").get<std::string>());
  c.aps.tie_floor = aps.at("tie_floor").get<double>();
  c.aps.hardest = aps.at("hardest").get<bool>();
  return c;
}

inline void save_model(const TrainedModel& model, const std::string& path) {
  nlohmann::json j{{"version", kModelVersion},
                   {"schema_hash", model.schema_hash},
                   {"dag_hyper", dag_hyper_to_json(model.dag_hyper)},
                   {"train_config", train_config_to_json(model.config)},
                   {"theta", dag_params_to_json(model.theta)},
                   {"phi", predictor_to_json(model.phi)}};
  detail::write_text_file(path, j.dump());
}

inline TrainedModel load_model(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path);
  try {
    const std::string version = j.at("version").get<std::string>();
    if (version != kModelVersion) {
      throw DataError("model " + path + ": version '" + version +
                      "' not supported (current " + kModelVersion + ")");
    }
    TrainedModel model;
    model.schema_hash = j.at("schema_hash").get<std::uint64_t>();
    model.dag_hyper = dag_hyper_from_json(j.at("dag_hyper"));
    model.config = train_config_from_json(j.at("train_config"));
    model.theta = dag_params_from_json(j.at("theta"));
    model.phi = predictor_from_json(j.at("phi"));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model " + path + ": " + e.what());
  }
}

// Refuses to evaluate a checkpoint against a dataset it was not trained on.
inline void check_model_compat(const TrainedModel& model,
                               const EncodedDataset& ds) {
  if (model.theta.q_v != ds.q_v()) {
    throw DataError("model expects q_v " + std::to_string(model.theta.q_v) +
                    " but dataset provides q_v " + std::to_string(ds.q_v()));
  }
  if (model.theta.q_u != ds.q_u()) {
    throw DataError("model expects q_u " + std::to_string(model.theta.q_u) +
                    " but dataset provides q_u " + std::to_string(ds.q_u()));
  }
  if (model.schema_hash != schema_hash(ds)) {
    throw DataError("model schema hash does not match the dataset");
  }
}

inline std::string history_to_csv(const TrainHistory& history) {
  std::string csv =
      "epoch,train_loss,bpr_loss,dag_loss,val_ndcg10,val_recall10,seconds\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  r.epoch, r.train_loss, r.bpr, r.dag, r.val_ndcg10,
                  r.val_recall10, r.seconds);
    csv += buf;
  }
  return csv;
}

}  // namespace causpref
