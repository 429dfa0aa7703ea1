#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causpref/dag.hpp"
#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/eval.hpp"
#include "causpref/splits.hpp"
#include "causpref/synth.hpp"
#include "causpref/trainer.hpp"

namespace causpref {

// A whole experiment in one JSON document; flags only override keys.
// Unknown keys are rejected so config typos cannot silently change runs.
struct DatasetConfig {
  std::string encoded;  // path to an encoded dataset file
  std::optional<SyntheticSpec> synthetic;
  struct Raw {
    std::string users, items, interactions;
    FeatureSchema user_schema, item_schema;
  };
  std::optional<Raw> raw;
};

struct SweepConfig {
  std::vector<std::pair<double, double>> train_ratios;
  std::vector<Preset> variants{Preset::kCausPref, Preset::kNeuMF};
};

struct ExperimentConfig {
  std::string out_dir = "out";
  std::vector<std::uint64_t> seeds{0};
  DatasetConfig dataset;
  SplitSpec split;
  DagHyper dag;
  Preset preset = Preset::kCausPref;
  TrainConfig train;  // preset-resolved, overrides applied
  EvalConfig eval;
  SweepConfig sweep;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw UsageError("config: unknown key '" + key + "' in " + where);
    }
  }
}

inline FeatureSchema schema_from_config(const nlohmann::json& j,
                                        const std::string& where) {
  reject_unknown_keys(j, {"columns"}, where);
  return schema_from_json(j);
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"q_u", "q_v", "n_users", "n_items", "n_interactions",
                       "edge_density", "noise_std", "mechanism", "user_shift",
                       "seed"},
                      "dataset.synthetic");
  SyntheticSpec s;
  if (j.contains("q_u")) s.q_u = j["q_u"].get<std::size_t>();
  if (j.contains("q_v")) s.q_v = j["q_v"].get<std::size_t>();
  if (j.contains("n_users")) s.n_users = j["n_users"].get<std::size_t>();
  if (j.contains("n_items")) s.n_items = j["n_items"].get<std::size_t>();
  if (j.contains("n_interactions")) {
    s.n_interactions = j["n_interactions"].get<std::size_t>();
  }
  if (j.contains("edge_density")) s.edge_density = j["edge_density"].get<double>();
  if (j.contains("noise_std")) s.noise_std = j["noise_std"].get<double>();
  if (j.contains("mechanism") && j["mechanism"].get<std::string>() != "linear") {
    throw UsageError("config: only the linear mechanism is available");
  }
  if (j.contains("user_shift")) {
    s.user_shift = j["user_shift"].get<std::vector<double>>();
  }
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  return s;
}

inline nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  return nlohmann::json{{"q_u", s.q_u},
                        {"q_v", s.q_v},
                        {"n_users", s.n_users},
                        {"n_items", s.n_items},
                        {"n_interactions", s.n_interactions},
                        {"edge_density", s.edge_density},
                        {"noise_std", s.noise_std},
                        {"mechanism", "linear"},
                        {"user_shift", s.user_shift},
                        {"seed", s.seed}};
}

inline DatasetConfig dataset_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"encoded", "synthetic", "raw"}, "dataset");
  DatasetConfig d;
  if (j.contains("encoded")) d.encoded = j["encoded"].get<std::string>();
  if (j.contains("synthetic")) d.synthetic = synthetic_from_json(j["synthetic"]);
  if (j.contains("raw")) {
    const auto& r = j["raw"];
    reject_unknown_keys(
        r, {"users", "items", "interactions", "user_schema", "item_schema"},
        "dataset.raw");
    DatasetConfig::Raw raw;
    raw.users = r.at("users").get<std::string>();
    raw.items = r.at("items").get<std::string>();
    raw.interactions = r.at("interactions").get<std::string>();
    raw.user_schema = schema_from_config(r.at("user_schema"), "user_schema");
    raw.item_schema = schema_from_config(r.at("item_schema"), "item_schema");
    d.raw = std::move(raw);
  }
  const int sources = !d.encoded.empty() + d.synthetic.has_value() +
                      d.raw.has_value();
  if (sources != 1) {
    throw UsageError(
        "config: dataset needs exactly one of encoded/synthetic/raw");
  }
  return d;
}

inline SplitSpec split_from_config(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"kind", "train_ratio_ab", "test_ratio_ab", "degree_skew",
                       "train_region", "test_region", "proportions",
                       "sample_size", "inductive", "seed"},
                      "split");
  return split_spec_from_json(j);
}

inline DagHyper dag_from_config(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"alpha", "beta", "chi", "xi", "lambda", "zeta",
                       "eps_norm", "edge_threshold"},
                      "dag");
  DagHyper h;
  if (j.contains("alpha")) h.alpha = j["alpha"].get<double>();
  if (j.contains("beta")) h.beta = j["beta"].get<double>();
  if (j.contains("chi")) h.chi = j["chi"].get<double>();
  if (j.contains("xi")) h.xi = j["xi"].get<double>();
  if (j.contains("lambda")) h.lambda = j["lambda"].get<double>();
  if (j.contains("zeta")) h.zeta = j["zeta"].get<double>();
  if (j.contains("eps_norm")) h.eps_norm = j["eps_norm"].get<double>();
  if (j.contains("edge_threshold")) {
    h.edge_threshold = j["edge_threshold"].get<double>();
  }
  return h;
}

inline std::pair<Preset, TrainConfig> train_from_config(const nlohmann::json& j) {
  reject_unknown_keys(
      j,
      {"preset", "zeta", "learning_rate", "batch_size", "max_epochs",
       "patience", "predictor", "embed_dim", "dag_hidden_width", "dag_depth",
       "aps_candidates", "aps_distance", "aps_hardest"},
      "train");
  Preset preset = Preset::kCausPref;
  if (j.contains("preset")) preset = preset_from_string(j["preset"]);
  TrainConfig c = TrainConfig::preset(preset);
  if (j.contains("zeta")) c.zeta = j["zeta"].get<double>();
  if (j.contains("learning_rate")) {
    c.learning_rate = j["learning_rate"].get<double>();
  }
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<std::size_t>();
  if (j.contains("patience")) c.patience = j["patience"].get<std::size_t>();
  if (j.contains("predictor")) {
    c.predictor = predictor_variant_from_string(j["predictor"]);
  }
  if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<std::size_t>();
  if (j.contains("dag_hidden_width")) {
    c.dag_hidden_width = j["dag_hidden_width"].get<std::size_t>();
  }
  if (j.contains("dag_depth")) c.dag_depth = j["dag_depth"].get<std::size_t>();
  if (j.contains("aps_candidates")) {
    c.aps.candidates = j["aps_candidates"].get<std::size_t>();
  }
  if (j.contains("aps_distance")) {
    c.aps.distance = distance_kind_from_string(j["aps_distance"]);
  }
  if (j.contains("aps_hardest")) c.aps.hardest = j["aps_hardest"].get<bool>();
  return {preset, c};
}

inline EvalConfig eval_from_config(const nlohmann::json& j) {
  reject_unknown_keys(
      j, {"k_list", "pool_mode", "pool_size", "pool_seed", "region_aware"},
      "eval");
  EvalConfig c;
  if (j.contains("k_list")) {
    c.k_list = j["k_list"].get<std::vector<std::size_t>>();
  }
  if (j.contains("pool_mode")) {
    const std::string mode = j["pool_mode"].get<std::string>();
    if (mode == "all_test_items") {
      c.pool_mode = PoolMode::kAllTestItems;
    } else if (mode == "sampled") {
      c.pool_mode = PoolMode::kSampledPool;
    } else {
      throw UsageError("config: unknown pool mode '" + mode + "'");
    }
  }
  if (j.contains("pool_size")) c.pool_size = j["pool_size"].get<std::size_t>();
  if (j.contains("pool_seed")) c.pool_seed = j["pool_seed"].get<std::uint64_t>();
  if (j.contains("region_aware")) c.region_aware = j["region_aware"].get<bool>();
  return c;
}

inline SweepConfig sweep_from_config(const nlohmann::json& j) {
  reject_unknown_keys(j, {"train_ratios", "variants"}, "sweep");
  SweepConfig c;
  if (j.contains("train_ratios")) {
    for (const auto& r : j["train_ratios"]) {
      c.train_ratios.emplace_back(r[0].get<double>(), r[1].get<double>());
    }
  }
  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& v : j["variants"]) {
      c.variants.push_back(preset_from_string(v.get<std::string>()));
    }
  }
  return c;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j, {"out_dir", "seeds", "dataset", "split", "dag", "train", "eval",
          "sweep"},
      "experiment");
  ExperimentConfig c;
  if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("seeds")) {
    c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw UsageError("config: seeds must be nonempty");
  }
  if (!j.contains("dataset")) throw UsageError("config: dataset is required");
  c.dataset = detail::dataset_from_json(j["dataset"]);
  if (j.contains("split")) c.split = detail::split_from_config(j["split"]);
  if (j.contains("dag")) c.dag = detail::dag_from_config(j["dag"]);
  if (j.contains("train")) {
    auto [preset, train] = detail::train_from_config(j["train"]);
    c.preset = preset;
    c.train = train;
  }
  if (j.contains("eval")) c.eval = detail::eval_from_config(j["eval"]);
  if (j.contains("sweep")) c.sweep = detail::sweep_from_config(j["sweep"]);
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config " + path + ": " + e.what());
  }
  try {
    return parse_experiment_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

// --- command implementations ---------------------------------------------------------

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void require_upstream(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("missing upstream file: " + path);
  }
}

// Every command drops its resolved configuration and seeds next to its
// outputs so a run can be reproduced from the directory alone.
inline void echo_config(const ExperimentConfig& config,
                        const nlohmann::json& raw_config,
                        const std::string& command) {
  nlohmann::json echo = raw_config;
  echo["resolved"] = {{"command", command},
                      {"out_dir", config.out_dir},
                      {"seeds", config.seeds},
                      {"split", split_spec_to_json(config.split)},
                      {"dag", dag_hyper_to_json(config.dag)},
                      {"train", train_config_to_json(config.train)},
                      {"preset", to_string(config.preset)}};
  write_text_file(join_path(config.out_dir, command + "_config.json"),
                  echo.dump(2));
}

}  // namespace detail

// Loads (or deterministically regenerates) the configured dataset.
inline EncodedDataset resolve_dataset(const ExperimentConfig& config) {
  if (config.dataset.synthetic) {
    return synth_generate(*config.dataset.synthetic).first;
  }
  if (config.dataset.raw) {
    const auto& r = *config.dataset.raw;
    for (const auto& p : {r.users, r.items, r.interactions}) {
      detail::require_upstream(p);
    }
    return load_raw(r.users, r.items, r.interactions, r.user_schema,
                    r.item_schema);
  }
  detail::require_upstream(config.dataset.encoded);
  return load_encoded(config.dataset.encoded);
}

inline void ensure_out_dir(const ExperimentConfig& config) {
  std::filesystem::create_directories(config.out_dir);
}

inline void cmd_synth(const ExperimentConfig& config,
                      const nlohmann::json& raw_config) {
  if (!config.dataset.synthetic) {
    throw UsageError("synth: config must provide dataset.synthetic");
  }
  ensure_out_dir(config);
  auto [ds, truth] = synth_generate(*config.dataset.synthetic);
  save_encoded(ds, detail::join_path(config.out_dir, "dataset.json"));
  save_truth_csv(truth, ds.node_names(),
                 detail::join_path(config.out_dir, "truth_edges.csv"));
  detail::echo_config(config, raw_config, "synth");
}

inline void cmd_split(const ExperimentConfig& config,
                      const nlohmann::json& raw_config) {
  ensure_out_dir(config);
  const EncodedDataset ds = resolve_dataset(config);
  SplitSpec spec = config.split;
  spec.seed = config.seeds.front();
  const Split split = make_split(ds, spec);
  save_split(split, spec, detail::join_path(config.out_dir, "split.json"));
  detail::echo_config(config, raw_config, "split");
}

inline void cmd_train(const ExperimentConfig& config,
                      const nlohmann::json& raw_config) {
  ensure_out_dir(config);
  const EncodedDataset ds = resolve_dataset(config);
  const std::string split_path = detail::join_path(config.out_dir, "split.json");
  detail::require_upstream(split_path);
  const auto [split, split_spec] = load_split(split_path);
  for (std::uint64_t seed : config.seeds) {
    TrainConfig train_config = config.train;
    train_config.seed = seed;
    TrainHistory history;
    const TrainedModel model =
        train(ds, split, config.dag, train_config, &history);
    const std::string tag = "_seed" + std::to_string(seed);
    save_model(model,
               detail::join_path(config.out_dir, "model" + tag + ".json"));
    detail::write_text_file(
        detail::join_path(config.out_dir, "history" + tag + ".csv"),
        history_to_csv(history));
  }
  detail::echo_config(config, raw_config, "train");
}

inline void cmd_eval(const ExperimentConfig& config,
                     const nlohmann::json& raw_config) {
  ensure_out_dir(config);
  const EncodedDataset ds = resolve_dataset(config);
  const std::string split_path = detail::join_path(config.out_dir, "split.json");
  detail::require_upstream(split_path);
  const auto [split, split_spec] = load_split(split_path);
  std::vector<MetricRow> rows;
  for (std::uint64_t seed : config.seeds) {
    const std::string model_path = detail::join_path(
        config.out_dir, "model_seed" + std::to_string(seed) + ".json");
    detail::require_upstream(model_path);
    const TrainedModel model = load_model(model_path);
    check_model_compat(model, ds);
    const MetricsTable table =
        evaluate(model.scorer(), ds, split.test, config.eval);
    append_metric_rows(&rows, table, to_string(split_spec.kind),
                       to_string(config.preset), seed);
  }
  detail::write_text_file(detail::join_path(config.out_dir, "metrics.csv"),
                          metrics_to_csv(rows));
  detail::echo_config(config, raw_config, "eval");
}

inline void cmd_export_dag(const ExperimentConfig& config,
                           const nlohmann::json& raw_config) {
  ensure_out_dir(config);
  const EncodedDataset ds = resolve_dataset(config);
  for (std::uint64_t seed : config.seeds) {
    const std::string model_path = detail::join_path(
        config.out_dir, "model_seed" + std::to_string(seed) + ".json");
    detail::require_upstream(model_path);
    const TrainedModel model = load_model(model_path);
    check_model_compat(model, ds);
    const auto edges =
        export_graph(model.theta, config.dag.edge_threshold);
    const auto names = ds.node_names();
    const std::string tag = "_seed" + std::to_string(seed);
    detail::write_text_file(
        detail::join_path(config.out_dir, "graph" + tag + ".dot"),
        graph_to_dot(edges, names));
    detail::write_text_file(
        detail::join_path(config.out_dir, "graph" + tag + "_edges.csv"),
        graph_to_csv(edges, names));
  }
  detail::echo_config(config, raw_config, "export-dag");
}

// Fig-3-style protocol: training-mix sweep x seeds x variants, one
// consolidated metrics file.
inline void cmd_sweep(const ExperimentConfig& config,
                      const nlohmann::json& raw_config) {
  if (config.sweep.train_ratios.empty()) {
    throw UsageError("sweep: config must provide sweep.train_ratios");
  }
  ensure_out_dir(config);
  const EncodedDataset ds = resolve_dataset(config);
  std::vector<MetricRow> rows;
  for (std::uint64_t seed : config.seeds) {
    SplitSpec base = config.split;
    base.seed = seed;
    const auto splits = ratio_sweep(ds, base, config.sweep.train_ratios);
    for (std::size_t r = 0; r < splits.size(); ++r) {
      char label[64];
      std::snprintf(label, sizeof(label), "%s[%g:%g]",
                    to_string(base.kind).c_str(),
                    config.sweep.train_ratios[r].first,
                    config.sweep.train_ratios[r].second);
      for (Preset preset : config.sweep.variants) {
        TrainConfig train_config = TrainConfig::preset(preset);
        train_config.zeta = config.train.zeta;
        train_config.learning_rate = config.train.learning_rate;
        train_config.batch_size = config.train.batch_size;
        train_config.max_epochs = config.train.max_epochs;
        train_config.patience = config.train.patience;
        train_config.predictor = config.train.predictor;
        train_config.embed_dim = config.train.embed_dim;
        train_config.dag_hidden_width = config.train.dag_hidden_width;
        train_config.dag_depth = config.train.dag_depth;
        train_config.aps = config.train.aps;
        train_config.seed = seed;
        const TrainedModel model =
            train(ds, splits[r], config.dag, train_config);
        const MetricsTable table =
            evaluate(model.scorer(), ds, splits[r].test, config.eval);
        append_metric_rows(&rows, table, label, to_string(preset), seed);
      }
    }
  }
  detail::write_text_file(
      detail::join_path(config.out_dir, "sweep_metrics.csv"),
      metrics_to_csv(rows));
  detail::echo_config(config, raw_config, "sweep");
}

}  // namespace causpref
