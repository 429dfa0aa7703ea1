#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"
#include "causpref/optim.hpp"
#include "causpref/rng.hpp"
#include "causpref/tape.hpp"

namespace causpref {

constexpr const char* kDagCheckpointVersion = "v1";

// Loss coefficients. xi must dwarf alpha and beta so the forbidden
// item->user block is actually driven to zero.
struct DagHyper {
  double alpha = 30.0;   // acyclicity
  double beta = 2e-3;    // first-layer sparsity
  double chi = 1e-3;     // shared/output weight decay
  double xi = 1e4;       // item->user block penalty
  double lambda = 1e-2;  // item-column norm (no-root) penalty
  double zeta = 1.0;     // weight of the whole term inside the joint objective
  double eps_norm = 1e-8;
  double edge_threshold = 0.3;
};

// Parameters of the reconstruction ensemble: one masked first-layer matrix
// and one output vector per feature, shared middle layers. Row d of
// first[d] is structurally zero so feature d never predicts itself.
struct DagParams {
  std::size_t q_u = 0, q_v = 0;
  std::size_t hidden_width = 16;  // M
  std::size_t depth = 3;          // H
  std::vector<Matrix> first;      // D matrices, D x M
  std::vector<Matrix> mid;        // H-2 matrices, M x M
  std::vector<Matrix> out;        // D matrices, M x 1

  std::size_t node_count() const { return q_u + q_v; }

  static DagParams init(std::size_t q_u, std::size_t q_v, std::size_t hidden_width,
                        std::size_t depth, std::uint64_t seed) {
    if (depth < 2) throw UsageError("dag: depth must be >= 2");
    if (hidden_width < 1) throw UsageError("dag: hidden width must be >= 1");
    DagParams p;
    p.q_u = q_u;
    p.q_v = q_v;
    p.hidden_width = hidden_width;
    p.depth = depth;
    const std::size_t d = q_u + q_v;
    Rng rng(mix_seed(seed, 0xda6));
    // First-layer scale 1/sqrt(D*M) keeps initial adjacency row norms well
    // under the edge threshold, so an untrained model exports no edges and
    // the acyclicity term starts near zero.
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d * hidden_width));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_width));
    auto fill = [&rng](Matrix& m, double s) {
      for (double& x : m.values()) x = s * (2.0 * rng.real01() - 1.0);
    };
    for (std::size_t k = 0; k < d; ++k) {
      Matrix w(d, hidden_width);
      fill(w, s1);
      p.first.push_back(std::move(w));
    }
    for (std::size_t h = 0; h + 2 < depth; ++h) {
      Matrix w(hidden_width, hidden_width);
      fill(w, s2);
      p.mid.push_back(std::move(w));
    }
    for (std::size_t k = 0; k < d; ++k) {
      Matrix w(hidden_width, 1);
      fill(w, s2);
      p.out.push_back(std::move(w));
    }
    p.apply_row_mask();
    return p;
  }

  // Pins row d of first[d] to exactly zero.
  void apply_row_mask() {
    for (std::size_t k = 0; k < first.size(); ++k) {
      for (std::size_t j = 0; j < first[k].cols(); ++j) first[k](k, j) = 0.0;
    }
  }

  bool row_mask_holds() const {
    for (std::size_t k = 0; k < first.size(); ++k) {
      for (std::size_t j = 0; j < first[k].cols(); ++j) {
        if (first[k](k, j) != 0.0) return false;
      }
    }
    return true;
  }

  std::vector<Matrix*> all_params() {
    std::vector<Matrix*> v;
    for (auto& m : first) v.push_back(&m);
    for (auto& m : mid) v.push_back(&m);
    for (auto& m : out) v.push_back(&m);
    return v;
  }
};

// --- plain (tape-free) forward passes -------------------------------------------

// Adjacency entry (k, d) is the L2 norm of row k of first[d]; the structural
// mask keeps the diagonal exactly zero.
inline Matrix adjacency(const DagParams& p) {
  const std::size_t d = p.node_count();
  Matrix a(d, d);
  for (std::size_t col = 0; col < d; ++col) {
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.hidden_width; ++j) {
        s += p.first[col](k, j) * p.first[col](k, j);
      }
      a(k, col) = std::sqrt(s);
    }
  }
  return a;
}

// Reconstruction of columns [col_begin, col_end): column d of the result is
// the sub-network for feature d applied to every row of x.
inline Matrix reconstruct_cols(const DagParams& p, const Matrix& x,
                               std::size_t col_begin, std::size_t col_end) {
  const std::size_t d = p.node_count();
  if (x.cols() != d) {
    throw ShapeError("reconstruct: input width " + x.shape_str() +
                     " does not match node count " + std::to_string(d));
  }
  Matrix result(x.rows(), col_end - col_begin);
  for (std::size_t col = col_begin; col < col_end; ++col) {
    Matrix h = matmul(x, p.first[col]);
    detail::relu_inplace(h);
    for (const Matrix& w : p.mid) {
      h = matmul(h, w);
      detail::relu_inplace(h);
    }
    Matrix o = matmul(h, p.out[col]);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      result(r, col - col_begin) = o(r, 0);
    }
  }
  return result;
}

inline Matrix reconstruct(const DagParams& p, const Matrix& x) {
  return reconstruct_cols(p, x, 0, p.node_count());
}

// Expected preferred-item features for a batch of users: one pass over
// [U | 0], keeping the item columns.
inline Matrix infer_preference_batch(const DagParams& p, const Matrix& users) {
  if (users.cols() != p.q_u) {
    throw ShapeError("infer_preference: user width " + users.shape_str() +
                     " does not match q_u " + std::to_string(p.q_u));
  }
  Matrix x(users.rows(), p.node_count());
  for (std::size_t r = 0; r < users.rows(); ++r) {
    for (std::size_t j = 0; j < p.q_u; ++j) x(r, j) = users(r, j);
  }
  return reconstruct_cols(p, x, p.q_u, p.node_count());
}

inline std::vector<double> infer_preference(const DagParams& p,
                                            const std::vector<double>& u) {
  Matrix users(1, u.size());
  for (std::size_t j = 0; j < u.size(); ++j) users(0, j) = u[j];
  const Matrix pref = infer_preference_batch(p, users);
  return pref.values();
}

// --- tape graph builders ----------------------------------------------------------

struct DagNodes {
  std::vector<NodeId> first, mid, out;
};

inline DagNodes bind_dag_params(Tape& tape, const DagParams& p) {
  DagNodes n;
  for (const Matrix& m : p.first) n.first.push_back(tape.input(m));
  for (const Matrix& m : p.mid) n.mid.push_back(tape.input(m));
  for (const Matrix& m : p.out) n.out.push_back(tape.input(m));
  return n;
}

inline NodeId reconstruct_cols_node(Tape& tape, const DagNodes& nodes, NodeId x,
                                    std::size_t col_begin, std::size_t col_end) {
  std::vector<NodeId> cols;
  for (std::size_t col = col_begin; col < col_end; ++col) {
    NodeId h = tape.relu(tape.matmul(x, nodes.first[col]));
    for (NodeId w : nodes.mid) h = tape.relu(tape.matmul(h, w));
    cols.push_back(tape.matmul(h, nodes.out[col]));
  }
  return cols.size() == 1 ? cols[0] : tape.concat_cols(cols);
}

inline NodeId adjacency_node(Tape& tape, const DagNodes& nodes) {
  std::vector<NodeId> cols;
  cols.reserve(nodes.first.size());
  for (NodeId w : nodes.first) cols.push_back(tape.row_l2_norms(w));
  return tape.concat_cols(cols);
}

namespace detail {
inline NodeId add_all(Tape& tape, const std::vector<NodeId>& terms) {
  NodeId acc = terms.at(0);
  for (std::size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return acc;
}
}  // namespace detail

struct DagLossNodes {
  NodeId total = -1;
  NodeId reconstruction = -1;
  NodeId acyclicity = -1;   // unweighted (tr e^{A.*A} - D)^2
  NodeId sparsity = -1;     // unweighted |W1|_1
  NodeId weight_l2 = -1;    // unweighted sum of squared mid/out weights
  NodeId zero_block = -1;   // unweighted L1 of the item->user block
  NodeId norm_term = -1;    // unweighted -sum log(col norm + eps)
  NodeId adjacency = -1;
};

// The reconstruction + acyclicity + sparsity + weight-decay term, plus the
// two recommendation-specific penalties when rs_terms is set: the L1 of the
// item->user adjacency block and the no-root column-norm term.
inline DagLossNodes dag_loss_nodes(Tape& tape, const DagNodes& nodes, NodeId x,
                                   std::size_t q_u, std::size_t q_v,
                                   const DagHyper& hyper, bool regularizers,
                                   bool rs_terms) {
  const std::size_t d = q_u + q_v;
  const std::size_t batch = tape.value(x).rows();
  DagLossNodes loss;

  NodeId xhat = reconstruct_cols_node(tape, nodes, x, 0, d);
  NodeId residual = tape.add(x, tape.scale(xhat, -1.0));
  loss.reconstruction =
      tape.scale(tape.frobenius_sq(residual), 1.0 / static_cast<double>(batch));

  std::vector<NodeId> terms{loss.reconstruction};
  if (regularizers || rs_terms) {
    loss.adjacency = adjacency_node(tape, nodes);
  }
  if (regularizers) {
    NodeId tr = tape.trace_expm_hsq(loss.adjacency);
    NodeId diff = tape.add(
        tr, tape.input(Matrix::scalar(-static_cast<double>(d)), false));
    loss.acyclicity = tape.hadamard(diff, diff);

    std::vector<NodeId> l1_terms;
    for (NodeId w : nodes.first) l1_terms.push_back(tape.l1_sum(w));
    loss.sparsity = detail::add_all(tape, l1_terms);

    std::vector<NodeId> l2_terms;
    for (NodeId w : nodes.mid) l2_terms.push_back(tape.frobenius_sq(w));
    for (NodeId w : nodes.out) l2_terms.push_back(tape.frobenius_sq(w));
    loss.weight_l2 = detail::add_all(tape, l2_terms);

    terms.push_back(tape.scale(loss.acyclicity, hyper.alpha));
    terms.push_back(tape.scale(loss.sparsity, hyper.beta));
    terms.push_back(tape.scale(loss.weight_l2, hyper.chi));
  }
  if (rs_terms) {
    // Item rows x user columns, via the transpose so only column slicing is
    // needed; L1 is transpose-invariant.
    NodeId user_cols = tape.slice_cols(loss.adjacency, 0, q_u);
    NodeId block = tape.slice_cols(tape.transpose(user_cols), q_u, d);
    loss.zero_block = tape.l1_sum(block);

    NodeId col_norms = tape.row_l2_norms(tape.transpose(loss.adjacency));
    NodeId item_norms = tape.slice_cols(tape.transpose(col_norms), q_u, d);
    NodeId guarded = tape.add(
        item_norms, tape.input(Matrix(1, q_v, hyper.eps_norm), false));
    loss.norm_term = tape.scale(tape.scalar_sum(tape.log(guarded)), -1.0);

    terms.push_back(tape.scale(loss.zero_block, hyper.xi));
    terms.push_back(tape.scale(loss.norm_term, hyper.lambda));
  }
  loss.total = detail::add_all(tape, terms);
  return loss;
}

// --- value-level loss API -----------------------------------------------------------

struct DagGradients {
  std::vector<Matrix> first, mid, out;
};

struct DagLossValue {
  double total = 0.0;
  double reconstruction = 0.0;
  double acyclicity = 0.0;
  double sparsity = 0.0;
  double weight_l2 = 0.0;
  double zero_block = 0.0;
  double norm_term = 0.0;
  DagGradients grads;
};

namespace detail {

inline DagLossValue eval_dag_loss(const DagParams& p, const Matrix& x,
                                  const DagHyper& hyper, bool rs_terms) {
  if (x.rows() == 0) throw DataError("dag loss: empty batch");
  Tape tape;
  DagNodes nodes = bind_dag_params(tape, p);
  NodeId xn = tape.input(x, false);
  DagLossNodes loss =
      dag_loss_nodes(tape, nodes, xn, p.q_u, p.q_v, hyper, true, rs_terms);
  tape.backward(loss.total);

  DagLossValue v;
  v.total = tape.value(loss.total)(0, 0);
  v.reconstruction = tape.value(loss.reconstruction)(0, 0);
  v.acyclicity = tape.value(loss.acyclicity)(0, 0);
  v.sparsity = tape.value(loss.sparsity)(0, 0);
  v.weight_l2 = tape.value(loss.weight_l2)(0, 0);
  if (rs_terms) {
    v.zero_block = tape.value(loss.zero_block)(0, 0);
    v.norm_term = tape.value(loss.norm_term)(0, 0);
  }
  for (std::size_t k = 0; k < nodes.first.size(); ++k) {
    Matrix g = tape.adjoint(nodes.first[k]);
    for (std::size_t j = 0; j < g.cols(); ++j) g(k, j) = 0.0;  // row mask
    v.grads.first.push_back(std::move(g));
  }
  for (NodeId w : nodes.mid) v.grads.mid.push_back(tape.adjoint(w));
  for (NodeId w : nodes.out) v.grads.out.push_back(tape.adjoint(w));
  return v;
}

}  // namespace detail

inline DagLossValue loss_dag(const DagParams& p, const Matrix& x,
                             const DagHyper& hyper) {
  return detail::eval_dag_loss(p, x, hyper, false);
}

inline DagLossValue loss_dag_rs(const DagParams& p, const Matrix& x,
                                const DagHyper& hyper) {
  return detail::eval_dag_loss(p, x, hyper, true);
}

// --- graph export -----------------------------------------------------------------

struct GraphEdge {
  std::size_t source = 0;
  std::size_t target = 0;
  double weight = 0.0;
};

inline std::vector<GraphEdge> export_graph(const DagParams& p, double threshold) {
  if (!(threshold > 0.0)) throw UsageError("export_graph: threshold must be > 0");
  const Matrix a = adjacency(p);
  std::vector<GraphEdge> edges;
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t d = 0; d < a.cols(); ++d) {
      if (a(k, d) > threshold) edges.push_back({k, d, a(k, d)});
    }
  }
  return edges;
}

inline std::string graph_to_dot(const std::vector<GraphEdge>& edges,
                                const std::vector<std::string>& names) {
  std::string dot = "digraph preference {\n";
  for (const auto& n : names) dot += "  \"" + n + "\";\n";
  char buf[32];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof(buf), "%.4f", e.weight);
    dot += "  \"" + names[e.source] + "\" -> \"" + names[e.target] +
           "\" [label=\"" + buf + "\"];\n";
  }
  dot += "}\n";
  return dot;
}

inline std::string graph_to_csv(const std::vector<GraphEdge>& edges,
                                const std::vector<std::string>& names) {
  std::string csv = "source,target,weight\n";
  char buf[32];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof(buf), "%.4f", e.weight);
    csv += names[e.source] + "," + names[e.target] + "," + buf + "\n";
  }
  return csv;
}

// --- checkpoint io -----------------------------------------------------------------

inline nlohmann::json dag_hyper_to_json(const DagHyper& h) {
  return nlohmann::json{{"alpha", h.alpha},   {"beta", h.beta},
                        {"chi", h.chi},       {"xi", h.xi},
                        {"lambda", h.lambda}, {"zeta", h.zeta},
                        {"eps_norm", h.eps_norm},
                        {"edge_threshold", h.edge_threshold}};
}

inline DagHyper dag_hyper_from_json(const nlohmann::json& j) {
  DagHyper h;
  h.alpha = j.at("alpha").get<double>();
  h.beta = j.at("beta").get<double>();
  h.chi = j.at("chi").get<double>();
  h.xi = j.at("xi").get<double>();
  h.lambda = j.at("lambda").get<double>();
  h.zeta = j.at("zeta").get<double>();
  h.eps_norm = j.at("eps_norm").get<double>();
  h.edge_threshold = j.at("edge_threshold").get<double>();
  return h;
}

inline nlohmann::json dag_params_to_json(const DagParams& p) {
  nlohmann::json j{{"q_u", p.q_u},
                   {"q_v", p.q_v},
                   {"M", p.hidden_width},
                   {"H", p.depth}};
  j["first"] = nlohmann::json::array();
  j["mid"] = nlohmann::json::array();
  j["out"] = nlohmann::json::array();
  for (const auto& m : p.first) j["first"].push_back(detail::matrix_to_json(m));
  for (const auto& m : p.mid) j["mid"].push_back(detail::matrix_to_json(m));
  for (const auto& m : p.out) j["out"].push_back(detail::matrix_to_json(m));
  return j;
}

inline DagParams dag_params_from_json(const nlohmann::json& j) {
  DagParams p;
  p.q_u = j.at("q_u").get<std::size_t>();
  p.q_v = j.at("q_v").get<std::size_t>();
  p.hidden_width = j.at("M").get<std::size_t>();
  p.depth = j.at("H").get<std::size_t>();
  for (const auto& m : j.at("first")) {
    p.first.push_back(detail::matrix_from_json(m));
  }
  for (const auto& m : j.at("mid")) p.mid.push_back(detail::matrix_from_json(m));
  for (const auto& m : j.at("out")) p.out.push_back(detail::matrix_from_json(m));
  return p;
}

inline void save_dag(const DagParams& p, const DagHyper& hyper,
                     std::uint64_t schema_hash, const std::string& path) {
  nlohmann::json j{{"version", kDagCheckpointVersion},
                   {"schema_hash", schema_hash},
                   {"hyper", dag_hyper_to_json(hyper)},
                   {"params", dag_params_to_json(p)}};
  detail::write_text_file(path, j.dump());
}

inline std::pair<DagParams, DagHyper> load_dag(const std::string& path,
                                               std::uint64_t* schema_hash = nullptr) {
  const nlohmann::json j = detail::load_json_file(path);
  try {
    const std::string version = j.at("version").get<std::string>();
    if (version != kDagCheckpointVersion) {
      throw DataError("dag checkpoint " + path + ": version '" + version +
                      "' not supported (current " + kDagCheckpointVersion + ")");
    }
    if (schema_hash) *schema_hash = j.at("schema_hash").get<std::uint64_t>();
    return {dag_params_from_json(j.at("params")),
            dag_hyper_from_json(j.at("hyper"))};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dag checkpoint " + path + ": " + e.what());
  }
}

// --- standalone structure fit --------------------------------------------------------

struct DagFitConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 512;
  std::size_t hidden_width = 16;
  // A two-layer network recovers linear mechanisms more cleanly than the
  // deeper default the joint trainer uses.
  std::size_t depth = 2;
  double lr = 1e-2;
  double lr_min = 1e-5;  // cosine decay endpoint; shrinks the L1 chatter
  bool rs_constraints = true;
  std::uint64_t seed = 0;
};

// Minimizes the structure loss alone over rows of x (the [u | v] positive
// pairs). The observer, when given, sees the parameters after every step.
inline DagParams fit_dag(
    const Matrix& x, std::size_t q_u, std::size_t q_v, const DagHyper& hyper,
    const DagFitConfig& config,
    const std::function<void(std::size_t, const DagParams&)>& observer = {}) {
  if (x.rows() == 0) throw DataError("fit_dag: empty data");
  if (x.cols() != q_u + q_v) {
    throw ShapeError("fit_dag: data width " + x.shape_str() +
                     " does not match q_u + q_v");
  }
  DagParams params =
      DagParams::init(q_u, q_v, config.hidden_width, config.depth, config.seed);
  Adam adam({config.lr});
  Rng rng(mix_seed(config.seed, 0xf17));
  const std::size_t batch = std::min(config.batch_size, x.rows());

  for (std::size_t step = 0; step < config.steps; ++step) {
    Matrix xb(batch, x.cols());
    const auto rows = sample_without_replacement(x.rows(), batch, rng);
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) xb(r, c) = x(rows[r], c);
    }
    DagLossValue loss = config.rs_constraints ? loss_dag_rs(params, xb, hyper)
                                              : loss_dag(params, xb, hyper);
    if (!std::isfinite(loss.total)) {
      throw NumericError("fit_dag: non-finite loss at step " +
                         std::to_string(step));
    }
    std::vector<Matrix*> ps = params.all_params();
    std::vector<const Matrix*> gs;
    for (const auto& g : loss.grads.first) gs.push_back(&g);
    for (const auto& g : loss.grads.mid) gs.push_back(&g);
    for (const auto& g : loss.grads.out) gs.push_back(&g);
    adam.step(ps, gs, cosine_lr(config.lr, config.lr_min, step, config.steps));
    params.apply_row_mask();
    if (observer) observer(step, params);
  }
  return params;
}

}  // namespace causpref
