#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "causpref/data.hpp"
#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"
#include "causpref/rng.hpp"
#include "causpref/tape.hpp"

namespace causpref {

enum class PredictorVariant { kNeuMF, kLinear };

inline std::string to_string(PredictorVariant v) {
  return v == PredictorVariant::kNeuMF ? "neumf" : "linear";
}

inline PredictorVariant predictor_variant_from_string(const std::string& s) {
  if (s == "neumf") return PredictorVariant::kNeuMF;
  if (s == "linear") return PredictorVariant::kLinear;
  throw UsageError("unknown predictor variant '" + s + "'");
}

// Scoring head. The NeuMF form combines an element-wise-product (GMF) path
// with an MLP path; the linear form is one affine map over the concatenated
// inputs. The user side sees either raw user features or the inferred
// preference vector, so its width is q_u or q_v depending on the trainer
// flags. Scores are pre-activation; the sigmoid lives in the loss.
struct PredictorParams {
  PredictorVariant variant = PredictorVariant::kNeuMF;
  std::size_t user_width = 0;  // q_u, or q_v under preference replacement
  std::size_t item_width = 0;
  std::size_t embed_dim = 16;

  // neumf
  Matrix gmf_user, gmf_item;  // user_width x e, item_width x e
  std::vector<Matrix> mlp;    // (u+v) x 64, 64 x 32, 32 x 16
  Matrix combine;             // (e + 16) x 1
  // linear
  Matrix linear_w;  // (u+v) x 1
  Matrix linear_b;  // 1 x 1

  static constexpr std::size_t kMlpWidths[3] = {64, 32, 16};

  static PredictorParams init(PredictorVariant variant, std::size_t user_width,
                              std::size_t item_width, std::size_t embed_dim,
                              std::uint64_t seed) {
    if (embed_dim < 1) throw UsageError("predictor: embed dim must be >= 1");
    PredictorParams p;
    p.variant = variant;
    p.user_width = user_width;
    p.item_width = item_width;
    p.embed_dim = embed_dim;
    Rng rng(mix_seed(seed, 0x9ced));
    auto fill = [&rng](Matrix& m) {
      const double s = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      for (double& x : m.values()) x = s * (2.0 * rng.real01() - 1.0);
    };
    if (variant == PredictorVariant::kNeuMF) {
      p.gmf_user = Matrix(user_width, embed_dim);
      p.gmf_item = Matrix(item_width, embed_dim);
      fill(p.gmf_user);
      fill(p.gmf_item);
      std::size_t in = user_width + item_width;
      for (std::size_t w : kMlpWidths) {
        Matrix layer(in, w);
        fill(layer);
        p.mlp.push_back(std::move(layer));
        in = w;
      }
      p.combine = Matrix(embed_dim + kMlpWidths[2], 1);
      fill(p.combine);
    } else {
      p.linear_w = Matrix(user_width + item_width, 1);
      fill(p.linear_w);
      p.linear_b = Matrix(1, 1);
    }
    return p;
  }

  std::vector<Matrix*> all_params() {
    std::vector<Matrix*> v;
    if (variant == PredictorVariant::kNeuMF) {
      v.push_back(&gmf_user);
      v.push_back(&gmf_item);
      for (auto& m : mlp) v.push_back(&m);
      v.push_back(&combine);
    } else {
      v.push_back(&linear_w);
      v.push_back(&linear_b);
    }
    return v;
  }
};

namespace detail {
inline void check_score_widths(const PredictorParams& p, const Matrix& users,
                               const Matrix& items) {
  if (users.cols() != p.user_width || items.cols() != p.item_width ||
      users.rows() != items.rows()) {
    throw ShapeError("score: inputs " + users.shape_str() + " and " +
                     items.shape_str() + " do not match widths " +
                     std::to_string(p.user_width) + "/" +
                     std::to_string(p.item_width));
  }
}

inline Matrix concat_cols_plain(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) c(i, a.cols() + j) = b(i, j);
  }
  return c;
}
}  // namespace detail

// Batched plain scores: one row per (user representation, item) pair.
inline Matrix score_batch(const PredictorParams& p, const Matrix& users,
                          const Matrix& items) {
  detail::check_score_widths(p, users, items);
  if (p.variant == PredictorVariant::kLinear) {
    Matrix s = matmul(detail::concat_cols_plain(users, items), p.linear_w);
    for (double& x : s.values()) x += p.linear_b(0, 0);
    return s;
  }
  Matrix gmf = hadamard(matmul(users, p.gmf_user), matmul(items, p.gmf_item));
  Matrix h = detail::concat_cols_plain(users, items);
  for (const Matrix& w : p.mlp) {
    h = matmul(h, w);
    detail::relu_inplace(h);
  }
  return matmul(detail::concat_cols_plain(gmf, h), p.combine);
}

inline double score(const PredictorParams& p, const std::vector<double>& user,
                    const std::vector<double>& item) {
  Matrix u(1, user.size()), v(1, item.size());
  for (std::size_t j = 0; j < user.size(); ++j) u(0, j) = user[j];
  for (std::size_t j = 0; j < item.size(); ++j) v(0, j) = item[j];
  return score_batch(p, u, v)(0, 0);
}

// --- tape graph -------------------------------------------------------------------

struct PredictorNodes {
  NodeId gmf_user = -1, gmf_item = -1, combine = -1;
  std::vector<NodeId> mlp;
  NodeId linear_w = -1, linear_b = -1;
};

inline PredictorNodes bind_predictor_params(Tape& tape,
                                            const PredictorParams& p) {
  PredictorNodes n;
  if (p.variant == PredictorVariant::kNeuMF) {
    n.gmf_user = tape.input(p.gmf_user);
    n.gmf_item = tape.input(p.gmf_item);
    for (const Matrix& m : p.mlp) n.mlp.push_back(tape.input(m));
    n.combine = tape.input(p.combine);
  } else {
    n.linear_w = tape.input(p.linear_w);
    n.linear_b = tape.input(p.linear_b);
  }
  return n;
}

inline NodeId score_node(Tape& tape, const PredictorParams& p,
                         const PredictorNodes& nodes, NodeId users,
                         NodeId items) {
  detail::check_score_widths(p, tape.value(users), tape.value(items));
  const std::size_t batch = tape.value(users).rows();
  if (p.variant == PredictorVariant::kLinear) {
    NodeId s = tape.matmul(tape.concat_cols({users, items}), nodes.linear_w);
    // Bias broadcast as ones * b.
    NodeId ones = tape.input(Matrix(batch, 1, 1.0), false);
    return tape.add(s, tape.matmul(ones, nodes.linear_b));
  }
  NodeId gmf = tape.hadamard(tape.matmul(users, nodes.gmf_user),
                             tape.matmul(items, nodes.gmf_item));
  NodeId h = tape.concat_cols({users, items});
  for (NodeId w : nodes.mlp) h = tape.relu(tape.matmul(h, w));
  return tape.matmul(tape.concat_cols({gmf, h}), nodes.combine);
}

// Mean over the batch of -log sigmoid(pos - neg); chained through the
// engine's sigmoid the gradient is the exact 1 - sigmoid(pos - neg), stable
// for |pos - neg| <= 500.
inline NodeId bpr_loss_node(Tape& tape, NodeId pos, NodeId neg) {
  const Matrix& vp = tape.value(pos);
  if (vp.cols() != 1 || !tape.value(neg).same_shape(vp)) {
    throw ShapeError("bpr: scores must be column vectors of equal length, got " +
                     vp.shape_str() + " and " + tape.value(neg).shape_str());
  }
  if (vp.rows() == 0) throw DataError("bpr: empty batch");
  NodeId diff = tape.add(pos, tape.scale(neg, -1.0));
  NodeId logsig = tape.log(tape.sigmoid(diff));
  return tape.scale(tape.scalar_sum(logsig),
                    -1.0 / static_cast<double>(vp.rows()));
}

// --- value-level loss --------------------------------------------------------------

struct ScorePair {
  double positive = 0.0;
  double negative = 0.0;
};

// Closed-form mean softplus(neg - pos); numerically stable everywhere and
// independent of the tape path, which makes it a handy cross-check.
inline double bpr_loss(const std::vector<ScorePair>& pairs) {
  if (pairs.empty()) throw DataError("bpr: empty batch");
  double total = 0.0;
  for (const auto& pair : pairs) {
    const double x = pair.negative - pair.positive;  // softplus argument
    total += x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return total / static_cast<double>(pairs.size());
}

// --- serialization -----------------------------------------------------------------

inline nlohmann::json predictor_to_json(const PredictorParams& p) {
  nlohmann::json j{{"variant", to_string(p.variant)},
                   {"user_width", p.user_width},
                   {"item_width", p.item_width},
                   {"embed_dim", p.embed_dim}};
  if (p.variant == PredictorVariant::kNeuMF) {
    j["gmf_user"] = detail::matrix_to_json(p.gmf_user);
    j["gmf_item"] = detail::matrix_to_json(p.gmf_item);
    j["mlp"] = nlohmann::json::array();
    for (const auto& m : p.mlp) j["mlp"].push_back(detail::matrix_to_json(m));
    j["combine"] = detail::matrix_to_json(p.combine);
  } else {
    j["linear_w"] = detail::matrix_to_json(p.linear_w);
    j["linear_b"] = detail::matrix_to_json(p.linear_b);
  }
  return j;
}

inline PredictorParams predictor_from_json(const nlohmann::json& j) {
  PredictorParams p;
  p.variant = predictor_variant_from_string(j.at("variant").get<std::string>());
  p.user_width = j.at("user_width").get<std::size_t>();
  p.item_width = j.at("item_width").get<std::size_t>();
  p.embed_dim = j.at("embed_dim").get<std::size_t>();
  if (p.variant == PredictorVariant::kNeuMF) {
    p.gmf_user = detail::matrix_from_json(j.at("gmf_user"));
    p.gmf_item = detail::matrix_from_json(j.at("gmf_item"));
    for (const auto& m : j.at("mlp")) {
      p.mlp.push_back(detail::matrix_from_json(m));
    }
    p.combine = detail::matrix_from_json(j.at("combine"));
  } else {
    p.linear_w = detail::matrix_from_json(j.at("linear_w"));
    p.linear_b = detail::matrix_from_json(j.at("linear_b"));
  }
  return p;
}

}  // namespace causpref
