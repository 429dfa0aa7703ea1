#include <cmath>

#include <gtest/gtest.h>

#include "causpref/dag.hpp"
#include "test_support.hpp"

namespace causpref {
namespace {

using testing::finite_difference;
using testing::max_rel_err;
using testing::TempDir;

DagParams zero_params(std::size_t q_u, std::size_t q_v, std::size_t m,
                      std::size_t h) {
  DagParams p;
  p.q_u = q_u;
  p.q_v = q_v;
  p.hidden_width = m;
  p.depth = h;
  const std::size_t d = q_u + q_v;
  for (std::size_t k = 0; k < d; ++k) p.first.emplace_back(d, m);
  for (std::size_t k = 0; k + 2 < h; ++k) p.mid.emplace_back(m, m);
  for (std::size_t k = 0; k < d; ++k) p.out.emplace_back(m, 1);
  return p;
}

// D=2, M=1, H=2; the second sub-network reads feature 1 with weight 1 and
// scales by 2, so input (3, anything) reconstructs column 2 as 6.
DagParams hand_params() {
  DagParams p = zero_params(1, 1, 1, 2);
  p.first[1](0, 0) = 1.0;  // row for feature 1 stays masked at zero
  p.out[1](0, 0) = 2.0;
  return p;
}

TEST(Reconstruct, ZeroNetworkGivesZero) {
  DagParams p = zero_params(2, 2, 3, 3);
  Matrix x(5, 4, 1.7);
  const Matrix xhat = reconstruct(p, x);
  for (double v : xhat.values()) EXPECT_EQ(v, 0.0);
}

TEST(Reconstruct, HandForwardPass) {
  DagParams p = hand_params();
  Matrix x(1, 2);
  x(0, 0) = 3.0;
  x(0, 1) = -41.5;  // anything; masked out of its own reconstruction
  const Matrix xhat = reconstruct(p, x);
  EXPECT_DOUBLE_EQ(xhat(0, 1), 6.0);
}

TEST(Reconstruct, MaskedColumnCannotInfluenceItself) {
  Rng rng(3);
  DagParams p = DagParams::init(3, 3, 8, 3, /*seed=*/5);
  Matrix x(4, 6);
  for (double& v : x.values()) v = rng.normal();
  const Matrix base = reconstruct(p, x);
  for (std::size_t d = 0; d < 6; ++d) {
    Matrix bumped = x;
    for (std::size_t r = 0; r < x.rows(); ++r) bumped(r, d) += 10.0;
    const Matrix xhat = reconstruct(p, bumped);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      EXPECT_EQ(xhat(r, d), base(r, d)) << "column " << d;
    }
  }
}

TEST(Reconstruct, WidthMismatchRejected) {
  DagParams p = zero_params(2, 2, 3, 3);
  EXPECT_THROW(reconstruct(p, Matrix(2, 3)), ShapeError);
}

TEST(Adjacency, ThreeFourFive) {
  DagParams p = zero_params(2, 2, 2, 3);
  p.first[2](1, 0) = 3.0;
  p.first[2](1, 1) = 4.0;
  const Matrix a = adjacency(p);
  EXPECT_DOUBLE_EQ(a(1, 2), 5.0);
}

TEST(Adjacency, ZeroParamsAndNonnegativity) {
  DagParams p = zero_params(2, 3, 2, 3);
  const Matrix zero_a = adjacency(p);
  for (double v : zero_a.values()) EXPECT_EQ(v, 0.0);

  DagParams q = DagParams::init(2, 3, 4, 3, 7);
  const Matrix a = adjacency(q);
  for (double v : a.values()) EXPECT_GE(v, 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) EXPECT_EQ(a(k, k), 0.0);
}

TEST(LossDag, AllZeroIsZero) {
  DagParams p = zero_params(2, 2, 3, 3);
  Matrix x(4, 4);  // zeros
  DagHyper hyper;
  const auto v = loss_dag(p, x, hyper);
  EXPECT_DOUBLE_EQ(v.total, 0.0);
  EXPECT_DOUBLE_EQ(v.acyclicity, 0.0);
}

TEST(LossDag, TwoCycleAcyclicityTerm) {
  // Adjacency realized as [[0,1],[1,0]]: term is (2 cosh 1 - 2)^2.
  DagParams p = zero_params(1, 1, 1, 2);
  p.first[0](1, 0) = 1.0;
  p.first[1](0, 0) = 1.0;
  Matrix x(1, 2);  // zero input, zero output weights: only the penalty bites
  DagHyper hyper;
  hyper.beta = 0.0;
  hyper.chi = 0.0;
  const auto v = loss_dag(p, x, hyper);
  const double expected = std::pow(2.0 * std::cosh(1.0) - 2.0, 2.0);
  EXPECT_NEAR(v.acyclicity, expected, 1e-9);
  EXPECT_NEAR(v.acyclicity, 1.1797463, 1e-6);
  EXPECT_NEAR(v.total, expected, 1e-9);
}

TEST(LossDag, StrictlyUpperTriangularAdjacencyHasNoPenalty) {
  Rng rng(11);
  DagParams p = zero_params(3, 3, 2, 3);
  for (std::size_t col = 0; col < 6; ++col) {
    for (std::size_t k = 0; k < col; ++k) {  // only rows above the diagonal
      p.first[col](k, 0) = rng.normal();
      p.first[col](k, 1) = rng.normal();
    }
  }
  Matrix x(2, 6);
  DagHyper hyper;
  const auto v = loss_dag(p, x, hyper);
  EXPECT_LT(v.acyclicity, 1e-12);
}

// Compares analytic gradients against central differences, skipping the
// structurally masked row of each first-layer matrix. The seeds pick an
// instance whose ReLU preactivations all clear the finite-difference window,
// keeping the check exact.
void check_dag_gradients(bool rs_terms) {
  const std::size_t q_u = 3, q_v = 3, m = 8, h = 3, batch = 32;
  DagParams p = DagParams::init(q_u, q_v, m, h, 24);
  Rng rng(8);
  Matrix x(batch, q_u + q_v);
  for (double& v : x.values()) v = rng.normal();
  DagHyper hyper;
  hyper.xi = 10.0;  // keep magnitudes balanced for the relative comparison

  const auto analytic = rs_terms ? loss_dag_rs(p, x, hyper)
                                 : loss_dag(p, x, hyper);
  auto loss = [&]() {
    return rs_terms ? loss_dag_rs(p, x, hyper).total
                    : loss_dag(p, x, hyper).total;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < p.first.size(); ++k) {
    Matrix fd = finite_difference(loss, p.first[k]);
    for (std::size_t j = 0; j < fd.cols(); ++j) fd(k, j) = 0.0;  // masked row
    worst = std::max(worst, max_rel_err(analytic.grads.first[k], fd));
  }
  for (std::size_t k = 0; k < p.mid.size(); ++k) {
    Matrix fd = finite_difference(loss, p.mid[k]);
    worst = std::max(worst, max_rel_err(analytic.grads.mid[k], fd));
  }
  for (std::size_t k = 0; k < p.out.size(); ++k) {
    Matrix fd = finite_difference(loss, p.out[k]);
    worst = std::max(worst, max_rel_err(analytic.grads.out[k], fd));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(LossDag, GradientsMatchFiniteDifferences) { check_dag_gradients(false); }

TEST(LossDagRs, GradientsMatchFiniteDifferences) { check_dag_gradients(true); }

TEST(LossDagRs, ZeroBlockValues) {
  // One item->user entry of 0.5 contributes exactly 0.5 to the block L1.
  DagParams p = zero_params(1, 1, 1, 2);
  DagHyper hyper;
  Matrix x(1, 2);
  const auto clean = loss_dag_rs(p, x, hyper);
  EXPECT_DOUBLE_EQ(clean.zero_block, 0.0);

  p.first[0](1, 0) = 0.5;  // item row feeding the user sub-network
  const auto dirty = loss_dag_rs(p, x, hyper);
  EXPECT_DOUBLE_EQ(dirty.zero_block, 0.5);
}

TEST(LossDagRs, NormTermLogIdentities) {
  // Item column norms of one give ~0; norms of e give -1 per item column.
  DagParams p = zero_params(1, 2, 1, 2);
  DagHyper hyper;
  Matrix x(1, 3);
  p.first[1](0, 0) = 1.0;
  p.first[2](0, 0) = 1.0;
  EXPECT_NEAR(loss_dag_rs(p, x, hyper).norm_term, 0.0, 1e-7);

  const double e = std::exp(1.0);
  p.first[1](0, 0) = e;
  p.first[2](0, 0) = e;
  EXPECT_NEAR(loss_dag_rs(p, x, hyper).norm_term, -2.0, 1e-7);
}

TEST(LossDagRs, NormTermFiniteOnZeroColumns) {
  DagParams p = zero_params(2, 2, 2, 3);
  DagHyper hyper;
  Matrix x(1, 4);
  const auto v = loss_dag_rs(p, x, hyper);
  EXPECT_TRUE(std::isfinite(v.norm_term));
}

TEST(InferPreference, ZeroAndHandExamples) {
  DagParams zero = zero_params(2, 2, 3, 3);
  const auto pref = infer_preference(zero, {1.0, -2.0});
  EXPECT_EQ(pref.size(), 2u);
  for (double v : pref) EXPECT_EQ(v, 0.0);

  DagParams hand = hand_params();
  const auto hand_pref = infer_preference(hand, {3.0});
  ASSERT_EQ(hand_pref.size(), 1u);
  EXPECT_DOUBLE_EQ(hand_pref[0], 6.0);
}

TEST(InferPreference, Deterministic) {
  DagParams p = DagParams::init(3, 2, 8, 3, 9);
  const auto a = infer_preference(p, {0.3, -1.0, 2.0});
  const auto b = infer_preference(p, {0.3, -1.0, 2.0});
  EXPECT_EQ(a, b);
}

TEST(ExportGraph, EmptyCases) {
  DagParams zero = zero_params(2, 2, 3, 3);
  EXPECT_TRUE(export_graph(zero, 0.3).empty());

  DagParams p = zero_params(2, 2, 2, 3);
  p.first[2](1, 0) = 3.0;
  p.first[2](1, 1) = 4.0;
  EXPECT_TRUE(export_graph(p, 6.0).empty());  // threshold above max entry
  ASSERT_EQ(export_graph(p, 0.3).size(), 1u);
  EXPECT_DOUBLE_EQ(export_graph(p, 0.3)[0].weight, 5.0);
}

TEST(ExportGraph, FreshInitExportsNothingAtDefaultThreshold) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    DagParams p = DagParams::init(5, 5, 16, 3, seed);
    EXPECT_TRUE(export_graph(p, 0.3).empty()) << "seed " << seed;
  }
}

TEST(ExportGraph, DotAndCsvCarryNames) {
  DagParams p = zero_params(1, 1, 2, 3);
  p.first[1](0, 0) = 1.0;
  const auto edges = export_graph(p, 0.3);
  ASSERT_EQ(edges.size(), 1u);
  const std::vector<std::string> names{"u:age", "i:price"};
  const std::string dot = graph_to_dot(edges, names);
  EXPECT_NE(dot.find("\"u:age\" -> \"i:price\""), std::string::npos);
  EXPECT_NE(dot.find("1.0000"), std::string::npos);
  const std::string csv = graph_to_csv(edges, names);
  EXPECT_NE(csv.find("u:age,i:price,1.0000"), std::string::npos);
}

TEST(FitDag, RowMaskHoldsBitwiseThroughout) {
  Rng rng(21);
  Matrix x(64, 6);
  for (double& v : x.values()) v = rng.normal();
  DagHyper hyper;
  DagFitConfig config;
  config.steps = 25;
  config.batch_size = 32;
  config.hidden_width = 8;
  std::size_t checked = 0;
  const DagParams fitted = fit_dag(
      x, 3, 3, hyper, config, [&](std::size_t, const DagParams& p) {
        ASSERT_TRUE(p.row_mask_holds());
        ++checked;
      });
  EXPECT_EQ(checked, config.steps);
  EXPECT_TRUE(fitted.row_mask_holds());
}

TEST(FitDag, Deterministic) {
  Rng rng(22);
  Matrix x(64, 4);
  for (double& v : x.values()) v = rng.normal();
  DagHyper hyper;
  DagFitConfig config;
  config.steps = 10;
  config.hidden_width = 4;
  const DagParams a = fit_dag(x, 2, 2, hyper, config);
  const DagParams b = fit_dag(x, 2, 2, hyper, config);
  for (std::size_t k = 0; k < a.first.size(); ++k) {
    EXPECT_EQ(a.first[k], b.first[k]);
    EXPECT_EQ(a.out[k], b.out[k]);
  }
  for (std::size_t k = 0; k < a.mid.size(); ++k) EXPECT_EQ(a.mid[k], b.mid[k]);
}

TEST(Checkpoint, RoundTripBitExact) {
  TempDir dir;
  DagParams p = DagParams::init(3, 2, 8, 3, 77);
  DagHyper hyper;
  hyper.alpha = 2.5;
  save_dag(p, hyper, 0xabcdef12u, dir.file("dag.json"));
  std::uint64_t hash = 0;
  const auto [back, back_hyper] = load_dag(dir.file("dag.json"), &hash);
  EXPECT_EQ(hash, 0xabcdef12u);
  EXPECT_EQ(back_hyper.alpha, 2.5);
  EXPECT_EQ(back.depth, p.depth);
  for (std::size_t k = 0; k < p.first.size(); ++k) {
    EXPECT_EQ(p.first[k], back.first[k]);
    EXPECT_EQ(p.out[k], back.out[k]);
  }
  for (std::size_t k = 0; k < p.mid.size(); ++k) {
    EXPECT_EQ(p.mid[k], back.mid[k]);
  }
}

TEST(Checkpoint, VersionGate) {
  TempDir dir;
  DagParams p = DagParams::init(2, 2, 4, 3, 1);
  save_dag(p, DagHyper{}, 1, dir.file("dag.json"));
  auto j = detail::load_json_file(dir.file("dag.json"));
  j["version"] = "v9";
  detail::write_text_file(dir.file("dag.json"), j.dump());
  EXPECT_THROW(load_dag(dir.file("dag.json")), DataError);
}

}  // namespace
}  // namespace causpref
