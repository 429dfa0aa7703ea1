#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "causpref/matrix.hpp"
#include "causpref/rng.hpp"
#include "causpref/tape.hpp"
#include "test_support.hpp"

namespace causpref {
namespace {

using testing::finite_difference;
using testing::max_rel_err;
using testing::rel_err;

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Matrix m(r, c);
  for (double& x : m.values()) x = lo + (hi - lo) * rng.real01();
  return m;
}

TEST(Matrix, MatmulIdentity) {
  Matrix a(2, 2);
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(1, 0) = 3;
  a(1, 1) = 4;
  EXPECT_EQ(matmul(a, Matrix::identity(2)), a);
}

TEST(Matrix, MatmulShapeMismatchNamesShapes) {
  Matrix a(2, 3), b(2, 3);
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Tape, ReluDefinition) {
  Tape tape;
  Matrix a(1, 2);
  a(0, 0) = -1;
  a(0, 1) = 2;
  NodeId r = tape.relu(tape.input(a));
  EXPECT_EQ(tape.value(r)(0, 0), 0.0);
  EXPECT_EQ(tape.value(r)(0, 1), 2.0);
}

TEST(Tape, SigmoidAtZero) {
  Tape tape;
  NodeId s = tape.sigmoid(tape.input(Matrix::scalar(0.0)));
  EXPECT_DOUBLE_EQ(tape.value(s)(0, 0), 0.5);
}

TEST(Tape, BackwardSumOfSquares) {
  // root = sum(A .* A), A = [[1, 2]] -> adjoint(A) = [[2, 4]]
  Tape tape;
  Matrix a(1, 2);
  a(0, 0) = 1;
  a(0, 1) = 2;
  NodeId in = tape.input(a);
  NodeId root = tape.scalar_sum(tape.hadamard(in, in));
  EXPECT_DOUBLE_EQ(tape.forward(root)(0, 0), 5.0);
  tape.backward(root);
  EXPECT_DOUBLE_EQ(tape.adjoint(in)(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(tape.adjoint(in)(0, 1), 4.0);
}

TEST(Tape, BackwardNegLogSigmoidAtZero) {
  // root = -log(sigmoid(x)), x = 0 -> adjoint(x) = -0.5
  Tape tape;
  NodeId x = tape.input(Matrix::scalar(0.0));
  NodeId root = tape.scale(tape.log(tape.sigmoid(x)), -1.0);
  tape.backward(root);
  EXPECT_NEAR(tape.adjoint(x)(0, 0), -0.5, 1e-12);
}

TEST(Tape, BackwardRejectsNonScalarRoot) {
  Tape tape;
  NodeId in = tape.input(Matrix(2, 2, 1.0));
  EXPECT_THROW(tape.backward(in), ShapeError);
}

TEST(Tape, BackwardIsDeterministic) {
  auto run = [](std::vector<double>* out) {
    Rng rng(7);
    Tape tape;
    NodeId a = tape.input(random_matrix(3, 3, rng));
    NodeId b = tape.input(random_matrix(3, 3, rng));
    NodeId root = tape.scalar_sum(
        tape.relu(tape.add(tape.matmul(a, b), tape.hadamard(a, b))));
    tape.backward(root);
    *out = tape.adjoint(a).values();
  };
  std::vector<double> first, second;
  run(&first);
  run(&second);
  EXPECT_EQ(first, second);  // bit-identical
}

// Builds a composite graph out of every differentiable op and returns the
// scalar root given bound inputs.
NodeId composite_root(Tape& tape, NodeId a, NodeId b, NodeId c) {
  NodeId m = tape.matmul(a, b);                 // 3x3
  NodeId h = tape.hadamard(m, c);               // 3x3
  NodeId r = tape.relu(tape.add(h, b));         // 3x3
  NodeId s = tape.sigmoid(tape.transpose(r));   // 3x3
  NodeId cat = tape.concat_cols({s, tape.scale(c, 0.5)});  // 3x6
  NodeId sl = tape.slice_cols(cat, 1, 5);       // 3x4
  NodeId norms = tape.row_l2_norms(sl);         // 3x1
  NodeId safe = tape.log(tape.add(norms, tape.input(Matrix(3, 1, 1.0), false)));
  NodeId parts = tape.add(
      tape.add(tape.scalar_sum(safe), tape.frobenius_sq(h)),
      tape.add(tape.l1_sum(sl), tape.trace_expm_hsq(tape.scale(c, 0.3))));
  return parts;
}

TEST(Tape, GradientsMatchFiniteDifferencesOnComposites) {
  // >= 100 random trials on small dims; analytic vs central differences.
  Rng rng(12345);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a = random_matrix(3, 3, rng);
    Matrix b = random_matrix(3, 3, rng);
    Matrix c = random_matrix(3, 3, rng);
    Tape tape;
    NodeId na = tape.input(a);
    NodeId nb = tape.input(b);
    NodeId nc = tape.input(c);
    NodeId root = composite_root(tape, na, nb, nc);
    tape.backward(root);

    Matrix* bound[3] = {&a, &b, &c};
    Matrix analytic[3] = {tape.adjoint(na), tape.adjoint(nb),
                          tape.adjoint(nc)};
    for (int p = 0; p < 3; ++p) {
      auto loss = [&]() {
        Tape t2;
        NodeId r2 = composite_root(t2, t2.input(a), t2.input(b), t2.input(c));
        return t2.value(r2)(0, 0);
      };
      Matrix fd = finite_difference(loss, *bound[p]);
      worst = std::max(worst, max_rel_err(analytic[p], fd));
    }
  }
  EXPECT_LT(worst, 1e-4) << "max relative error across 100 trials";
}

TEST(Tape, MixedShapeGradientsMatchFiniteDifferences) {
  Rng rng(999);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 7;  // dims <= 8
    const std::size_t m = 1 + (trial * 3) % 8;
    Matrix a = random_matrix(4, n, rng);
    Matrix w = random_matrix(n, m, rng);
    auto build = [&](Tape& t) {
      NodeId na = t.input(a, false);
      NodeId nw = t.input(w);
      return t.frobenius_sq(t.relu(t.matmul(na, nw)));
    };
    Tape tape;
    NodeId root = build(tape);
    tape.backward(root);
    Matrix analytic = tape.adjoint(1);
    auto loss = [&]() {
      Tape t2;
      return t2.value(build(t2))(0, 0);
    };
    Matrix fd = finite_difference(loss, w);
    EXPECT_LT(max_rel_err(analytic, fd), 1e-4);
  }
}

// --- trace_expm_hsq ---------------------------------------------------------

// Independent oracle: raw 20-term power series of tr(e^{A.*A}).
double trace_expm_series_oracle(const Matrix& a) {
  const Matrix b = hadamard(a, a);
  Matrix power = Matrix::identity(a.rows());
  double t = trace(power);
  double fact = 1.0;
  for (int k = 1; k <= 20; ++k) {
    power = matmul(power, b);
    fact *= k;
    t += trace(power) / fact;
  }
  return t;
}

TEST(TraceExpm, ZeroMatrixGivesDimension) {
  for (std::size_t d : {1u, 2u, 5u, 9u}) {
    Tape tape;
    NodeId t = tape.trace_expm_hsq(tape.input(Matrix(d, d)));
    EXPECT_DOUBLE_EQ(tape.value(t)(0, 0), static_cast<double>(d));
  }
}

TEST(TraceExpm, NilpotentEdge) {
  Matrix a(2, 2);
  a(0, 1) = 1.0;
  Tape tape;
  NodeId t = tape.trace_expm_hsq(tape.input(a));
  EXPECT_DOUBLE_EQ(tape.value(t)(0, 0), 2.0);
}

TEST(TraceExpm, TwoCycleMatchesSeriesOracle) {
  Matrix a(2, 2);
  a(0, 1) = 1.0;
  a(1, 0) = 1.0;
  Tape tape;
  NodeId t = tape.trace_expm_hsq(tape.input(a));
  const double got = tape.value(t)(0, 0);
  EXPECT_NEAR(got, 2.0 * std::cosh(1.0), 1e-9);
  EXPECT_NEAR(got, trace_expm_series_oracle(a), 1e-9);
}

TEST(TraceExpm, MatchesSeriesOracleOnRandomMatrices) {
  Rng rng(4242);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = random_matrix(4, 4, rng, -0.8, 0.8);
    Tape tape;
    NodeId t = tape.trace_expm_hsq(tape.input(a));
    EXPECT_NEAR(tape.value(t)(0, 0), trace_expm_series_oracle(a), 1e-9);
  }
}

TEST(TraceExpm, RejectsNonSquare) {
  Tape tape;
  NodeId in = tape.input(Matrix(2, 3));
  EXPECT_THROW(tape.trace_expm_hsq(in), ShapeError);
}

TEST(TraceExpm, AtLeastDimensionWithEqualityIffNilpotent) {
  Rng rng(31337);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 6;
    // Random strictly upper-triangular A: A.*A is nilpotent.
    Matrix tri(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i + 1; j < d; ++j) {
        tri(i, j) = 2.0 * rng.real01() -  1.0;
      }
    }
    Tape tape;
    const double t = tape.value(tape.trace_expm_hsq(tape.input(tri)))(0, 0);
    EXPECT_DOUBLE_EQ(t, static_cast<double>(d));

    Matrix dense = random_matrix(d, d, rng);
    Tape tape2;
    const double t2 =
        tape2.value(tape2.trace_expm_hsq(tape2.input(dense)))(0, 0);
    EXPECT_GE(t2, static_cast<double>(d));
  }
}

TEST(TraceExpm, GradientMatchesRegisteredFormulaAndFiniteDifferences) {
  Rng rng(77);
  Matrix a = random_matrix(4, 4, rng, -0.7, 0.7);
  Tape tape;
  NodeId in = tape.input(a);
  NodeId root = tape.trace_expm_hsq(in);
  tape.backward(root);
  // Registered gradient: (e^{A.*A})^T .* 2A.
  Matrix expected = hadamard(transpose(expm(hadamard(a, a))), scale(a, 2.0));
  EXPECT_LT(max_rel_err(tape.adjoint(in), expected), 1e-12);

  auto loss = [&]() {
    Tape t2;
    return t2.value(t2.trace_expm_hsq(t2.input(a)))(0, 0);
  };
  Matrix fd = finite_difference(loss, a);
  EXPECT_LT(max_rel_err(tape.adjoint(in), fd), 1e-4);
}

}  // namespace
}  // namespace causpref
