#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "qcarleman/carleman.hpp"

using namespace qcarleman;

namespace {

const std::string kIris = std::string(QCARLEMAN_DATA_DIR) + "/iris.csv";

// f(d) = c0 + c1 d + c2 d^2 + c3 d^3 on a single coordinate.
PolyField scalar_field(std::vector<double> c) {
  PolyField f;
  f.n = 1;
  f.degree = static_cast<int>(c.size()) - 1;
  f.eta = 1.0;
  f.anchor = Eigen::VectorXd::Zero(1);
  for (double v : c) {
    SparseMatrix m(1, 1);
    if (v != 0.0) m.insert(0, 0) = v;
    m.makeCompressed();
    f.terms.push_back(m);
  }
  return f;
}

SparseMatrix to_sparse(const Eigen::MatrixXd& d) {
  SparseMatrix m = d.sparseView();
  m.makeCompressed();
  return m;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Eigen::MatrixXd eye(Index n) { return Eigen::MatrixXd::Identity(n, n); }

std::vector<double> order1_path(const PolyField& f, int order, double d0, Index steps) {
  const CarlemanMatrix m = embed(f, order);
  const auto ys = solve(build_global(m, initial_state(Eigen::VectorXd::Constant(1, d0), f.anchor, order).y, steps));
  std::vector<double> out;
  for (const auto& y : ys) out.push_back(y[1]);
  return out;
}

double kappa_dense(double a, Index steps) {
  const CarlemanMatrix m = embed(scalar_field({0.0, a}), 1);
  return condition_number(build_global(m, initial_state(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 1).y, steps),
                          KappaMethod::dense_svd)
      .kappa;
}

}  // namespace

TEST(Embed, ScalarCubicProductRule) {
  const double a = -0.3, b = 0.7;
  const CarlemanMatrix m = embed(scalar_field({0.0, a, 0.0, b}), 3);
  ASSERT_EQ(m.dimension(), 4);
  Eigen::Matrix3d expected;
  expected << a, 0, b, 0, 2 * a, 0, 0, 0, 3 * a;
  EXPECT_TRUE(Eigen::MatrixXd(m.A).bottomRightCorner(3, 3).isApprox(expected, 1e-15));
  EXPECT_EQ(Eigen::MatrixXd(m.A).row(0).norm(), 0.0);
  EXPECT_EQ(block_structure_violations(m), 0);
}

TEST(Embed, TwoDimensionalDegreeTwoBlocks) {
  PolyField f;
  f.n = 2;
  f.degree = 2;
  f.eta = 1.0;
  f.anchor = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd F0(2, 1), F1(2, 2), F2(2, 4);
  F0 << 0.1, -0.2;
  F1 << -0.5, 0.3, 0.2, -0.4;
  F2 << 1, 2, 2, 3, -1, 0.5, 0.5, 4;
  f.terms = {to_sparse(F0), to_sparse(F1), to_sparse(F2)};
  const CarlemanMatrix m = embed(f, 2);
  ASSERT_EQ(m.dimension(), 7);
  EXPECT_TRUE(m.dense_block(1, 0).isApprox(F0));
  EXPECT_TRUE(m.dense_block(1, 1).isApprox(F1));
  EXPECT_TRUE(m.dense_block(1, 2).isApprox(F2));
  EXPECT_TRUE(m.dense_block(2, 1).isApprox(kron(F0, eye(2)) + kron(eye(2), F0)));
  EXPECT_TRUE(m.dense_block(2, 2).isApprox(kron(F1, eye(2)) + kron(eye(2), F1)));
  EXPECT_EQ(m.dense_block(0, 1).norm(), 0.0);
  EXPECT_EQ(m.dense_block(2, 0).norm(), 0.0);
}

// A 6-parameter sub-model of the Iris network: only the first six weights
// are trainable. The embedding is checked against a dense Kronecker build.
TEST(Embed, IrisSubModelMatchesDenseKronecker) {
  const Dataset d = load_iris(kIris);
  const ModelSpec spec = ModelSpec::mlp({4, 3, 3}, Activation::quadratic_poly);
  ParamVector p = init_params(spec, 3);
  std::vector<bool> mask(static_cast<std::size_t>(spec.parameter_count()), false);
  for (int i = 0; i < 6; ++i) mask[static_cast<std::size_t>(i)] = true;
  p.mask = mask;
  p.enforce_mask();
  p.values.head(6) = Eigen::VectorXd::LinSpaced(6, -0.4, 0.5);
  const PolyField f = from_model(spec, d, p, 2, 0.05, ExtractionMode::taylor);
  ASSERT_EQ(f.n, 6);
  const CarlemanMatrix m = embed(f, 2);

  const Eigen::MatrixXd F0(f.term(0)), F1(f.term(1)), F2(f.term(2));
  const Index n = 6, D = 1 + n + n * n;
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(D, D);
  ref.block(1, 0, n, 1) = F0;
  ref.block(1, 1, n, n) = F1;
  ref.block(1, 1 + n, n, n * n) = F2;
  ref.block(1 + n, 1, n * n, n) = kron(F0, eye(n)) + kron(eye(n), F0);
  ref.block(1 + n, 1 + n, n * n, n * n) = kron(F1, eye(n)) + kron(eye(n), F1);

  const Eigen::MatrixXd got(m.A);
  EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-14);
  for (int i = 0; i <= 2; ++i)
    for (int j = 0; j <= 2; ++j) {
      const Index rows = m.block_size(i), cols = m.block_size(j);
      const auto rb = ref.block(m.offsets[static_cast<std::size_t>(i)], m.offsets[static_cast<std::size_t>(j)], rows, cols);
      EXPECT_EQ((rb.array() != 0.0).count(), (m.dense_block(i, j).array() != 0.0).count()) << i << "," << j;
    }
}

TEST(Embed, LinearFieldHigherBlocksAreKroneckerSums) {
  PolyField f;
  f.n = 2;
  f.degree = 1;
  f.eta = 1.0;
  f.anchor = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd F1(2, 2);
  F1 << -0.2, 0.1, 0.0, -0.3;
  f.terms = {SparseMatrix(2, 1), to_sparse(F1)};
  const CarlemanMatrix m = embed(f, 3);
  EXPECT_TRUE(m.dense_block(1, 1).isApprox(F1));
  const Eigen::MatrixXd k3 = kron(kron(F1, eye(2)), eye(2)) + kron(kron(eye(2), F1), eye(2)) + kron(kron(eye(2), eye(2)), F1);
  EXPECT_TRUE(m.dense_block(3, 3).isApprox(k3));
  EXPECT_EQ(m.A.nonZeros(), (Eigen::MatrixXd(m.A).array() != 0.0).count());
}

TEST(Embed, CapacityErrorReportsRequiredDimension) {
  PolyField f = scalar_field({0.0, -0.1});
  f.n = 100;
  f.anchor = Eigen::VectorXd::Zero(100);
  f.terms = {SparseMatrix(100, 1), SparseMatrix(100, 100)};
  try {
    embed(f, 4);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_EQ(e.required(), 101010101u);
    EXPECT_EQ(e.error_class(), ErrorClass::capacity);
  }
  EXPECT_THROW(embed(f, 0), InvalidInput);
}

TEST(InitialState, Examples) {
  const auto s0 = initial_state(Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(0.3, -0.2), 2);
  EXPECT_EQ(s0.y.size(), 7);
  EXPECT_EQ(s0.nonzeros, 1);
  EXPECT_EQ(s0.y[0], 1.0);

  const auto s = initial_state(Eigen::Vector2d(1, 2), Eigen::Vector2d::Zero(), 2);
  Eigen::VectorXd expected(7);
  expected << 1, 1, 2, 1, 2, 2, 4;
  EXPECT_EQ(s.y, expected);
  EXPECT_DOUBLE_EQ(s.norm, std::sqrt(31.0));
}

TEST(InitialState, SparseDeltaGivesPowerNonzeros) {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(5);
  delta[1] = 0.5;
  delta[3] = -2.0;
  delta[4] = 1.5;
  const auto s = initial_state(delta, Eigen::VectorXd::Zero(5), 3);
  EXPECT_EQ(s.nonzeros, 1 + 3 + 9 + 27);
}

TEST(Solve, LinearScalarDecay) {
  const auto path = order1_path(scalar_field({0.0, -0.1}), 1, 1.0, 10);
  EXPECT_NEAR(path.back(), 0.3486784401, 1e-15);
}

TEST(Solve, CubicSingleStepMatchesEuler) {
  const auto path = order1_path(scalar_field({0.0, -0.1, 0.0, -0.1}), 3, 0.5, 1);
  EXPECT_NEAR(path[1], 0.4375, 1e-15);
}

// Odd field at anchor 0: even orders add nothing to the order-1 row, so the
// error can only stay flat from N=1 to 2 and from 3 to 4.
TEST(Solve, CubicTruncationErrorNonIncreasing) {
  const PolyField f = scalar_field({0.0, -0.1, 0.0, -0.1});
  std::vector<long double> exact{0.5L};
  for (int t = 0; t < 50; ++t) {
    const long double x = exact.back();
    exact.push_back(x - 0.1L * x - 0.1L * x * x * x);
  }
  double prev = INFINITY;
  for (int N = 1; N <= 4; ++N) {
    const auto path = order1_path(f, N, 0.5, 50);
    double worst = 0.0;
    for (std::size_t t = 0; t < path.size(); ++t)
      worst = std::max(worst, static_cast<double>(std::fabs(path[t] - exact[t])));
    EXPECT_LE(worst, prev * (1 + 1e-12)) << "N=" << N;
    prev = worst;
  }
  EXPECT_LT(prev, 2e-3);
}

TEST(Solve, BitwiseEqualToRepeatedStep) {
  PolyField f = scalar_field({0.02, -0.3, 0.1, -0.05});
  const CarlemanMatrix m = embed(f, 3);
  const auto y0 = initial_state(Eigen::VectorXd::Constant(1, 0.7), f.anchor, 3).y;
  const GlobalSystem g = build_global(m, y0, 25);
  const auto ys = solve(g);
  Eigen::VectorXd y = y0;
  for (Index t = 1; t <= 25; ++t) {
    y = g.step_operator() * y;
    EXPECT_EQ(ys[static_cast<std::size_t>(t)], y);
  }
}

TEST(Solve, GlobalSystemResidualAndNonzeros) {
  PolyField f = scalar_field({0.05, -0.2, 0.3});
  const CarlemanMatrix m = embed(f, 2);
  const GlobalSystem g = build_global(m, initial_state(Eigen::VectorXd::Constant(1, 0.4), f.anchor, 2).y, 12);
  const SparseMatrix L = g.assemble();
  EXPECT_EQ(L.nonZeros(), g.nonzeros());
  const auto ys = solve(g);
  Eigen::VectorXd z(g.dimension());
  for (std::size_t t = 0; t < ys.size(); ++t) z.segment(static_cast<Index>(t) * g.block_dimension(), g.block_dimension()) = ys[t];
  EXPECT_LT((L * z - g.rhs()).norm(), 1e-14);
  EXPECT_LT((g.apply(z) - L * z).norm(), 1e-14);
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(g.dimension(), -1, 1);
  EXPECT_LT((g.apply_transpose(w) - SparseMatrix(L.transpose()) * w).norm(), 1e-13);
  EXPECT_LT((g.apply_transpose(g.solve_transpose(w)) - w).norm(), 1e-12);
  EXPECT_THROW(build_global(m, ys[0], -1), InvalidInput);
}

TEST(Solve, DegreeOneExactForAnyOrder) {
  PolyField f;
  f.n = 3;
  f.degree = 1;
  f.eta = 1.0;
  f.anchor = Eigen::Vector3d(0.1, 0.2, 0.3);
  Eigen::MatrixXd F1(3, 3);
  F1 << -0.2, 0.05, 0, 0.01, -0.1, 0.02, 0, 0.03, -0.3;
  Eigen::MatrixXd F0(3, 1);
  F0 << 0.01, -0.02, 0.0;
  f.terms = {to_sparse(F0), to_sparse(F1)};
  const Eigen::Vector3d theta0(0.5, -0.4, 0.9);
  for (int N = 1; N <= 4; ++N) {
    const auto ys = solve(build_global(embed(f, N), initial_state(theta0, f.anchor, N).y, 30));
    Eigen::VectorXd d = theta0 - f.anchor;
    for (std::size_t t = 1; t < ys.size(); ++t) {
      d = d + F0 + F1 * d;
      EXPECT_LT((ys[t].segment(1, 3) - d).norm(), 1e-10 * d.norm()) << "N=" << N << " t=" << t;
    }
  }
}

TEST(Solve, BlowUpReportsStep) {
  const CarlemanMatrix m = embed(scalar_field({0.0, 1e3}), 2);
  try {
    solve(build_global(m, initial_state(Eigen::VectorXd::Constant(1, 1e10), Eigen::VectorXd::Zero(1), 2).y, 200));
    FAIL() << "expected Divergence";
  } catch (const Divergence& e) {
    EXPECT_GT(e.step(), 40);
    EXPECT_LT(e.step(), 200);
    EXPECT_EQ(e.error_class(), ErrorClass::divergence);
  }
}

TEST(Readout, Exact) {
  Eigen::VectorXd y(7);
  y << 1, 0.3, 0.4, 0.09, 0.12, 0.12, 0.16;
  const auto r = readout(y, Eigen::Vector2d::Zero());
  EXPECT_EQ(r.params, Eigen::Vector2d(0.3, 0.4));

  Eigen::VectorXd c = Eigen::VectorXd::Zero(7);
  c[0] = 1.0;
  const Eigen::Vector2d anchor(0.5, -1.5);
  EXPECT_EQ(readout(c, anchor).params, anchor);
  EXPECT_EQ(readout(c, anchor, 1000, 1).params, anchor);
  EXPECT_THROW(readout(Eigen::VectorXd::Zero(7), anchor), DegenerateState);
  EXPECT_THROW(readout(y, anchor, 0), InvalidInput);
}

TEST(Readout, TomographyConvergesWithShots) {
  const auto y = initial_state(Eigen::Vector3d(0.4, -0.25, 0.6), Eigen::Vector3d::Zero(), 2).y;
  auto mean_linf = [&](std::uint64_t shots) {
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) acc += readout(y, Eigen::Vector3d::Zero(), shots, seed).linf_error;
    return acc / 10.0;
  };
  const double e3 = mean_linf(1000), e5 = mean_linf(100000), e7 = mean_linf(10000000);
  EXPECT_LT(e7, 1e-2);
  EXPECT_LT(e5, e3);
  EXPECT_LT(e7, e5);
  const auto r = readout(y, Eigen::Vector3d::Zero(), 10000000, 4);
  EXPECT_EQ(r.shots, std::optional<std::uint64_t>(10000000));
  EXPECT_EQ(r.params.cwiseSign(), y.segment(1, 3).cwiseSign());
}

TEST(Kappa, ZeroStepsIsIdentity) {
  const CarlemanMatrix m = embed(scalar_field({0.0, -0.3, 0.2}), 2);
  const GlobalSystem g = build_global(m, initial_state(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 2).y, 0);
  EXPECT_NEAR(condition_number(g, KappaMethod::dense_svd).kappa, 1.0, 1e-14);
  KappaOptions keep;
  keep.eliminate_constant_block = false;
  EXPECT_NEAR(condition_number(g, KappaMethod::dense_svd, keep).kappa, 1.0, 1e-14);
}

TEST(Kappa, DissipativeBoundedMarginalGrows) {
  std::vector<double> marginal;
  for (Index T : {5, 10, 20, 40}) {
    EXPECT_LT(kappa_dense(-0.5, T), 4.0) << "T=" << T;
    marginal.push_back(kappa_dense(0.0, T));
  }
  const std::vector<double> Ts{5, 10, 20, 40};
  for (std::size_t i = 1; i < Ts.size(); ++i) EXPECT_GE(marginal[i] / marginal[i - 1], Ts[i] / Ts[i - 1] * 0.9);
}

TEST(Kappa, ConstantBlockCanBeKept) {
  const CarlemanMatrix m = embed(scalar_field({0.0, -0.5}), 1);
  const GlobalSystem g = build_global(m, initial_state(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 1).y, 40);
  KappaOptions keep;
  keep.eliminate_constant_block = false;
  const auto full = condition_number(g, KappaMethod::dense_svd, keep);
  EXPECT_FALSE(full.constant_block_eliminated);
  EXPECT_GT(full.kappa, 40.0);
  EXPECT_TRUE(condition_number(g, KappaMethod::dense_svd).constant_block_eliminated);
}

TEST(Kappa, PowerIterationAgreesWithDense) {
  PolyField f = scalar_field({0.03, -0.4, 0.1, -0.05});
  for (int N : {1, 2, 3}) {
    const GlobalSystem g = build_global(embed(f, N), initial_state(Eigen::VectorXd::Constant(1, 0.5), f.anchor, N).y, 30);
    const auto d = condition_number(g, KappaMethod::dense_svd);
    const auto p = condition_number(g, KappaMethod::power_iteration);
    EXPECT_NEAR(p.kappa / d.kappa, 1.0, 0.05) << "N=" << N;
    EXPECT_GT(p.iterations, 0);
  }
}

TEST(Kappa, DenseLimitAndSingular) {
  const CarlemanMatrix m = embed(scalar_field({0.0, -0.5}), 1);
  const GlobalSystem g = build_global(m, initial_state(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 1).y, 50);
  KappaOptions tiny;
  tiny.dense_limit = 10;
  EXPECT_THROW(condition_number(g, KappaMethod::dense_svd, tiny), InvalidInput);

  SparseMatrix big(1, 1);
  big.insert(0, 0) = 1e6;
  const auto h = GlobalSystem::from_step_operator(big, Eigen::VectorXd::Ones(1), 4);
  KappaOptions keep;
  keep.eliminate_constant_block = false;
  EXPECT_THROW(condition_number(h, KappaMethod::dense_svd, keep), SingularSystem);
}

TEST(Export, MatrixMarket) {
  const CarlemanMatrix m = embed(scalar_field({0.0, -0.5}), 1);
  const GlobalSystem g = build_global(m, initial_state(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), 1).y, 2);
  std::ostringstream out;
  write_matrix_market(out, g.assemble());
  std::istringstream in(out.str());
  std::string banner;
  std::getline(in, banner);
  EXPECT_EQ(banner, "%%MatrixMarket matrix coordinate real general");
  Index rows, cols, nnz;
  in >> rows >> cols >> nnz;
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(cols, 6);
  EXPECT_EQ(nnz, g.nonzeros());
  Index r, c;
  std::string v;
  Index seen = 0;
  while (in >> r >> c >> v) {
    EXPECT_GE(r, 1);
    EXPECT_LE(c, 6);
    ++seen;
  }
  EXPECT_EQ(seen, nnz);
}
