#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "qcarleman/net.hpp"

using namespace qcarleman;

namespace {

const std::string kIris = std::string(QCARLEMAN_DATA_DIR) + "/iris.csv";

Eigen::VectorXd sine_params(Index n) {
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = 0.3 * std::sin(1.7 * static_cast<double>(i) + 0.2);
  return v;
}

Eigen::VectorXd central_difference_grad(const ModelSpec& spec, const Eigen::VectorXd& theta, const Dataset& data,
                                        double h) {
  Eigen::VectorXd g(theta.size());
  for (Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd p = theta, m = theta;
    p[i] += h;
    m[i] -= h;
    g[i] = (loss(spec, ParamVector(p), data) - loss(spec, ParamVector(m), data)) / (2 * h);
  }
  return g;
}

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = ::testing::TempDir() + name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST(Dataset, LoadsCanonicalIris) {
  const Dataset d = load_iris(kIris);
  ASSERT_EQ(d.samples(), 150);
  ASSERT_EQ(d.input_dim(), 4);
  ASSERT_EQ(d.classes, 3);
  std::vector<int> counts(3, 0);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  EXPECT_EQ(counts, (std::vector<int>{50, 50, 50}));
  for (Index c = 0; c < 4; ++c) {
    EXPECT_NEAR(d.features.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(d.features.col(c).squaredNorm() / 150.0, 1.0, 1e-12);
  }
  const Eigen::MatrixXd y = d.one_hot();
  for (Index s = 0; s < y.rows(); ++s) EXPECT_EQ(y.row(s).sum(), 1.0);
}

TEST(Dataset, HeaderIsOptional) {
  const auto path = write_temp("noheader.csv", "1,2,3,4,a\n2,3,4,5,b\n3,4,5,6,a\n");
  const Dataset d = load_csv_dataset(path, 4, false);
  EXPECT_EQ(d.samples(), 3);
  EXPECT_EQ(d.classes, 2);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(d.features(1, 3), 5.0);
}

TEST(Dataset, EmptyFileIsParseError) {
  const auto path = write_temp("empty.csv", "");
  EXPECT_THROW(load_iris(path), ParseError);
}

TEST(Dataset, MalformedRowReportsLine) {
  const auto path = write_temp("bad.csv", "a,b,c,d,species\n1,2,3,4,x\n1,2,oops,4,x\n");
  try {
    load_iris(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  const auto short_row = write_temp("short.csv", "1,2,3,4,x\n1,2,3,x\n");
  try {
    load_iris(short_row);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ModelSpec, ParameterCountAndDegree) {
  EXPECT_EQ(ModelSpec::mlp({4, 3, 3}).parameter_count(), 27);
  EXPECT_EQ(ModelSpec::mlp({4, 3, 3}, Activation::quadratic_poly, 0.1).gradient_degree(), 5);
  EXPECT_EQ(ModelSpec::mlp({4, 3, 3}, Activation::identity).gradient_degree(), 3);
  EXPECT_EQ(ModelSpec::mlp({4, 3}, Activation::quadratic_poly).gradient_degree(), 1);
  EXPECT_EQ(ModelSpec::diag_quadratic({1, 4}).gradient_degree(), 1);
  EXPECT_EQ(ModelSpec::scalar_cubic().gradient_degree(), 3);
  EXPECT_THROW(ModelSpec::mlp({4}).validate(), InvalidInput);
}

TEST(Loss, AnalyticExamples) {
  const Dataset none;
  EXPECT_DOUBLE_EQ(loss(ModelSpec::diag_quadratic({1, 4}), ParamVector(Eigen::Vector2d(1, 1)), none), 2.5);
  EXPECT_EQ(loss(ModelSpec::scalar_cubic(), ParamVector(Eigen::VectorXd::Zero(1)), none), 0.0);
}

TEST(Loss, IrisMatchesReferenceForwardPass) {
  // Frozen from an independent numpy forward pass on the same standardized data.
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3}, Activation::quadratic_poly, 0.1);
  EXPECT_NEAR(loss(spec, ParamVector(sine_params(27)), d), 0.6320560720475307, 1e-13);
  const auto linear = ModelSpec::mlp({4, 3, 3}, Activation::quadratic_poly, 0.0);
  EXPECT_NEAR(loss(linear, ParamVector(sine_params(27)), d), 0.6363171225885869, 1e-13);
}

TEST(Loss, RejectsBadInput) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  EXPECT_THROW(loss(spec, ParamVector(Eigen::VectorXd::Zero(5)), d), InvalidInput);
  EXPECT_THROW(loss(spec, ParamVector(Eigen::VectorXd::Zero(27)), Dataset{}), InvalidInput);
  EXPECT_THROW(loss(ModelSpec::mlp({5, 3, 3}), ParamVector(Eigen::VectorXd::Zero(33)), d), InvalidInput);
  EXPECT_THROW(loss(ModelSpec::diag_quadratic({1.0}), ParamVector(Eigen::VectorXd::Constant(1, 1e300)), d),
               NumericOverflow);
}

TEST(Grad, AnalyticExamples) {
  const Dataset none;
  const Eigen::VectorXd g = grad(ModelSpec::diag_quadratic({1, 4}), ParamVector(Eigen::Vector2d(2, 1)), none);
  EXPECT_EQ(g, Eigen::Vector2d(2, 4));
  EXPECT_EQ(grad(ModelSpec::scalar_cubic(), ParamVector(Eigen::VectorXd::Zero(1)), none)[0], 0.0);
  EXPECT_TRUE(grad(ModelSpec::diag_quadratic({3, 5, 7}), ParamVector(Eigen::Vector3d::Zero()), none).isZero());
}

TEST(Grad, MatchesCentralDifferencesOnIris) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3}, Activation::quadratic_poly, 0.1);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd theta(27);
    for (Index i = 0; i < 27; ++i) theta[i] = normal(rng);
    const Eigen::VectorXd g = grad(spec, ParamVector(theta), d);
    const Eigen::VectorXd fd = central_difference_grad(spec, theta, d, 1e-4);
    worst = std::max(worst, (g - fd).norm() / g.norm());
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Hessian, AnalyticExamples) {
  const Dataset none;
  const auto diag = ModelSpec::diag_quadratic({1, 4});
  for (double x : {-1.0, 0.0, 3.5}) {
    const Eigen::MatrixXd h = hessian(diag, ParamVector(Eigen::Vector2d(x, 2 * x)), none);
    EXPECT_EQ(h, Eigen::Vector2d(1, 4).asDiagonal().toDenseMatrix());
  }
  EXPECT_DOUBLE_EQ(hessian(ModelSpec::scalar_cubic(), ParamVector(Eigen::VectorXd::Ones(1)), none)(0, 0), 4.0);
}

TEST(Hessian, SymmetricAndConsistentWithHvp) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  const ParamVector p(sine_params(27));
  const Eigen::MatrixXd h = hessian(spec, p, d);
  EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Eigen::VectorXd u(27), w(27);
  for (Index i = 0; i < 27; ++i) {
    u[i] = normal(rng);
    w[i] = normal(rng);
  }
  const Eigen::VectorXd hv = hvp(spec, p, d, u);
  EXPECT_LT((hv - h * u).norm() / hv.norm(), 1e-8);
  // linearity in the direction
  const Eigen::VectorXd lin = hvp(spec, p, d, 2.0 * u - 3.0 * w);
  EXPECT_LT((lin - (2.0 * hv - 3.0 * hvp(spec, p, d, w))).norm() / lin.norm(), 1e-12);
  for (Index j = 0; j < 27; ++j)
    EXPECT_LT((hvp(spec, p, d, Eigen::VectorXd::Unit(27, j)) - h.col(j)).norm(), 1e-8 * (1.0 + h.col(j).norm()));
}

TEST(Hessian, HvpMatchesFiniteDifferenceOfGrad) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd theta(27), v(27);
    for (Index i = 0; i < 27; ++i) {
      theta[i] = normal(rng);
      v[i] = normal(rng);
    }
    const double h = 1e-4;
    const Eigen::VectorXd fd =
        (grad(spec, ParamVector(theta + h * v), d) - grad(spec, ParamVector(theta - h * v), d)) / (2 * h);
    const Eigen::VectorXd hv = hvp(spec, ParamVector(theta), d, v);
    EXPECT_LT((hv - fd).norm() / hv.norm(), 1e-4);
  }
}

TEST(Hessian, DenseLimitRejectsLargeModels) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  EXPECT_THROW(hessian(spec, ParamVector(sine_params(27)), d, 16), InvalidInput);
  EXPECT_NO_THROW(hvp(spec, ParamVector(sine_params(27)), d, Eigen::VectorXd::Ones(27)));
}

TEST(SgdReference, SingleStepDiagQuadratic) {
  SgdOptions opt;
  opt.eta = 0.1;
  opt.steps = 1;
  const auto traj = sgd_reference(ModelSpec::diag_quadratic({1, 4}), ParamVector(Eigen::Vector2d(1, 1)), Dataset{}, opt);
  ASSERT_EQ(traj.size(), 2u);
  EXPECT_NEAR(traj[1][0], 0.9, 1e-15);
  EXPECT_NEAR(traj[1][1], 0.6, 1e-15);
}

TEST(SgdReference, ZeroLearningRateIsIdentity) {
  SgdOptions opt;
  opt.eta = 0.0;
  opt.steps = 25;
  const Dataset d = load_iris(kIris);
  const ParamVector p(sine_params(27));
  const auto traj = sgd_reference(ModelSpec::mlp({4, 3, 3}), p, d, opt);
  EXPECT_EQ(traj.back(), p.values);
}

TEST(SgdReference, MaskedCoordinatesStayZero) {
  const Dataset d = load_iris(kIris);
  std::vector<bool> mask(27, false);
  for (Index i : {0, 5, 13, 20, 26}) mask[static_cast<std::size_t>(i)] = true;
  const ParamVector p(sine_params(27), mask);
  SgdOptions opt;
  opt.eta = 0.1;
  opt.steps = 50;
  for (const auto& theta : sgd_reference(ModelSpec::mlp({4, 3, 3}), p, d, opt))
    for (Index i = 0; i < 27; ++i)
      if (!mask[static_cast<std::size_t>(i)]) ASSERT_EQ(theta[i], 0.0);
}

TEST(SgdReference, FullBatchIsBitwiseDeterministic) {
  const Dataset d = load_iris(kIris);
  SgdOptions opt;
  opt.eta = 0.05;
  opt.steps = 30;
  const auto spec = ModelSpec::mlp({4, 3, 3});
  const auto a = sgd_reference(spec, init_params(spec, 42), d, opt);
  const auto b = sgd_reference(spec, init_params(spec, 42), d, opt);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) ASSERT_EQ(0, std::memcmp(a[t].data(), b[t].data(), sizeof(double) * 27));
}

TEST(SgdReference, MinibatchReproducibleFromSeed) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  SgdOptions opt;
  opt.eta = 0.05;
  opt.steps = 20;
  opt.batch = 32;
  opt.seed = 11;
  const auto a = sgd_reference(spec, init_params(spec, 1), d, opt);
  const auto b = sgd_reference(spec, init_params(spec, 1), d, opt);
  EXPECT_EQ(a.back(), b.back());
  opt.seed = 12;
  const auto c = sgd_reference(spec, init_params(spec, 1), d, opt);
  EXPECT_NE(a.back(), c.back());
}

TEST(SgdReference, IrisLossDecreasesAndMatchesIndependentLoop) {
  const Dataset d = load_iris(kIris);
  const auto spec = ModelSpec::mlp({4, 3, 3});
  const ParamVector p0 = init_params(spec, 42);
  SgdOptions opt;
  opt.eta = 0.05;
  opt.steps = 100;
  const auto traj = sgd_reference(spec, p0, d, opt);
  double prev = loss(spec, ParamVector(traj[0]), d);
  for (std::size_t t = 1; t < traj.size(); ++t) {
    const double cur = loss(spec, ParamVector(traj[t]), d);
    ASSERT_LT(cur, prev) << "step " << t;
    prev = cur;
  }
  // Second loop written directly against grad().
  Eigen::VectorXd theta = p0.values;
  for (int t = 0; t < 100; ++t) theta -= 0.05 * grad(spec, ParamVector(theta), d);
  EXPECT_LT((theta - traj.back()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SgdReference, DivergenceReportsStep) {
  SgdOptions opt;
  opt.eta = 0.1;
  opt.steps = 100;
  // multiplier 1 - 0.1*30 = -2 per step; |theta| passes 1e8 at step 27
  try {
    sgd_reference(ModelSpec::diag_quadratic({30.0}), ParamVector(Eigen::VectorXd::Ones(1)), Dataset{}, opt);
    FAIL() << "expected divergence";
  } catch (const Divergence& e) {
    EXPECT_EQ(e.step(), 27);
  }
}

TEST(InitParams, DeterministicAndScaled) {
  const auto spec = ModelSpec::mlp({4, 3, 3});
  const ParamVector a = init_params(spec, 9), b = init_params(spec, 9), c = init_params(spec, 10);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  EXPECT_EQ(a.size(), 27);
  for (Index i = 12; i < 15; ++i) EXPECT_EQ(a.values[i], 0.0);  // first-layer biases
}
