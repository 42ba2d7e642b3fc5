#pragma once

// Small differentiable models with exact polynomial gradients: two analytic
// testbeds and a multilayer perceptron with activation x + alpha*x^2, trained
// on mean squared error against one-hot targets.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "qcarleman/dual.hpp"
#include "qcarleman/errors.hpp"

namespace qcarleman {

using Index = Eigen::Index;

struct Dataset {
  Eigen::MatrixXd features;  // samples x input_dim
  std::vector<int> labels;
  int classes = 0;
  std::vector<std::string> class_names;

  Index samples() const { return features.rows(); }
  Index input_dim() const { return features.cols(); }
  bool empty() const { return features.rows() == 0; }

  Eigen::MatrixXd one_hot() const {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(samples(), classes);
    for (Index s = 0; s < samples(); ++s) y(s, labels[static_cast<std::size_t>(s)]) = 1.0;
    return y;
  }

  void validate() const {
    if (static_cast<Index>(labels.size()) != features.rows())
      throw InvalidInput("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(labels.size()) + " labels");
    for (int l : labels)
      if (l < 0 || l >= classes) throw InvalidInput("label " + std::to_string(l) + " outside [0, classes)");
  }
};

enum class ModelKind { diag_quadratic, scalar_cubic, mlp };
enum class Activation { identity, quadratic_poly };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::diag_quadratic: return "diag_quadratic";
    case ModelKind::scalar_cubic: return "scalar_cubic";
    case ModelKind::mlp: return "mlp";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "diag_quadratic") return ModelKind::diag_quadratic;
  if (s == "scalar_cubic") return ModelKind::scalar_cubic;
  if (s == "mlp") return ModelKind::mlp;
  throw InvalidInput("unknown model kind '" + std::string(s) + "'");
}

inline std::string to_string(Activation a) { return a == Activation::identity ? "identity" : "quadratic_poly"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "quadratic_poly") return Activation::quadratic_poly;
  throw InvalidInput("unknown activation '" + std::string(s) + "'");
}

/// Model description.
///
/// diag_quadratic: L = 1/2 sum_i c_i theta_i^2, one parameter per coefficient.
/// scalar_cubic:   L = c1 theta^2 / 2 + c3 theta^4 / 4 with coefficients (c1, c3).
/// mlp:            fully connected layers; hidden layers use the activation,
///                 the output layer is affine; L = 1/(2m) sum_s |out_s - onehot_s|^2.
struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  std::vector<int> widths;
  Activation activation = Activation::quadratic_poly;
  double alpha = 0.1;
  std::vector<double> coefficients;

  static ModelSpec diag_quadratic(std::vector<double> c) {
    ModelSpec s;
    s.kind = ModelKind::diag_quadratic;
    s.coefficients = std::move(c);
    return s;
  }
  static ModelSpec scalar_cubic(double c1 = 1.0, double c3 = 1.0) {
    ModelSpec s;
    s.kind = ModelKind::scalar_cubic;
    s.coefficients = {c1, c3};
    return s;
  }
  static ModelSpec mlp(std::vector<int> widths, Activation act = Activation::quadratic_poly, double alpha = 0.1) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.widths = std::move(widths);
    s.activation = act;
    s.alpha = alpha;
    return s;
  }

  Index parameter_count() const {
    switch (kind) {
      case ModelKind::diag_quadratic: return static_cast<Index>(coefficients.size());
      case ModelKind::scalar_cubic: return 1;
      case ModelKind::mlp: {
        Index n = 0;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += Index(widths[i] + 1) * widths[i + 1];
        return n;
      }
    }
    return 0;
  }

  // Polynomial degree of the gradient as a function of theta.
  int gradient_degree() const {
    switch (kind) {
      case ModelKind::diag_quadratic: return 1;
      case ModelKind::scalar_cubic: return coefficients.size() > 1 && coefficients[1] != 0.0 ? 3 : 1;
      case ModelKind::mlp: {
        const bool squares = activation == Activation::quadratic_poly && alpha != 0.0;
        int h = 0;  // degree of the current hidden activations
        for (std::size_t l = 0; l + 2 < widths.size(); ++l) h = squares ? 2 * (h + 1) : h + 1;
        const int out = h + 1;
        return 2 * out - 1;
      }
    }
    return 0;
  }

  bool is_analytic() const { return kind != ModelKind::mlp; }

  void validate() const {
    switch (kind) {
      case ModelKind::diag_quadratic:
        if (coefficients.empty()) throw InvalidInput("diag_quadratic needs at least one coefficient");
        break;
      case ModelKind::scalar_cubic:
        if (coefficients.size() != 2) throw InvalidInput("scalar_cubic needs coefficients (c1, c3)");
        break;
      case ModelKind::mlp:
        if (widths.size() < 2) throw InvalidInput("mlp needs at least two layer widths");
        for (int w : widths)
          if (w <= 0) throw InvalidInput("mlp layer widths must be positive");
        break;
    }
  }
};

struct ParamVector {
  Eigen::VectorXd values;
  std::optional<std::vector<bool>> mask;  // true = trainable

  ParamVector() = default;
  explicit ParamVector(Eigen::VectorXd v) : values(std::move(v)) {}
  ParamVector(Eigen::VectorXd v, std::vector<bool> m) : values(std::move(v)), mask(std::move(m)) { enforce_mask(); }

  Index size() const { return values.size(); }
  bool trainable(Index i) const { return !mask || (*mask)[static_cast<std::size_t>(i)]; }

  std::vector<Index> active_indices() const {
    std::vector<Index> idx;
    for (Index i = 0; i < size(); ++i)
      if (trainable(i)) idx.push_back(i);
    return idx;
  }

  void enforce_mask() {
    if (!mask) return;
    for (Index i = 0; i < size(); ++i)
      if (!(*mask)[static_cast<std::size_t>(i)]) values[i] = 0.0;
  }

  void check_size(Index n) const {
    if (size() != n)
      throw InvalidInput("parameter vector has length " + std::to_string(size()) + ", model expects " +
                         std::to_string(n));
    if (mask && static_cast<Index>(mask->size()) != n) throw InvalidInput("mask length does not match parameters");
  }
};

namespace detail {

template <class T>
T activate(Activation a, double alpha, const T& z) {
  if (a == Activation::identity) return z;
  return z + alpha * (z * z);
}

template <class T>
T activate_prime(Activation a, double alpha, const T& z) {
  if (a == Activation::identity) return T(1.0);
  return (2.0 * alpha) * z + 1.0;
}

inline std::vector<Index> all_rows(const Dataset& data) {
  std::vector<Index> rows(static_cast<std::size_t>(data.samples()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

// Parameter layout per layer: weights (out x in, row-major) followed by biases.
inline std::vector<Index> layer_offsets(const ModelSpec& spec) {
  std::vector<Index> off{0};
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
    off.push_back(off.back() + Index(spec.widths[l] + 1) * spec.widths[l + 1]);
  return off;
}

// Forward pass for one sample; stores pre-activations of each layer.
template <class T>
std::vector<T> mlp_forward(const ModelSpec& spec, std::span<const T> theta, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                           std::vector<std::vector<T>>* acts, std::vector<std::vector<T>>* pre) {
  const auto off = layer_offsets(spec);
  const std::size_t layers = spec.widths.size() - 1;
  std::vector<T> a(static_cast<std::size_t>(spec.widths[0]));
  for (int i = 0; i < spec.widths[0]; ++i) a[static_cast<std::size_t>(i)] = T(x[i]);
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const Index w0 = off[l];
    const Index b0 = w0 + Index(in) * out;
    std::vector<T> z(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      T acc = theta[static_cast<std::size_t>(b0 + o)];
      for (int i = 0; i < in; ++i) acc += theta[static_cast<std::size_t>(w0 + Index(o) * in + i)] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
    }
    if (acts) acts->push_back(a);
    if (pre) pre->push_back(z);
    if (l + 1 < layers) {
      for (auto& v : z) v = activate(spec.activation, spec.alpha, v);
    }
    a = std::move(z);
  }
  return a;
}

template <class T>
std::vector<T> mlp_gradient(const ModelSpec& spec, std::span<const T> theta, const Dataset& data,
                            std::span<const Index> rows) {
  const auto off = layer_offsets(spec);
  const std::size_t layers = spec.widths.size() - 1;
  std::vector<T> g(theta.size(), T(0.0));
  const double inv_m = 1.0 / static_cast<double>(rows.size());
  for (Index s : rows) {
    std::vector<std::vector<T>> acts, pre;
    auto out = mlp_forward<T>(spec, theta, data.features.row(s), &acts, &pre);
    std::vector<T> e(out.size());
    const int label = data.labels[static_cast<std::size_t>(s)];
    for (std::size_t k = 0; k < out.size(); ++k) e[k] = (out[k] - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_m;
    for (std::size_t l = layers; l-- > 0;) {
      const int in = spec.widths[l];
      const int outw = spec.widths[l + 1];
      const Index w0 = off[l];
      const Index b0 = w0 + Index(in) * outw;
      const auto& a = acts[l];
      for (int o = 0; o < outw; ++o) {
        const T& eo = e[static_cast<std::size_t>(o)];
        for (int i = 0; i < in; ++i) g[static_cast<std::size_t>(w0 + Index(o) * in + i)] += eo * a[static_cast<std::size_t>(i)];
        g[static_cast<std::size_t>(b0 + o)] += eo;
      }
      if (l == 0) break;
      std::vector<T> prev(static_cast<std::size_t>(in), T(0.0));
      const auto& z = pre[l - 1];
      for (int i = 0; i < in; ++i) {
        T acc(0.0);
        for (int o = 0; o < outw; ++o)
          acc += theta[static_cast<std::size_t>(w0 + Index(o) * in + i)] * e[static_cast<std::size_t>(o)];
        prev[static_cast<std::size_t>(i)] = acc * activate_prime(spec.activation, spec.alpha, z[static_cast<std::size_t>(i)]);
      }
      e = std::move(prev);
    }
  }
  return g;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericOverflow(std::string("non-finite ") + what);
}

}  // namespace detail

/// Gradient for any scalar type supporting +, -, * (double or nested duals).
/// `rows` selects a minibatch; empty means the full dataset.
template <class T>
std::vector<T> gradient(const ModelSpec& spec, std::span<const T> theta, const Dataset& data,
                        std::span<const Index> rows = {}) {
  switch (spec.kind) {
    case ModelKind::diag_quadratic: {
      std::vector<T> g(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) g[i] = spec.coefficients[i] * theta[i];
      return g;
    }
    case ModelKind::scalar_cubic: {
      const T& x = theta[0];
      return {spec.coefficients[0] * x + spec.coefficients[1] * (x * x * x)};
    }
    case ModelKind::mlp: {
      if (rows.empty()) {
        const auto all = detail::all_rows(data);
        return detail::mlp_gradient<T>(spec, theta, data, all);
      }
      return detail::mlp_gradient<T>(spec, theta, data, rows);
    }
  }
  return {};
}

namespace detail {

inline void check_inputs(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  spec.validate();
  params.check_size(spec.parameter_count());
  if (spec.kind == ModelKind::mlp) {
    if (data.empty()) throw InvalidInput("dataset is empty");
    data.validate();
    if (data.input_dim() != spec.widths.front())
      throw InvalidInput("dataset has " + std::to_string(data.input_dim()) + " features, network expects " +
                         std::to_string(spec.widths.front()));
    if (data.classes != spec.widths.back())
      throw InvalidInput("dataset has " + std::to_string(data.classes) + " classes, network outputs " +
                         std::to_string(spec.widths.back()));
  }
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace detail

inline double loss(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  detail::check_inputs(spec, params, data);
  const auto& th = params.values;
  double value = 0.0;
  switch (spec.kind) {
    case ModelKind::diag_quadratic:
      for (Index i = 0; i < th.size(); ++i) value += 0.5 * spec.coefficients[static_cast<std::size_t>(i)] * th[i] * th[i];
      break;
    case ModelKind::scalar_cubic: {
      const double x2 = th[0] * th[0];
      value = spec.coefficients[0] * x2 / 2.0 + spec.coefficients[1] * x2 * x2 / 4.0;
      break;
    }
    case ModelKind::mlp: {
      const auto theta = detail::to_std(th);
      for (Index s = 0; s < data.samples(); ++s) {
        auto out = detail::mlp_forward<double>(spec, theta, data.features.row(s), nullptr, nullptr);
        for (std::size_t k = 0; k < out.size(); ++k) {
          const double r = out[k] - (static_cast<int>(k) == data.labels[static_cast<std::size_t>(s)] ? 1.0 : 0.0);
          value += 0.5 * r * r;
        }
      }
      value /= static_cast<double>(data.samples());
      break;
    }
  }
  detail::require_finite(value, "loss");
  return value;
}

inline Eigen::VectorXd grad(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  detail::check_inputs(spec, params, data);
  const auto theta = detail::to_std(params.values);
  auto g = detail::to_eigen(gradient<double>(spec, std::span<const double>(theta), data));
  if (!g.allFinite()) throw NumericOverflow("non-finite gradient");
  return g;
}

/// Network outputs for every sample (samples x classes). mlp only.
inline Eigen::MatrixXd predict(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  detail::check_inputs(spec, params, data);
  if (spec.kind != ModelKind::mlp) throw InvalidInput("predict requires an mlp model");
  const auto theta = detail::to_std(params.values);
  Eigen::MatrixXd out(data.samples(), spec.widths.back());
  for (Index s = 0; s < data.samples(); ++s) {
    auto o = detail::mlp_forward<double>(spec, theta, data.features.row(s), nullptr, nullptr);
    for (std::size_t k = 0; k < o.size(); ++k) out(s, static_cast<Index>(k)) = o[k];
  }
  return out;
}

/// Fraction of samples whose argmax output equals the label; NaN for analytic models.
inline double accuracy(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  if (spec.kind != ModelKind::mlp) return std::numeric_limits<double>::quiet_NaN();
  const auto out = predict(spec, params, data);
  Index correct = 0;
  for (Index s = 0; s < out.rows(); ++s) {
    Index best = 0;
    out.row(s).maxCoeff(&best);
    if (best == data.labels[static_cast<std::size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(out.rows());
}

// Directional derivatives of a gradient map. `grad_fn` is a generic callable
// taking std::vector<T> and returning std::vector<T> for nested dual T.

/// d/de grad(theta + e u)  (Hessian-vector product)
template <class GradFn>
Eigen::VectorXd directional_d1(GradFn&& grad_fn, const Eigen::VectorXd& theta, const Eigen::VectorXd& u) {
  using D1 = Dual<double>;
  std::vector<D1> x(static_cast<std::size_t>(theta.size()));
  for (Index i = 0; i < theta.size(); ++i) x[static_cast<std::size_t>(i)] = D1(theta[i], u[i]);
  const std::vector<D1> g = grad_fn(x);
  Eigen::VectorXd r(theta.size());
  for (Index i = 0; i < theta.size(); ++i) r[i] = g[static_cast<std::size_t>(i)].d;
  return r;
}

/// Third derivative tensor of the loss contracted with (u, w).
template <class GradFn>
Eigen::VectorXd directional_d2(GradFn&& grad_fn, const Eigen::VectorXd& theta, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& w) {
  using D1 = Dual<double>;
  using D2 = Dual<D1>;
  std::vector<D2> x(static_cast<std::size_t>(theta.size()));
  for (Index i = 0; i < theta.size(); ++i) x[static_cast<std::size_t>(i)] = D2(D1(theta[i], w[i]), D1(u[i], 0.0));
  const std::vector<D2> g = grad_fn(x);
  Eigen::VectorXd r(theta.size());
  for (Index i = 0; i < theta.size(); ++i) r[i] = g[static_cast<std::size_t>(i)].d.d;
  return r;
}

/// Fourth derivative tensor of the loss contracted with (u, w, z).
template <class GradFn>
Eigen::VectorXd directional_d3(GradFn&& grad_fn, const Eigen::VectorXd& theta, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& w, const Eigen::VectorXd& z) {
  using D1 = Dual<double>;
  using D2 = Dual<D1>;
  using D3 = Dual<D2>;
  std::vector<D3> x(static_cast<std::size_t>(theta.size()));
  for (Index i = 0; i < theta.size(); ++i)
    x[static_cast<std::size_t>(i)] = D3(D2(D1(theta[i], z[i]), D1(w[i], 0.0)), D2(D1(u[i], 0.0), D1(0.0, 0.0)));
  const std::vector<D3> g = grad_fn(x);
  Eigen::VectorXd r(theta.size());
  for (Index i = 0; i < theta.size(); ++i) r[i] = g[static_cast<std::size_t>(i)].d.d.d;
  return r;
}

namespace detail {

struct FullGrad {
  const ModelSpec& spec;
  const Dataset& data;
  template <class T>
  std::vector<T> operator()(const std::vector<T>& x) const {
    return gradient<T>(spec, std::span<const T>(x), data);
  }
};

}  // namespace detail

inline Eigen::VectorXd hvp(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                           const Eigen::VectorXd& v) {
  detail::check_inputs(spec, params, data);
  if (v.size() != params.size()) throw InvalidInput("hvp direction has wrong length");
  auto r = directional_d1(detail::FullGrad{spec, data}, params.values, v);
  if (!r.allFinite()) throw NumericOverflow("non-finite Hessian-vector product");
  return r;
}

inline constexpr Index kDefaultDenseLimit = 4096;

inline Eigen::MatrixXd hessian(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                               Index dense_limit = kDefaultDenseLimit) {
  detail::check_inputs(spec, params, data);
  const Index n = params.size();
  if (n > dense_limit)
    throw InvalidInput("dense Hessian of size " + std::to_string(n) + " exceeds limit " + std::to_string(dense_limit) +
                       "; use hvp or Lanczos");
  Eigen::MatrixXd h(n, n);
  for (Index j = 0; j < n; ++j) h.col(j) = directional_d1(detail::FullGrad{spec, data}, params.values, Eigen::VectorXd::Unit(n, j));
  if (!h.allFinite()) throw NumericOverflow("non-finite Hessian");
  return 0.5 * (h + h.transpose());
}

struct SgdOptions {
  double eta = 0.05;
  Index steps = 100;
  Index batch = 0;  // 0 or >= samples means full batch
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  double divergence_bound = 1e8;
};

/// Classical (stochastic) gradient descent, returning states 0..steps.
inline std::vector<Eigen::VectorXd> sgd_reference(const ModelSpec& spec, const ParamVector& start, const Dataset& data,
                                                  const SgdOptions& opt) {
  detail::check_inputs(spec, start, data);
  if (!(opt.eta >= 0.0)) throw InvalidInput("learning rate must be non-negative");
  if (opt.steps < 0) throw InvalidInput("step count must be non-negative");
  const bool minibatch = spec.kind == ModelKind::mlp && opt.batch > 0 && opt.batch < data.samples();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Index> order = detail::all_rows(data);
  std::vector<Index> rows;

  ParamVector cur = start;
  cur.enforce_mask();
  std::vector<Eigen::VectorXd> traj;
  traj.reserve(static_cast<std::size_t>(opt.steps + 1));
  traj.push_back(cur.values);
  std::vector<double> theta = detail::to_std(cur.values);
  for (Index t = 0; t < opt.steps; ++t) {
    if (minibatch) {
      for (Index i = 0; i < opt.batch; ++i) {
        std::uniform_int_distribution<Index> pick(i, data.samples() - 1);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
      }
      rows.assign(order.begin(), order.begin() + opt.batch);
      std::sort(rows.begin(), rows.end());
    }
    const auto g = gradient<double>(spec, std::span<const double>(theta), data, rows);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!cur.trainable(static_cast<Index>(i))) continue;
      theta[i] -= opt.eta * g[i];
      if (opt.noise_std > 0.0) theta[i] += opt.noise_std * noise(rng);
      norm2 += theta[i] * theta[i];
    }
    if (!std::isfinite(norm2) || std::sqrt(norm2) > opt.divergence_bound)
      throw Divergence("gradient descent left the bound " + std::to_string(opt.divergence_bound), t + 1);
    traj.push_back(detail::to_eigen(theta));
  }
  return traj;
}

/// Seeded Gaussian initialization scaled by 1/sqrt(fan_in); biases start at zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.parameter_count());
  if (spec.kind != ModelKind::mlp) {
    for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
    return ParamVector(v);
  }
  const auto off = detail::layer_offsets(spec);
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Index k = 0; k < Index(in) * out; ++k) v[off[l] + k] = scale * normal(rng);
  }
  return ParamVector(v);
}

/// Column-wise standardization to zero mean and unit (population) variance.
inline void standardize(Eigen::MatrixXd& x) {
  for (Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    x.col(c).array() -= mean;
    const double sd = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(x.rows()));
    if (sd > 0.0) x.col(c) /= sd;
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a CSV of float feature columns followed by a class-name column.
/// A non-numeric first row is treated as a header. Class names are numbered
/// in order of first appearance. Features are standardized unless disabled.
inline Dataset load_csv_dataset(const std::string& path, Index expected_features = -1, bool standardize_features = true) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::map<std::string, int> ids;
  std::vector<std::string> names;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  Index width = expected_features;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto fields = detail::split(body, ',');
    if (first) {
      first = false;
      if (!detail::parse_double(fields.front())) continue;  // header
    }
    if (fields.size() < 2) throw ParseError("expected feature columns and a class column", lineno);
    const Index nf = static_cast<Index>(fields.size()) - 1;
    if (width < 0) width = nf;
    if (nf != width)
      throw ParseError("expected " + std::to_string(width) + " feature columns, found " + std::to_string(nf), lineno);
    std::vector<double> row;
    for (Index c = 0; c < nf; ++c) {
      auto v = detail::parse_double(fields[static_cast<std::size_t>(c)]);
      if (!v || !std::isfinite(*v))
        throw ParseError("column " + std::to_string(c + 1) + " is not a number: '" +
                             std::string(fields[static_cast<std::size_t>(c)]) + "'",
                         lineno);
      row.push_back(*v);
    }
    const std::string name(fields.back());
    if (name.empty()) throw ParseError("missing class label", lineno);
    auto [it, inserted] = ids.emplace(name, static_cast<int>(names.size()));
    if (inserted) names.push_back(name);
    labels.push_back(it->second);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows in '" + path + "'", lineno);

  Dataset d;
  d.features.resize(static_cast<Index>(rows.size()), width);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < width; ++c) d.features(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  if (standardize_features) standardize(d.features);
  d.labels = std::move(labels);
  d.classes = static_cast<int>(names.size());
  d.class_names = std::move(names);
  return d;
}

inline Dataset load_iris(const std::string& path) { return load_csv_dataset(path, 4, true); }

/// Isotropic Gaussian blobs centred on scaled unit vectors; a synthetic
/// stand-in when no dataset file is given.
inline Dataset make_blobs(Index per_class, int classes, Index dim, std::uint64_t seed, double spread = 0.5) {
  if (per_class <= 0 || classes <= 0 || dim <= 0) throw InvalidInput("make_blobs needs positive sizes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, spread);
  Dataset d;
  d.features.resize(per_class * classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (Index k = 0; k < per_class; ++k) {
      const Index r = c * per_class + k;
      for (Index j = 0; j < dim; ++j) d.features(r, j) = (j == c % dim ? 2.0 : 0.0) + normal(rng);
      d.labels.push_back(c);
    }
    d.class_names.push_back("class" + std::to_string(c));
  }
  d.classes = classes;
  standardize(d.features);
  return d;
}

}  // namespace qcarleman
