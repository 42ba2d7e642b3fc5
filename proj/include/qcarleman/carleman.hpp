#pragma once

// Truncated Carleman embedding of a PolyField and the time-stepped block
// linear system built from it.
//
// The state is y = (1, d, d^(x)2, ..., d^(x)N) with d = theta - anchor. Block
// (i, i+k-1) of A is the Kronecker sum  sum_p I^(p-1) (x) F_k (x) I^(i-p),
// which is the product rule for d/dt d^(x)i. Blocks reaching past order N are
// dropped. Time stepping is forward Euler, S = I + A, and the global system
//
//   [ I           ] [y_0]   [y(0)]
//   [-S  I        ] [y_1] = [ 0  ]
//   [    ...  ... ] [...]   [... ]
//   [        -S  I] [y_T]   [ 0  ]
//
// is what an HHL-type solver would invert.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/Sparse>

#include "qcarleman/errors.hpp"
#include "qcarleman/io.hpp"
#include "qcarleman/polyfield.hpp"

namespace qcarleman {

inline constexpr Index kDefaultCarlemanBudget = 2'000'000;

struct CarlemanMatrix {
  int order = 1;
  Index n = 0;
  int degree = 1;
  std::vector<Index> offsets;  // offsets[j] is the first row of block j; offsets[order+1] = D
  SparseMatrix A;

  Index dimension() const { return offsets.back(); }
  Index block_size(int j) const { return offsets[static_cast<std::size_t>(j) + 1] - offsets[static_cast<std::size_t>(j)]; }

  int block_of(Index idx) const {
    auto it = std::upper_bound(offsets.begin(), offsets.end(), idx);
    return static_cast<int>(it - offsets.begin()) - 1;
  }

  Eigen::MatrixXd dense_block(int i, int j) const {
    return Eigen::MatrixXd(A).block(offsets[static_cast<std::size_t>(i)], offsets[static_cast<std::size_t>(j)],
                                    block_size(i), block_size(j));
  }
};

/// 1 + n + n^2 + ... + n^N, or nullopt on overflow.
inline std::optional<std::uint64_t> carleman_dimension(Index n, int order) {
  std::uint64_t total = 1, p = 1;
  const auto un = static_cast<std::uint64_t>(n);
  for (int j = 1; j <= order; ++j) {
    if (un != 0 && p > std::numeric_limits<std::uint64_t>::max() / un) return std::nullopt;
    p *= un;
    if (total > std::numeric_limits<std::uint64_t>::max() - p) return std::nullopt;
    total += p;
  }
  return total;
}

/// Number of stored entries of A lying outside the admissible blocks
/// (i, i+k-1), 1 <= i, 0 <= k <= degree. Zero for every matrix built by embed.
inline Index block_structure_violations(const CarlemanMatrix& m) {
  Index bad = 0;
  for (Index r = 0; r < m.A.outerSize(); ++r) {
    const int bi = m.block_of(r);
    for (SparseMatrix::InnerIterator it(m.A, r); it; ++it) {
      const int bj = m.block_of(it.col());
      const int k = bj - bi + 1;
      if (bi < 1 || k < 0 || k > m.degree) ++bad;
    }
  }
  return bad;
}

inline CarlemanMatrix embed(const PolyField& f, int order, Index budget = kDefaultCarlemanBudget) {
  if (order < 1) throw InvalidInput("Carleman order must be at least 1");
  const auto dim = carleman_dimension(f.n, order);
  if (!dim || *dim > static_cast<std::uint64_t>(budget))
    throw CapacityError("Carleman dimension exceeds budget", dim.value_or(std::numeric_limits<std::uint64_t>::max()),
                        static_cast<std::uint64_t>(budget));

  CarlemanMatrix m;
  m.order = order;
  m.n = f.n;
  m.degree = f.degree;
  m.offsets.assign(static_cast<std::size_t>(order) + 2, 0);
  m.offsets[1] = 1;
  for (int j = 1; j <= order; ++j) m.offsets[static_cast<std::size_t>(j) + 1] = m.offsets[static_cast<std::size_t>(j)] + checked_pow(f.n, j);
  const Index n = f.n;

  std::vector<Triplet> trips;
  for (int i = 1; i <= order; ++i) {
    for (int k = 0; k <= f.degree && k < static_cast<int>(f.terms.size()); ++k) {
      const int j = i + k - 1;
      if (j > order) continue;
      const auto& F = f.term(k);
      const Index nk = checked_pow(n, k);
      for (int p = 1; p <= i; ++p) {
        const Index left = checked_pow(n, p - 1);
        const Index right = checked_pow(n, i - p);
        for (Index r = 0; r < F.outerSize(); ++r)
          for (SparseMatrix::InnerIterator it(F, r); it; ++it)
            for (Index a = 0; a < left; ++a)
              for (Index b = 0; b < right; ++b) {
                const Index row = m.offsets[static_cast<std::size_t>(i)] + (a * n + it.row()) * right + b;
                const Index col = m.offsets[static_cast<std::size_t>(j)] + (a * nk + it.col()) * right + b;
                trips.emplace_back(row, col, it.value());
              }
      }
    }
  }
  m.A.resize(m.dimension(), m.dimension());
  m.A.setFromTriplets(trips.begin(), trips.end());
  m.A.prune(0.0);
  m.A.makeCompressed();
  if (const Index bad = block_structure_violations(m); bad != 0)
    throw std::logic_error("Carleman assembly produced " + std::to_string(bad) + " entries outside admissible blocks");
  return m;
}

struct InitialState {
  Eigen::VectorXd y;
  double norm = 0.0;
  Index nonzeros = 0;
};

/// (1, d, d^(x)2, ..., d^(x)N) with d = theta0 - anchor.
inline InitialState initial_state(const Eigen::VectorXd& theta0, const Eigen::VectorXd& anchor, int order) {
  if (theta0.size() != anchor.size()) throw InvalidInput("initial point and anchor differ in length");
  if (order < 1) throw InvalidInput("Carleman order must be at least 1");
  const Eigen::VectorXd delta = theta0 - anchor;
  const auto dim = carleman_dimension(delta.size(), order);
  if (!dim || *dim > static_cast<std::uint64_t>(kDefaultCarlemanBudget))
    throw CapacityError("Carleman dimension exceeds budget", dim.value_or(0), kDefaultCarlemanBudget);
  InitialState s;
  s.y.resize(static_cast<Index>(*dim));
  Index pos = 0;
  for (int j = 0; j <= order; ++j) {
    const Eigen::VectorXd block = kron_power(delta, j);
    s.y.segment(pos, block.size()) = block;
    pos += block.size();
  }
  s.norm = s.y.norm();
  s.nonzeros = static_cast<Index>((s.y.array() != 0.0).count());
  return s;
}

class GlobalSystem {
 public:
  GlobalSystem(const CarlemanMatrix& m, Eigen::VectorXd y0, Index steps) : steps_(steps), y0_(std::move(y0)) {
    if (steps < 0) throw InvalidInput("step count must be non-negative");
    if (y0_.size() != m.dimension()) throw InvalidInput("initial state does not match Carleman dimension");
    SparseMatrix id(m.dimension(), m.dimension());
    id.setIdentity();
    step_ = id + m.A;
    finish();
  }

  /// System driven directly by a step operator S (no Carleman layout implied).
  static GlobalSystem from_step_operator(SparseMatrix step, Eigen::VectorXd y0, Index steps) {
    if (steps < 0) throw InvalidInput("step count must be non-negative");
    if (step.rows() != step.cols() || step.rows() != y0.size()) throw InvalidInput("step operator and state disagree");
    GlobalSystem g;
    g.steps_ = steps;
    g.y0_ = std::move(y0);
    g.step_ = std::move(step);
    g.finish();
    return g;
  }

  /// The same recursion with the stationary constant block (index 0) moved to
  /// the right-hand side: y'_{t+1} = S' y'_t + c with c = S[1:, 0]. The state
  /// trajectory is unchanged; only the matrix to invert loses the unit mode.
  GlobalSystem without_constant_block() const {
    const Index D = block_dimension();
    if (D < 2) throw InvalidInput("no dynamic block to keep");
    SparseMatrix reduced = step_.bottomRightCorner(D - 1, D - 1);
    return from_step_operator(std::move(reduced), y0_.tail(D - 1), steps_);
  }

  Index steps() const { return steps_; }
  Index block_dimension() const { return y0_.size(); }
  Index dimension() const { return (steps_ + 1) * block_dimension(); }
  const SparseMatrix& step_operator() const { return step_; }
  const Eigen::VectorXd& initial() const { return y0_; }

  // (T+1)*D unit diagonal entries plus T copies of -S.
  Index nonzeros() const { return dimension() + steps_ * step_.nonZeros(); }

  Eigen::VectorXd rhs() const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dimension());
    b.head(block_dimension()) = y0_;
    return b;
  }

  SparseMatrix assemble() const {
    const Index D = block_dimension();
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(nonzeros()));
    for (Index i = 0; i < dimension(); ++i) trips.emplace_back(i, i, 1.0);
    for (Index t = 1; t <= steps_; ++t)
      for (Index r = 0; r < step_.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(step_, r); it; ++it)
          trips.emplace_back(t * D + r, (t - 1) * D + it.col(), -it.value());
    SparseMatrix L(dimension(), dimension());
    L.setFromTriplets(trips.begin(), trips.end());
    L.makeCompressed();
    return L;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& z) const {
    const Index D = block_dimension();
    Eigen::VectorXd out = z;
    for (Index t = 1; t <= steps_; ++t) out.segment(t * D, D) -= step_ * z.segment((t - 1) * D, D);
    return out;
  }

  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& w) const {
    const Index D = block_dimension();
    Eigen::VectorXd out = w;
    for (Index t = 0; t < steps_; ++t) out.segment(t * D, D) -= step_t_ * w.segment((t + 1) * D, D);
    return out;
  }

  // Block forward substitution for L z = r.
  Eigen::VectorXd solve(const Eigen::VectorXd& r) const {
    const Index D = block_dimension();
    Eigen::VectorXd z(dimension());
    z.head(D) = r.head(D);
    for (Index t = 1; t <= steps_; ++t) z.segment(t * D, D) = r.segment(t * D, D) + step_ * z.segment((t - 1) * D, D);
    return z;
  }

  // Block backward substitution for L^T w = r.
  Eigen::VectorXd solve_transpose(const Eigen::VectorXd& r) const {
    const Index D = block_dimension();
    Eigen::VectorXd w(dimension());
    w.segment(steps_ * D, D) = r.segment(steps_ * D, D);
    for (Index t = steps_; t-- > 0;) w.segment(t * D, D) = r.segment(t * D, D) + step_t_ * w.segment((t + 1) * D, D);
    return w;
  }

 private:
  GlobalSystem() = default;

  void finish() {
    step_.makeCompressed();
    step_t_ = step_.transpose();
    step_t_.makeCompressed();
  }

  Index steps_ = 0;
  Eigen::VectorXd y0_;
  SparseMatrix step_;
  SparseMatrix step_t_;
};

inline GlobalSystem build_global(const CarlemanMatrix& m, const Eigen::VectorXd& y0, Index steps) {
  return GlobalSystem(m, y0, steps);
}

/// Solves L z = b by block forward substitution; returns y_0..y_T.
/// Since b vanishes below the first block this is y_t = S y_{t-1}.
inline std::vector<Eigen::VectorXd> solve(const GlobalSystem& g) {
  std::vector<Eigen::VectorXd> ys;
  ys.reserve(static_cast<std::size_t>(g.steps() + 1));
  ys.push_back(g.initial());
  for (Index t = 1; t <= g.steps(); ++t) {
    Eigen::VectorXd next = g.step_operator() * ys.back();
    if (!next.allFinite()) throw Divergence("Carleman state became non-finite", t);
    ys.push_back(std::move(next));
  }
  return ys;
}

struct ReadoutResult {
  Eigen::VectorXd params;  // anchor + estimated order-1 block (field coordinates)
  double l2_error = 0.0;   // against the exact order-1 block
  double linf_error = 0.0;
  std::optional<std::uint64_t> shots;
};

/// Recovers theta from a Carleman state. With `shots`, the order-1 amplitudes
/// are estimated from a multinomial sample of the normalized state |y_i|^2/|y|^2;
/// signs are taken from the exact state.
inline ReadoutResult readout(const Eigen::VectorXd& y, const Eigen::VectorXd& anchor,
                             std::optional<std::uint64_t> shots = std::nullopt, std::uint64_t seed = 0) {
  const Index n = anchor.size();
  if (y.size() < n + 1) throw InvalidInput("state is shorter than the order-1 block");
  const double norm = y.norm();
  if (!(norm > 0.0)) throw DegenerateState("state has zero norm");
  ReadoutResult res;
  res.shots = shots;
  const Eigen::VectorXd exact = y.segment(1, n);
  if (!shots) {
    res.params = anchor + exact;
    return res;
  }
  if (*shots == 0) throw InvalidInput("shot count must be positive");
  std::mt19937_64 rng(seed);
  std::uint64_t remaining = *shots;
  double mass_left = 1.0;
  Eigen::VectorXd est = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < y.size() && remaining > 0; ++i) {
    const double p = (y[i] / norm) * (y[i] / norm);
    const double q = mass_left > 0.0 ? std::clamp(p / mass_left, 0.0, 1.0) : 1.0;
    std::binomial_distribution<std::uint64_t> draw(remaining, q);
    const std::uint64_t c = i + 1 == y.size() ? remaining : draw(rng);
    remaining -= c;
    mass_left -= p;
    if (i >= 1 && i <= n) {
      const double mag = norm * std::sqrt(static_cast<double>(c) / static_cast<double>(*shots));
      est[i - 1] = y[i] < 0.0 ? -mag : mag;
    }
  }
  res.params = anchor + est;
  res.l2_error = (est - exact).norm();
  res.linf_error = (est - exact).cwiseAbs().maxCoeff();
  return res;
}

enum class KappaMethod { dense_svd, power_iteration };

inline std::string to_string(KappaMethod m) { return m == KappaMethod::dense_svd ? "dense_svd" : "power_iteration"; }

inline KappaMethod parse_kappa_method(const std::string& s) {
  if (s == "dense_svd") return KappaMethod::dense_svd;
  if (s == "power_iteration") return KappaMethod::power_iteration;
  throw InvalidInput("unknown condition-number method '" + s + "'");
}

struct KappaEstimate {
  double kappa = 1.0;
  bool constant_block_eliminated = true;
  double sigma_max = 1.0;
  double sigma_min = 1.0;
  KappaMethod method = KappaMethod::dense_svd;
  Index iterations = 0;
};

struct KappaOptions {
  Index dense_limit = 4096;
  Index max_iterations = 20000;
  double tolerance = 1e-12;
  std::uint64_t seed = 7;
  double singular_ratio = 1e-14;
  // Measure the inhomogeneous form (constant block folded into the
  // right-hand side). Keeping the block adds a multiplier-1 mode that makes
  // kappa grow linearly in T for every system.
  bool eliminate_constant_block = true;
};

namespace detail {

template <class Op>
std::pair<double, Index> power_rayleigh(const GlobalSystem& g, Op&& op, const KappaOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(g.dimension());
  for (Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  x.normalize();
  double prev = 0.0, rq = 0.0;
  Index it = 0;
  for (; it < opt.max_iterations; ++it) {
    Eigen::VectorXd y = op(x);
    const double ny = y.norm();
    if (!std::isfinite(ny) || ny == 0.0) throw Divergence("power iteration lost finiteness", it);
    x = y / ny;
    rq = g.apply(x).squaredNorm();
    if (it > 2 && std::abs(rq - prev) <= opt.tolerance * rq) break;
    prev = rq;
  }
  return {rq, it + 1};
}

}  // namespace detail

/// kappa(L) = sigma_max / sigma_min of the block-bidiagonal matrix, by
/// default with the constant block folded into the right-hand side.
/// power_iteration runs power and inverse iteration on L^T L, using block
/// substitution for the inverse.
inline KappaEstimate condition_number(const GlobalSystem& full, KappaMethod method, const KappaOptions& opt = {}) {
  KappaEstimate est;
  est.method = method;
  est.constant_block_eliminated = opt.eliminate_constant_block && full.block_dimension() > 1;
  const GlobalSystem g = est.constant_block_eliminated ? full.without_constant_block() : full;
  if (method == KappaMethod::dense_svd) {
    if (g.dimension() > opt.dense_limit)
      throw InvalidInput("dense SVD needs (T+1)*D <= " + std::to_string(opt.dense_limit) + ", got " +
                         std::to_string(g.dimension()));
    const Eigen::MatrixXd L = Eigen::MatrixXd(g.assemble());
    Eigen::BDCSVD<Eigen::MatrixXd> svd(L);
    const auto& sv = svd.singularValues();
    est.sigma_max = sv.maxCoeff();
    est.sigma_min = sv.minCoeff();
  } else {
    auto [top, it1] = detail::power_rayleigh(g, [&](const Eigen::VectorXd& x) { return g.apply_transpose(g.apply(x)); }, opt);
    auto [bottom, it2] =
        detail::power_rayleigh(g, [&](const Eigen::VectorXd& x) { return g.solve(g.solve_transpose(x)); }, opt);
    est.sigma_max = std::sqrt(top);
    est.sigma_min = std::sqrt(bottom);
    est.iterations = it1 + it2;
  }
  if (!(est.sigma_min >= opt.singular_ratio * est.sigma_max)) throw SingularSystem(est.sigma_min, est.sigma_max);
  est.kappa = est.sigma_max / est.sigma_min;
  return est;
}

/// Matrix Market coordinate format (1-based indices).
inline void write_matrix_market(std::ostream& out, const SparseMatrix& m) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  for (Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << format_double(it.value()) << '\n';
}

}  // namespace qcarleman
