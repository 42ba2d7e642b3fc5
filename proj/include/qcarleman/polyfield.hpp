#pragma once

// The gradient-descent update field f(theta) = -eta * grad L(theta), written
// as a sum of Kronecker-power terms around an anchor point:
//
//   f(anchor + delta) = F0 + F1 delta + F2 (delta x delta) + F3 (delta x delta x delta)
//
// F_k is an n x n^k sparse matrix. A multi-index (j1, ..., jk) maps to column
// j1*n^(k-1) + ... + jk, i.e. the first Kronecker factor is most significant.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "qcarleman/errors.hpp"
#include "qcarleman/io.hpp"
#include "qcarleman/net.hpp"

namespace qcarleman {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;
using Triplet = Eigen::Triplet<double, std::int64_t>;

/// n^k, or an error when it does not fit a signed 64-bit index.
inline Index checked_pow(Index n, int k) {
  Index r = 1;
  for (int i = 0; i < k; ++i) {
    if (n != 0 && r > std::numeric_limits<Index>::max() / n)
      throw CapacityError("index space n^k overflows", std::numeric_limits<std::uint64_t>::max(),
                          static_cast<std::uint64_t>(std::numeric_limits<Index>::max()));
    r *= n;
  }
  return r;
}

/// Digits of `col` in base n, most significant first.
inline std::vector<Index> decode_multi_index(Index col, Index n, int k) {
  std::vector<Index> idx(static_cast<std::size_t>(k));
  for (int p = k - 1; p >= 0; --p) {
    idx[static_cast<std::size_t>(p)] = col % n;
    col /= n;
  }
  return idx;
}

inline Index encode_multi_index(const std::vector<Index>& idx, Index n) {
  Index c = 0;
  for (Index j : idx) c = c * n + j;
  return c;
}

/// v^{(x)k}; k = 0 gives the scalar 1.
inline Eigen::VectorXd kron_power(const Eigen::VectorXd& v, int k) {
  Eigen::VectorXd out = Eigen::VectorXd::Ones(1);
  for (int p = 0; p < k; ++p) {
    Eigen::VectorXd next(out.size() * v.size());
    for (Index a = 0; a < out.size(); ++a) next.segment(a * v.size(), v.size()) = out[a] * v;
    out = std::move(next);
  }
  return out;
}

enum class ExtractionMode { exact, taylor };

struct PolyField {
  Index n = 0;
  int degree = 1;
  double eta = 0.0;
  Eigen::VectorXd anchor;            // in field coordinates
  std::vector<Index> coordinates;    // positions in the full parameter vector; empty = all
  std::vector<SparseMatrix> terms;   // terms[k] is n x n^k
  bool exact = true;                 // false: model error from truncating the Taylor series

  const SparseMatrix& term(int k) const { return terms.at(static_cast<std::size_t>(k)); }

  Index nonzeros() const {
    Index nnz = 0;
    for (const auto& t : terms) nnz += t.nonZeros();
    return nnz;
  }

  Index full_index(Index i) const { return coordinates.empty() ? i : coordinates[static_cast<std::size_t>(i)]; }
};

namespace detail {

// Gradient restricted to a subset of coordinates; the remaining entries are
// frozen at their values in `base`.
struct RestrictedGrad {
  const ModelSpec& spec;
  const Dataset& data;
  const Eigen::VectorXd& base;
  const std::vector<Index>& coords;

  template <class T>
  std::vector<T> operator()(const std::vector<T>& x) const {
    std::vector<T> full(static_cast<std::size_t>(base.size()));
    for (Index i = 0; i < base.size(); ++i) full[static_cast<std::size_t>(i)] = T(base[i]);
    for (std::size_t a = 0; a < coords.size(); ++a) full[static_cast<std::size_t>(coords[a])] = x[a];
    const auto g = gradient<T>(spec, std::span<const T>(full), data);
    std::vector<T> out(coords.size());
    for (std::size_t a = 0; a < coords.size(); ++a) out[a] = g[static_cast<std::size_t>(coords[a])];
    return out;
  }
};

inline SparseMatrix from_triplets(Index rows, Index cols, const std::vector<Triplet>& trips) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

}  // namespace detail

/// Extracts the update field of `spec` on `data` around `anchor`.
///
/// If `anchor` carries a mask the field lives on the trainable coordinates only
/// (masked entries stay frozen at zero). Derivative tensors come from nested
/// forward-mode duals, so every term is exact at the anchor; in taylor mode
/// the omitted higher-order terms are flagged via `exact = false`.
inline PolyField from_model(const ModelSpec& spec, const Dataset& data, const ParamVector& anchor, int degree,
                            double eta, ExtractionMode mode = ExtractionMode::exact) {
  detail::check_inputs(spec, anchor, data);
  if (degree < 1 || degree > 3) throw InvalidInput("field degree must be 1, 2 or 3");
  if (!(eta > 0.0)) throw InvalidInput("learning rate must be positive");
  const int gdeg = spec.gradient_degree();
  if (mode == ExtractionMode::exact && gdeg > degree) throw DegreeMismatch(gdeg, degree);

  PolyField f;
  f.degree = degree;
  f.eta = eta;
  f.exact = gdeg <= degree;
  f.coordinates = anchor.active_indices();
  if (!anchor.mask) f.coordinates.clear();
  std::vector<Index> coords = anchor.active_indices();
  const Index n = static_cast<Index>(coords.size());
  f.n = n;
  f.anchor.resize(n);
  for (Index a = 0; a < n; ++a) f.anchor[a] = anchor.values[coords[static_cast<std::size_t>(a)]];

  const detail::RestrictedGrad g{spec, data, anchor.values, coords};
  const Eigen::VectorXd& x0 = f.anchor;
  auto unit = [n](Index j) { return Eigen::VectorXd::Unit(n, j); };

  // F0
  {
    const std::vector<double> x(x0.data(), x0.data() + n);
    const auto g0 = g(x);
    std::vector<Triplet> trips;
    for (Index i = 0; i < n; ++i) {
      const double v = -eta * g0[static_cast<std::size_t>(i)];
      if (!std::isfinite(v)) throw NumericOverflow("non-finite gradient at anchor");
      if (v != 0.0) trips.emplace_back(i, 0, v);
    }
    f.terms.push_back(detail::from_triplets(n, 1, trips));
  }
  // F1 = -eta H, symmetrized
  {
    Eigen::MatrixXd h(n, n);
    for (Index j = 0; j < n; ++j) h.col(j) = directional_d1(g, x0, unit(j));
    h = 0.5 * (h + h.transpose());
    std::vector<Triplet> trips;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (h(i, j) != 0.0) trips.emplace_back(i, j, -eta * h(i, j));
    f.terms.push_back(detail::from_triplets(n, n, trips));
  }
  if (degree >= 2) {
    const Index cols = checked_pow(n, 2);
    std::vector<Triplet> trips;
    for (Index j = 0; j < n; ++j)
      for (Index k = j; k < n; ++k) {
        const Eigen::VectorXd t = directional_d2(g, x0, unit(j), unit(k));
        for (Index i = 0; i < n; ++i) {
          if (t[i] == 0.0) continue;
          const double v = -0.5 * eta * t[i];
          trips.emplace_back(i, j * n + k, v);
          if (k != j) trips.emplace_back(i, k * n + j, v);
        }
      }
    f.terms.push_back(detail::from_triplets(n, cols, trips));
  }
  if (degree >= 3) {
    const Index cols = checked_pow(n, 3);
    std::vector<Triplet> trips;
    for (Index j = 0; j < n; ++j)
      for (Index k = j; k < n; ++k)
        for (Index l = k; l < n; ++l) {
          const Eigen::VectorXd t = directional_d3(g, x0, unit(j), unit(k), unit(l));
          std::array<Index, 3> idx{j, k, l};
          for (Index i = 0; i < n; ++i) {
            if (t[i] == 0.0) continue;
            const double v = -eta * t[i] / 6.0;
            std::array<Index, 3> p = idx;
            do trips.emplace_back(i, (p[0] * n + p[1]) * n + p[2], v);
            while (std::next_permutation(p.begin(), p.end()));
          }
        }
    f.terms.push_back(detail::from_triplets(n, cols, trips));
  }
  for (const auto& t : f.terms)
    for (Index r = 0; r < t.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(t, r); it; ++it)
        if (!std::isfinite(it.value())) throw NumericOverflow("non-finite derivative tensor entry");
  return f;
}

/// Evaluates the field at theta (field coordinates, length n).
inline Eigen::VectorXd eval(const PolyField& f, const Eigen::VectorXd& theta) {
  if (theta.size() != f.n)
    throw InvalidInput("field has dimension " + std::to_string(f.n) + ", point has " + std::to_string(theta.size()));
  const Eigen::VectorXd delta = theta - f.anchor;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(f.n);
  for (int k = 0; k < static_cast<int>(f.terms.size()); ++k) out += f.term(k) * kron_power(delta, k);
  return out;
}

/// Averages every F_k (k >= 2) over all permutations of its input slots.
inline PolyField symmetrize(const PolyField& f) {
  PolyField out = f;
  for (int k = 2; k < static_cast<int>(f.terms.size()); ++k) {
    const auto& t = f.term(k);
    std::vector<int> perm(static_cast<std::size_t>(k));
    double count = 1.0;
    for (int i = 2; i <= k; ++i) count *= i;
    std::vector<Triplet> trips;
    for (Index r = 0; r < t.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(t, r); it; ++it) {
        const auto idx = decode_multi_index(it.col(), f.n, k);
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<Index> p(idx.size());
        do {
          for (std::size_t s = 0; s < p.size(); ++s) p[s] = idx[static_cast<std::size_t>(perm[s])];
          trips.emplace_back(it.row(), encode_multi_index(p, f.n), it.value() / count);
        } while (std::next_permutation(perm.begin(), perm.end()));
      }
    out.terms[static_cast<std::size_t>(k)] = detail::from_triplets(t.rows(), t.cols(), trips);
  }
  return out;
}

struct SparsityReport {
  Index max_row_nonzeros = 0;
  Index max_col_nonzeros = 0;
  Index nonzeros = 0;
  Index s() const { return std::max(max_row_nonzeros, max_col_nonzeros); }
};

/// Row and column nonzero counts over the terms F_1..F_d (the constant
/// term is a single column and is excluded).
inline SparsityReport sparsity(const PolyField& f) {
  SparsityReport rep;
  for (int k = 1; k < static_cast<int>(f.terms.size()); ++k) {
    const auto& t = f.term(k);
    std::vector<Index> col_counts(static_cast<std::size_t>(t.cols()), 0);
    for (Index r = 0; r < t.outerSize(); ++r) {
      Index row_count = 0;
      for (SparseMatrix::InnerIterator it(t, r); it; ++it) {
        if (it.value() == 0.0) continue;
        ++row_count;
        ++col_counts[static_cast<std::size_t>(it.col())];
      }
      rep.max_row_nonzeros = std::max(rep.max_row_nonzeros, row_count);
    }
    for (Index c : col_counts) rep.max_col_nonzeros = std::max(rep.max_col_nonzeros, c);
  }
  for (const auto& t : f.terms) rep.nonzeros += t.nonZeros();
  return rep;
}

struct SparsifyResult {
  PolyField field;
  Index s = 0;
  double dropped_fraction = 0.0;  // Frobenius norm of dropped entries over total
};

inline SparsifyResult sparsify(const PolyField& f, double threshold) {
  if (!(threshold >= 0.0)) throw InvalidInput("sparsify threshold must be non-negative");
  SparsifyResult res{f, 0, 0.0};
  double total = 0.0, dropped = 0.0;
  for (std::size_t k = 0; k < f.terms.size(); ++k) {
    const auto& t = f.terms[k];
    std::vector<Triplet> keep;
    for (Index r = 0; r < t.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(t, r); it; ++it) {
        const double v = it.value();
        total += v * v;
        if (std::abs(v) < threshold)
          dropped += v * v;
        else
          keep.emplace_back(it.row(), it.col(), v);
      }
    res.field.terms[k] = detail::from_triplets(t.rows(), t.cols(), keep);
  }
  res.dropped_fraction = total > 0.0 ? std::sqrt(dropped / total) : 0.0;
  res.s = sparsity(res.field).s();
  return res;
}

/// Coordinate-list text form:
///   # polyfield n=<n> degree=<d> eta=<eta> exact=<0|1>
///   # anchor <a_0> ... <a_{n-1}>
///   # coordinates <i_0> ...            (only for restricted fields)
///   <k> <i> <j_1> ... <j_k> <value>    (one line per stored entry)
inline void write_field(std::ostream& out, const PolyField& f) {
  out << "# polyfield n=" << f.n << " degree=" << f.degree << " eta=" << format_double(f.eta)
      << " exact=" << (f.exact ? 1 : 0) << '\n';
  out << "# anchor";
  for (Index i = 0; i < f.n; ++i) out << ' ' << format_double(f.anchor[i]);
  out << '\n';
  if (!f.coordinates.empty()) {
    out << "# coordinates";
    for (Index c : f.coordinates) out << ' ' << c;
    out << '\n';
  }
  for (int k = 0; k < static_cast<int>(f.terms.size()); ++k) {
    const auto& t = f.term(k);
    for (Index r = 0; r < t.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(t, r); it; ++it) {
        out << k << ' ' << it.row();
        for (Index j : decode_multi_index(it.col(), f.n, k)) out << ' ' << j;
        out << ' ' << format_double(it.value()) << '\n';
      }
  }
}

inline PolyField read_field(std::istream& in) {
  PolyField f;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<std::vector<Triplet>> trips;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, tag;
      ls >> hash >> tag;
      if (tag == "polyfield") {
        std::string kv;
        while (ls >> kv) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw ParseError("malformed header field '" + kv + "'", lineno);
          const auto key = kv.substr(0, eq);
          const auto val = kv.substr(eq + 1);
          if (key == "n") f.n = std::stoll(val);
          else if (key == "degree") f.degree = std::stoi(val);
          else if (key == "eta") f.eta = std::stod(val);
          else if (key == "exact") f.exact = val == "1";
        }
        if (f.degree < 1 || f.degree > 3 || f.n < 0) throw ParseError("invalid polyfield header", lineno);
        have_header = true;
        trips.assign(static_cast<std::size_t>(f.degree + 1), {});
        f.anchor = Eigen::VectorXd::Zero(f.n);
      } else if (tag == "anchor") {
        for (Index i = 0; i < f.n; ++i)
          if (!(ls >> f.anchor[i])) throw ParseError("anchor has fewer than n values", lineno);
      } else if (tag == "coordinates") {
        Index c = 0;
        while (ls >> c) f.coordinates.push_back(c);
      }
      continue;
    }
    if (!have_header) throw ParseError("entry before polyfield header", lineno);
    int k = 0;
    Index row = 0;
    if (!(ls >> k >> row) || k < 0 || k > f.degree || row < 0 || row >= f.n)
      throw ParseError("bad term or row index", lineno);
    std::vector<Index> idx(static_cast<std::size_t>(k));
    for (auto& j : idx)
      if (!(ls >> j) || j < 0 || j >= f.n) throw ParseError("bad multi-index", lineno);
    double v = 0.0;
    if (!(ls >> v)) throw ParseError("missing value", lineno);
    trips[static_cast<std::size_t>(k)].emplace_back(row, encode_multi_index(idx, f.n), v);
  }
  if (!have_header) throw ParseError("missing polyfield header", lineno);
  for (int k = 0; k <= f.degree; ++k)
    f.terms.push_back(detail::from_triplets(f.n, checked_pow(f.n, k), trips[static_cast<std::size_t>(k)]));
  return f;
}

}  // namespace qcarleman
