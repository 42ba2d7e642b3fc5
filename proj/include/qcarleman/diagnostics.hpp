#pragma once

// Hessian spectra, the spectrum-weighted linearization error proxy,
// dissipativity classification and indicative quantum cost estimates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "qcarleman/errors.hpp"
#include "qcarleman/io.hpp"
#include "qcarleman/net.hpp"
#include "qcarleman/polyfield.hpp"

namespace qcarleman {

/// Eigenvalue measure. Exact spectra carry n eigenvalues of weight 1/n;
/// estimated spectra carry quadrature nodes with weights summing to 1.
struct Spectrum {
  std::vector<double> values;
  std::vector<double> weights;
  Index n = 0;
  bool exact = true;
  std::string method = "direct";

  static Spectrum from_eigenvalues(std::vector<double> ev, std::string method = "direct") {
    Spectrum s;
    s.n = static_cast<Index>(ev.size());
    s.weights.assign(ev.size(), ev.empty() ? 0.0 : 1.0 / static_cast<double>(ev.size()));
    s.values = std::move(ev);
    s.method = std::move(method);
    return s;
  }
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<double> mass;   // probability per bin, sums to 1

  std::size_t bins() const { return mass.size(); }
  double width(std::size_t b) const { return edges[b + 1] - edges[b]; }
  double density(std::size_t b) const { return mass[b] / width(b); }
};

inline Histogram histogram(const Spectrum& s, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw InvalidInput("histogram needs bins > 0 and hi > lo");
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  h.mass.assign(bins, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double x = std::clamp(s.values[i], lo, hi);
    auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    h.mass[b] += s.weights[i];
    total += s.weights[i];
  }
  if (total > 0.0)
    for (auto& m : h.mass) m /= total;
  return h;
}

/// Histogram over [min, max] of the values, padded so a single point still gets a bin.
inline Histogram histogram(const Spectrum& s, std::size_t bins) {
  if (s.values.empty()) throw InvalidInput("empty spectrum");
  auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  const double pad = std::max(1e-12, 1e-9 * std::max(std::abs(*lo), std::abs(*hi)));
  return histogram(s, bins, *lo - pad, *hi + pad);
}

inline double histogram_l1(const Histogram& a, const Histogram& b) {
  if (a.edges != b.edges) throw InvalidInput("histograms use different bins");
  double d = 0.0;
  for (std::size_t i = 0; i < a.bins(); ++i) d += std::abs(a.mass[i] - b.mass[i]);
  return d;
}

struct LanczosOptions {
  Index steps = 80;
  Index probes = 16;
  std::uint64_t seed = 0;
  bool orthogonal_probes = true;
};

/// Stochastic Lanczos quadrature for a symmetric operator given by `matvec`.
/// Lanczos runs from each probe with full reorthogonalization and stops
/// early on an invariant subspace.
inline Spectrum stochastic_lanczos(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& matvec, Index n,
                                   const LanczosOptions& opt) {
  if (n <= 0 || opt.steps <= 0 || opt.probes <= 0) throw InvalidInput("Lanczos needs positive n, steps and probes");
  Spectrum out;
  out.n = n;
  out.exact = false;
  out.method = "lanczos";
  // Rademacher probes, orthonormalized in blocks of at most n. Orthogonal
  // probes keep the estimator unbiased and lower its variance; with
  // probes >= n and steps >= n the quadrature is exact.
  Eigen::MatrixXd probes(n, opt.probes);
  for (Index p = 0; p < opt.probes; ++p) {
    std::mt19937_64 rng(opt.seed + static_cast<std::uint64_t>(p));
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < n; ++i) probes(i, p) = coin(rng) ? 1.0 : -1.0;
  }
  if (opt.orthogonal_probes) {
    for (Index start = 0; start < opt.probes; start += n) {
      const Index cols = std::min(n, opt.probes - start);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(probes.middleCols(start, cols));
      probes.middleCols(start, cols) = qr.householderQ() * Eigen::MatrixXd::Identity(n, cols);
    }
  } else {
    probes /= std::sqrt(static_cast<double>(n));
  }
  for (Index p = 0; p < opt.probes; ++p) {
    const Eigen::VectorXd v = probes.col(p);

    const Index kmax = std::min(opt.steps, n);
    Eigen::MatrixXd Q(n, kmax);
    std::vector<double> alpha, beta;
    Q.col(0) = v;
    double scale = 0.0;
    for (Index j = 0; j < kmax; ++j) {
      Eigen::VectorXd w = matvec(Q.col(j));
      if (!w.allFinite()) throw NumericOverflow("non-finite Hessian-vector product in Lanczos");
      const double a = Q.col(j).dot(w);
      alpha.push_back(a);
      scale = std::max(scale, std::abs(a));
      for (int pass = 0; pass < 2; ++pass) w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
      const double b = w.norm();
      if (j + 1 == kmax || b <= 1e-10 * std::max(scale, 1.0)) break;
      beta.push_back(b);
      scale = std::max(scale, b);
      Q.col(j + 1) = w / b;
    }
    const Index m = static_cast<Index>(alpha.size());
    Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
      tri(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m) tri(i, i + 1) = tri(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri);
    for (Index i = 0; i < m; ++i) {
      out.values.push_back(es.eigenvalues()[i]);
      const double c = es.eigenvectors()(0, i);
      out.weights.push_back(c * c / static_cast<double>(opt.probes));
    }
  }
  return out;
}

inline Spectrum spectrum_of_matrix(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return Spectrum::from_eigenvalues(std::vector<double>(ev.data(), ev.data() + ev.size()), "direct");
}

enum class SpectrumMethod { direct, lanczos };

/// Hessian spectrum at `params`. A masked parameter vector restricts the
/// Hessian to its trainable coordinates.
inline Spectrum spectrum(const ModelSpec& spec, const ParamVector& params, const Dataset& data, SpectrumMethod method,
                         const LanczosOptions& lanczos = {}, Index dense_limit = kDefaultDenseLimit) {
  detail::check_inputs(spec, params, data);
  const std::vector<Index> coords = params.active_indices();
  const Index n = static_cast<Index>(coords.size());
  Eigen::VectorXd x0(n);
  for (Index a = 0; a < n; ++a) x0[a] = params.values[coords[static_cast<std::size_t>(a)]];
  const detail::RestrictedGrad g{spec, data, params.values, coords};
  auto matvec = [&](const Eigen::VectorXd& v) { return directional_d1(g, x0, v); };
  if (method == SpectrumMethod::direct) {
    if (n > dense_limit) throw InvalidInput("direct spectrum needs n <= " + std::to_string(dense_limit));
    Eigen::MatrixXd h(n, n);
    for (Index j = 0; j < n; ++j) h.col(j) = matvec(Eigen::VectorXd::Unit(n, j));
    if (!h.allFinite()) throw NumericOverflow("non-finite Hessian");
    return spectrum_of_matrix(0.5 * (h + h.transpose()));
  }
  return stochastic_lanczos(matvec, n, lanczos);
}

struct ProxyOptions {
  double threshold = 0.4;
  bool eta_scaled = true;  // a = -eta*lambda; false uses a = -lambda
};

/// E(t) = sum_{|a_i| >= thr} w_i |1 + a_i|^t / sum_{|a_i| >= thr} w_i.
/// For exact spectra every eigenvalue counts once, so the normalizer is the
/// number of eigenvalues beyond the threshold and E(0) = 1.
inline std::vector<double> error_proxy(const Spectrum& s, double eta, const std::vector<Index>& times,
                                       const ProxyOptions& opt = {}) {
  if (times.empty()) throw InvalidInput("error proxy needs at least one time");
  const double scale = opt.eta_scaled ? eta : 1.0;
  std::vector<double> base, weight;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double a = -scale * s.values[i];
    if (std::abs(a) >= opt.threshold) {
      base.push_back(std::abs(1.0 + a));
      weight.push_back(s.exact ? 1.0 : s.weights[i]);
    }
  }
  if (base.empty())
    throw EmptySupport("no eigenvalue with |a| >= " + format_double(opt.threshold) + "; error proxy undefined");
  double norm = 0.0;
  for (double w : weight) norm += w;
  std::vector<double> out;
  out.reserve(times.size());
  for (Index t : times) {
    if (t < 0) throw InvalidInput("proxy time must be non-negative");
    double acc = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) acc += weight[i] * std::pow(base[i], static_cast<double>(t));
    out.push_back(acc / norm);
  }
  return out;
}

enum class Dissipativity { fully, almost, non };

inline std::string to_string(Dissipativity d) {
  switch (d) {
    case Dissipativity::fully: return "fully";
    case Dissipativity::almost: return "almost";
    case Dissipativity::non: return "non";
  }
  return "?";
}

/// Operational classification; the formal definitions are not reproduced here.
struct DissipationReport {
  std::vector<double> multipliers;  // 1 - eta*lambda_i
  double fraction_convergent = 0.0;
  double fraction_nonconvergent = 0.0;
  double fraction_growing = 0.0;  // |mu| > 1
  Dissipativity classification = Dissipativity::non;
  double delta = 1e-3;
  double zeta = 0.05;
  std::string definition = "operational: fully if all |1-eta*lambda| <= 1-delta, almost if the rest is <= zeta";
};

inline DissipationReport classify(const Spectrum& s, double eta, double delta = 1e-3, double zeta = 0.05) {
  if (!s.exact) throw InvalidInput("classification needs an exact spectrum");
  if (s.values.empty()) throw InvalidInput("empty spectrum");
  DissipationReport r;
  r.delta = delta;
  r.zeta = zeta;
  Index conv = 0, growing = 0;
  for (double lam : s.values) {
    const double mu = 1.0 - eta * lam;
    r.multipliers.push_back(mu);
    if (std::abs(mu) <= 1.0 - delta) ++conv;
    if (std::abs(mu) > 1.0) ++growing;
  }
  const double n = static_cast<double>(s.values.size());
  r.fraction_convergent = static_cast<double>(conv) / n;
  r.fraction_nonconvergent = static_cast<double>(static_cast<Index>(s.values.size()) - conv) / n;
  r.fraction_growing = static_cast<double>(growing) / n;
  if (conv == static_cast<Index>(s.values.size()))
    r.classification = Dissipativity::fully;
  else if (r.fraction_nonconvergent <= zeta)
    r.classification = Dissipativity::almost;
  else
    r.classification = Dissipativity::non;
  return r;
}

/// Indicative query count: T^p * s * kappa * log2(n)^3 / eps with p = 1
/// (fully dissipative) or p = 2 (almost). Constants are not tight.
inline double cost_estimate(double n, double steps, double s, double kappa, double eps, Dissipativity regime) {
  if (!(n > 0 && steps > 0 && s > 0 && kappa > 0 && eps > 0)) throw InvalidInput("cost estimate inputs must be positive");
  if (regime == Dissipativity::non) throw InvalidInput("no cost bound for non-dissipative dynamics");
  constexpr double kConstant = 1.0;
  constexpr double kLogPower = 3.0;
  const double tpow = regime == Dissipativity::fully ? steps : steps * steps;
  return kConstant * tpow * s * kappa * std::pow(std::log2(n), kLogPower) / eps;
}

enum class ErrorNorm { l2, linf, single_param };

inline std::vector<double> trajectory_error(const std::vector<Eigen::VectorXd>& approx,
                                            const std::vector<Eigen::VectorXd>& exact, ErrorNorm mode,
                                            Index index = 0) {
  if (approx.size() != exact.size())
    throw InvalidInput("trajectories differ in length (" + std::to_string(approx.size()) + " vs " +
                       std::to_string(exact.size()) + ")");
  std::vector<double> out;
  out.reserve(approx.size());
  for (std::size_t t = 0; t < approx.size(); ++t) {
    if (approx[t].size() != exact[t].size()) throw InvalidInput("trajectory states differ in dimension");
    const Eigen::VectorXd d = approx[t] - exact[t];
    switch (mode) {
      case ErrorNorm::l2: out.push_back(d.norm()); break;
      case ErrorNorm::linf: out.push_back(d.size() ? d.cwiseAbs().maxCoeff() : 0.0); break;
      case ErrorNorm::single_param:
        if (index < 0 || index >= d.size()) throw InvalidInput("parameter index out of range");
        out.push_back(std::abs(d[index]));
        break;
    }
  }
  return out;
}

/// Least-squares slope of log(err) against log(t) over t in [first, last]
/// with err > 0 and t >= 1. NaN if fewer than two usable points.
inline double loglog_slope(const std::vector<double>& err, Index first, Index last) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  Index m = 0;
  for (Index t = std::max<Index>(first, 1); t <= last && t < static_cast<Index>(err.size()); ++t) {
    const double e = err[static_cast<std::size_t>(t)];
    if (!(e > 0.0) || !std::isfinite(e)) continue;
    const double x = std::log(static_cast<double>(t));
    const double y = std::log(e);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  const double md = static_cast<double>(m);
  const double den = md * sxx - sx * sx;
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (md * sxy - sx * sy) / den;
}

inline void write_eigenvalues_csv(const std::string& path, const Spectrum& s) {
  CsvWriter w(path, {"index", "eigenvalue"});
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    w.cell(static_cast<long>(i)).cell(s.values[i]);
    w.row_end();
  }
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
  CsvWriter w(path, {"bin_left", "bin_right", "density"});
  for (std::size_t b = 0; b < h.bins(); ++b) {
    w.cell(h.edges[b]).cell(h.edges[b + 1]).cell(h.density(b));
    w.row_end();
  }
}

/// Reads either spectrum schema: (index, eigenvalue) gives an exact spectrum,
/// (bin_left, bin_right, density) gives bin centres weighted by mass.
inline Spectrum read_spectrum_csv(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::string_view> lines;
  {
    std::string_view all(text);
    std::size_t pos = 0;
    while (pos <= all.size()) {
      auto nl = all.find('\n', pos);
      if (nl == std::string_view::npos) nl = all.size();
      auto line = detail::trim(all.substr(pos, nl - pos));
      if (!line.empty()) lines.push_back(line);
      pos = nl + 1;
    }
  }
  if (lines.empty()) throw ParseError("empty spectrum file", 0);
  const auto header = detail::split(lines[0], ',');
  std::vector<double> ev;
  Spectrum s;
  if (header.size() == 2 && header[1] == "eigenvalue") {
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = detail::split(lines[i], ',');
      const auto v = f.size() == 2 ? detail::parse_double(f[1]) : std::nullopt;
      if (!v) throw ParseError("expected index,eigenvalue", i + 1);
      ev.push_back(*v);
    }
    return Spectrum::from_eigenvalues(std::move(ev), "file");
  }
  if (header.size() == 3 && header[0] == "bin_left" && header[2] == "density") {
    s.exact = false;
    s.method = "histogram";
    double total = 0.0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = detail::split(lines[i], ',');
      if (f.size() != 3) throw ParseError("expected bin_left,bin_right,density", i + 1);
      const auto l = detail::parse_double(f[0]), r = detail::parse_double(f[1]), d = detail::parse_double(f[2]);
      if (!l || !r || !d) throw ParseError("non-numeric histogram entry", i + 1);
      s.values.push_back(0.5 * (*l + *r));
      s.weights.push_back(*d * (*r - *l));
      total += s.weights.back();
    }
    if (total > 0.0)
      for (auto& w : s.weights) w /= total;
    s.n = static_cast<Index>(s.values.size());
    return s;
  }
  throw ParseError("unrecognized spectrum header", 1);
}

}  // namespace qcarleman
