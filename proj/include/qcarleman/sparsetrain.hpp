#pragma once

// Dense pre-training, magnitude pruning and segmented Carleman training with
// periodic download / re-upload and optional classical refinement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcarleman/carleman.hpp"
#include "qcarleman/diagnostics.hpp"
#include "qcarleman/errors.hpp"
#include "qcarleman/io.hpp"
#include "qcarleman/net.hpp"
#include "qcarleman/polyfield.hpp"

namespace qcarleman {

struct Schedule {
  Index total_steps = 100;
  Index reupload_period = 100;
  Index refine_steps = 10;
  int order = 2;
  int field_degree = 2;
  double prune_fraction = 0.10;
  double eta = 0.05;

  Index segments() const { return (total_steps + reupload_period - 1) / reupload_period; }

  void validate() const {
    if (total_steps < 1) throw InvalidInput("total_steps must be at least 1");
    if (reupload_period < 1 || reupload_period > total_steps)
      throw InvalidInput("reupload_period must lie in [1, total_steps]");
    if (refine_steps < 0) throw InvalidInput("refine_steps must be non-negative");
    if (order < 1) throw InvalidInput("Carleman order must be at least 1");
    if (field_degree < 1 || field_degree > 3) throw InvalidInput("field degree must be 1, 2 or 3");
    if (!(prune_fraction > 0.0 && prune_fraction <= 1.0)) throw InvalidInput("prune_fraction must lie in (0, 1]");
    if (!(eta > 0.0)) throw InvalidInput("learning rate must be positive");
  }
};

enum class Phase { carleman, classical_refine };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::carleman: return "carleman";
    case Phase::classical_refine: return "classical_refine";
  }
  return "?";
}

struct StepRecord {
  Index step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double err_l2 = 0.0;
  double err_linf = 0.0;
  Index segment = 0;
  Phase phase = Phase::carleman;
};

struct SegmentRecord {
  Index segment = 0;
  Index start_step = 0;
  Index steps = 0;
  Index dimension = 0;  // Carleman dimension D
  Index upload_nonzeros = 0;
  double y0_norm = 0.0;
  Index field_nonzeros = 0;
  Index sparsity = 0;
  std::optional<KappaEstimate> kappa;
  double end_err_l2 = 0.0;
  double end_err_linf = 0.0;
};

struct PipelineReport {
  std::vector<StepRecord> steps;
  std::vector<SegmentRecord> segments;
  ParamVector final_params;
  Index trainable = 0;
  bool diverged = false;
  std::optional<Index> failure_step;
  std::string failure_message;
};

struct PipelineOptions {
  bool compute_kappa = true;
  KappaMethod kappa_method = KappaMethod::power_iteration;
  KappaOptions kappa;
  std::optional<std::uint64_t> shots;  // tomographic download at segment ends
  std::uint64_t tomography_seed = 0;
  double divergence_bound = 1e8;
  Index carleman_budget = kDefaultCarlemanBudget;
};

inline ParamVector pretrain(const ModelSpec& spec, const ParamVector& start, const Dataset& data, Index steps,
                            double eta, Index batch = 0, std::uint64_t seed = 0) {
  if (start.mask) throw InvalidInput("pretraining expects dense parameters");
  SgdOptions opt;
  opt.eta = eta;
  opt.steps = steps;
  opt.batch = batch;
  opt.seed = seed;
  return ParamVector(sgd_reference(spec, start, data, opt).back());
}

/// ceil(p*n), ignoring floating-point noise in the product.
inline Index prune_count(double fraction, Index n) {
  const double x = fraction * static_cast<double>(n);
  const double r = std::round(x);
  const Index k = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? static_cast<Index>(r) : static_cast<Index>(std::ceil(x));
  return std::clamp<Index>(k, 1, n);
}

/// Keeps the ceil(p*n) largest-magnitude entries; ties go to the lower index.
inline ParamVector prune_topk(const ParamVector& params, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("prune fraction must lie in (0, 1]");
  const Index n = params.size();
  if (n == 0) throw InvalidInput("cannot prune an empty parameter vector");
  const Index k = prune_count(fraction, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(params.values[a]) > std::abs(params.values[b]);
  });
  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < k; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return ParamVector(params.values, std::move(mask));
}

namespace detail {

inline ParamVector scatter(const ParamVector& like, const std::vector<Index>& coords, const Eigen::VectorXd& reduced) {
  ParamVector out = like;
  out.values.setZero();
  for (std::size_t a = 0; a < coords.size(); ++a) out.values[coords[a]] = reduced[static_cast<Index>(a)];
  return out;
}

}  // namespace detail

/// Runs ceil(T/R) segments. Each segment re-anchors the field at the current
/// parameters (restricted to the mask), embeds it at order N, steps the
/// Carleman system R times and downloads the order-1 block. Between segments
/// `refine_steps` exact sparse GD steps are taken. Trajectory error is measured
/// against exact sparse GD started from the same anchor, so it is zero at the
/// first step of every segment.
inline PipelineReport run_pipeline(const ModelSpec& spec, const Dataset& data, const ParamVector& start,
                                   const Schedule& schedule, const PipelineOptions& opt = {}) {
  schedule.validate();
  detail::check_inputs(spec, start, data);
  ParamVector cur = start;
  if (!cur.mask) cur.mask = std::vector<bool>(static_cast<std::size_t>(cur.size()), true);
  cur.enforce_mask();
  const std::vector<Index> coords = cur.active_indices();
  if (coords.empty()) throw InvalidInput("mask leaves no trainable parameters");

  PipelineReport rep;
  rep.trainable = static_cast<Index>(coords.size());
  Index step = 0;
  const Index nseg = schedule.segments();

  auto record = [&](Index at, const ParamVector& p, double l2, double linf, Index seg, Phase phase) {
    StepRecord r;
    r.step = at;
    r.loss = loss(spec, p, data);
    r.accuracy = accuracy(spec, p, data);
    r.err_l2 = l2;
    r.err_linf = linf;
    r.segment = seg;
    r.phase = phase;
    rep.steps.push_back(r);
  };
  auto fail = [&](Index at, const std::string& why) {
    rep.diverged = true;
    rep.failure_step = at;
    rep.failure_message = why;
    rep.final_params = cur;
  };

  for (Index s = 0; s < nseg; ++s) {
    const Index rs = std::min(schedule.reupload_period, schedule.total_steps - s * schedule.reupload_period);
    const PolyField field = from_model(spec, data, cur, schedule.field_degree, schedule.eta, ExtractionMode::taylor);
    const CarlemanMatrix m = embed(field, schedule.order, opt.carleman_budget);
    const InitialState y0 = initial_state(field.anchor, field.anchor, schedule.order);
    const GlobalSystem g = build_global(m, y0.y, rs);

    SegmentRecord seg;
    seg.segment = s;
    seg.start_step = step;
    seg.steps = rs;
    seg.dimension = m.dimension();
    seg.upload_nonzeros = y0.nonzeros;
    seg.y0_norm = y0.norm;
    seg.field_nonzeros = field.nonzeros();
    seg.sparsity = sparsity(field).s();
    if (opt.compute_kappa) {
      try {
        seg.kappa = condition_number(g, opt.kappa_method, opt.kappa);
      } catch (const SingularSystem&) {
        seg.kappa.reset();
      } catch (const Divergence&) {
        seg.kappa.reset();
      }
    }

    SgdOptions gd;
    gd.eta = schedule.eta;
    gd.steps = rs;
    gd.divergence_bound = opt.divergence_bound;
    std::vector<Eigen::VectorXd> exact;
    try {
      exact = sgd_reference(spec, cur, data, gd);
    } catch (const Divergence& e) {
      rep.segments.push_back(seg);
      fail(step + e.step(), std::string("exact reference: ") + e.what());
      return rep;
    }

    std::vector<Eigen::VectorXd> ys;
    try {
      ys = solve(g);
    } catch (const Divergence& e) {
      ys.clear();
      rep.segments.push_back(seg);
      fail(step + e.step(), e.what());
      return rep;
    }

    ParamVector p = cur;
    for (Index t = 0; t <= rs; ++t) {
      const Eigen::VectorXd reduced = readout(ys[static_cast<std::size_t>(t)], field.anchor).params;
      p = detail::scatter(cur, coords, reduced);
      const double norm = p.values.norm();
      if (!std::isfinite(norm) || norm > opt.divergence_bound) {
        rep.segments.push_back(seg);
        fail(step + t, "Carleman readout left the divergence bound");
        return rep;
      }
      const Eigen::VectorXd d = p.values - exact[static_cast<std::size_t>(t)];
      const double l2 = d.norm();
      const double linf = d.cwiseAbs().maxCoeff();
      record(step + t, p, l2, linf, s, Phase::carleman);
      if (t == rs) {
        seg.end_err_l2 = l2;
        seg.end_err_linf = linf;
      }
    }
    if (opt.shots) {
      const auto est = readout(ys.back(), field.anchor, opt.shots, opt.tomography_seed + static_cast<std::uint64_t>(s));
      p = detail::scatter(cur, coords, est.params);
    }
    rep.segments.push_back(seg);
    cur = p;
    step += rs;

    if (s + 1 < nseg && schedule.refine_steps > 0) {
      SgdOptions rf;
      rf.eta = schedule.eta;
      rf.steps = schedule.refine_steps;
      rf.divergence_bound = opt.divergence_bound;
      std::vector<Eigen::VectorXd> refined;
      try {
        refined = sgd_reference(spec, cur, data, rf);
      } catch (const Divergence& e) {
        fail(step + e.step(), std::string("classical refinement: ") + e.what());
        return rep;
      }
      for (std::size_t j = 1; j < refined.size(); ++j) {
        ParamVector q = cur;
        q.values = refined[j];
        record(step + static_cast<Index>(j), q, 0.0, 0.0, s, Phase::classical_refine);
      }
      cur.values = refined.back();
      step += schedule.refine_steps;
    }
  }
  rep.final_params = cur;
  return rep;
}

inline void write_trajectory_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  CsvWriter w(path, {"step", "loss", "accuracy", "err_l2", "err_linf", "segment", "phase"});
  for (const auto& r : steps) {
    w.cell(static_cast<long>(r.step)).cell(r.loss).cell(r.accuracy).cell(r.err_l2).cell(r.err_linf);
    w.cell(static_cast<long>(r.segment)).cell(to_string(r.phase));
    w.row_end();
  }
}

inline void write_segments_csv(const std::string& path, const std::vector<SegmentRecord>& segs) {
  CsvWriter w(path, {"segment", "start_step", "steps", "dimension", "upload_nonzeros", "y0_norm", "field_nonzeros",
                     "sparsity", "kappa", "kappa_method", "kappa_constant_block", "end_err_l2", "end_err_linf"});
  for (const auto& s : segs) {
    w.cell(static_cast<long>(s.segment)).cell(static_cast<long>(s.start_step)).cell(static_cast<long>(s.steps));
    w.cell(static_cast<long>(s.dimension)).cell(static_cast<long>(s.upload_nonzeros)).cell(s.y0_norm);
    w.cell(static_cast<long>(s.field_nonzeros)).cell(static_cast<long>(s.sparsity));
    if (s.kappa)
      w.cell(s.kappa->kappa).cell(to_string(s.kappa->method)).cell(s.kappa->constant_block_eliminated ? "eliminated" : "kept");
    else
      w.cell("nan").cell("none").cell("none");
    w.cell(s.end_err_l2).cell(s.end_err_linf);
    w.row_end();
  }
}

inline void write_params_csv(const std::string& path, const ParamVector& p) {
  CsvWriter w(path, {"index", "value", "trainable"});
  for (Index i = 0; i < p.size(); ++i) {
    w.cell(static_cast<long>(i)).cell(p.values[i]).cell(p.trainable(i) ? 1 : 0);
    w.row_end();
  }
}

inline ParamVector read_params_csv(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<double> values;
  std::vector<bool> mask;
  bool any_masked = false;
  std::size_t lineno = 0, pos = 0;
  std::string_view all(text);
  while (pos < all.size()) {
    auto nl = all.find('\n', pos);
    if (nl == std::string_view::npos) nl = all.size();
    const auto line = detail::trim(all.substr(pos, nl - pos));
    pos = nl + 1;
    ++lineno;
    if (line.empty() || lineno == 1) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 3) throw ParseError("expected index,value,trainable", lineno);
    const auto v = detail::parse_double(f[1]);
    if (!v) throw ParseError("non-numeric parameter value", lineno);
    values.push_back(*v);
    const bool t = f[2] != "0";
    any_masked |= !t;
    mask.push_back(t);
  }
  if (values.empty()) throw ParseError("no parameters in '" + path + "'", lineno);
  Eigen::VectorXd v = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
  if (any_masked) return ParamVector(v, mask);
  return ParamVector(v);
}

}  // namespace qcarleman
