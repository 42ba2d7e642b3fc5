// qcarleman: command line front end for the sparse Carleman training toolkit.
//
// Every subcommand reads one flat configuration (dotted keys), writes its CSV
// artifacts into --out and finishes with manifest.json. Passing a manifest
// back through --config reproduces the run.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qcarleman/qcarleman.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace qcarleman;

namespace {

Json default_config() {
  Json c = Json::object();
  c["seed"] = 0;
  c["out"] = "runs/default";
  c["model.kind"] = "mlp";
  c["model.widths"] = {4, 3, 3};
  c["model.activation"] = "quadratic_poly";
  c["model.alpha"] = 0.1;
  c["model.coefficients"] = Json::array();  // empty: (1, 4) for diag_quadratic, (1, 1) for scalar_cubic
  c["data.kind"] = "csv";
  c["data.path"] = "";
  c["data.standardize"] = true;
  c["data.blobs.per_class"] = 50;
  c["data.blobs.classes"] = 3;
  c["data.blobs.dim"] = 4;
  c["data.blobs.spread"] = 0.5;
  c["params.path"] = "";
  c["pretrain.steps"] = 200;
  c["pretrain.eta"] = 0.05;
  c["pretrain.batch"] = 0;
  c["schedule.total_steps"] = 100;
  c["schedule.reupload_period"] = 100;
  c["schedule.refine_steps"] = 10;
  c["schedule.order"] = 2;
  c["schedule.field_degree"] = 2;
  c["schedule.prune_fraction"] = 0.1;
  c["schedule.eta"] = 0.05;
  c["simulate.theta0"] = Json::array();
  c["simulate.anchor"] = "origin";  // origin | start | explicit array
  c["simulate.degree"] = 0;         // 0: exact degree when it is at most 3
  c["simulate.export_matrix"] = false;
  c["simulate.param"] = -1;  // tracked parameter; -1 picks one from seeds.init
  c["kappa.compute"] = true;
  c["kappa.method"] = "power_iteration";
  c["kappa.eliminate_constant_block"] = true;
  c["kappa.dense_limit"] = 4096;
  c["kappa.steps"] = {5, 10, 20, 40};
  c["tomography.shots"] = 0;
  c["spectrum.method"] = "direct";
  c["spectrum.bins"] = 20;
  c["spectrum.path"] = "";
  c["lanczos.steps"] = 80;
  c["lanczos.probes"] = 16;
  c["proxy.eta"] = 1.0;
  c["proxy.threshold"] = 0.4;
  c["proxy.eta_scaled"] = true;
  c["proxy.tmax"] = 100;
  c["classify.delta"] = 1e-3;
  c["classify.zeta"] = 0.05;
  c["report.run"] = "";
  c["report.epsilon"] = 0.01;
  return c;
}

const std::set<std::string> kPolymorphicKeys{"simulate.anchor"};

void flatten(const Json& j, const std::string& prefix, Json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      flatten(*it, key, out);
    else
      out[key] = *it;
  }
}

bool compatible(const Json& def, const Json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return false;
}

class Config {
 public:
  Config() : flat_(default_config()) {}

  void set(const std::string& key, const Json& value) {
    if (!flat_.contains(key)) throw InvalidInput("unknown configuration key '" + key + "'");
    static const Json defaults = default_config();
    const Json& def = defaults.at(key);
    const bool poly = kPolymorphicKeys.count(key) && (value.is_string() || value.is_array());
    if (!poly && !compatible(def, value))
      throw InvalidInput("configuration key '" + key + "' expects " + std::string(def.type_name()) + ", got " +
                         value.type_name());
    flat_[key] = value;
  }

  // Accepts a flat or nested object, or a manifest (its "config" member).
  // Relative *.path entries are resolved against the file's directory.
  void merge_file(const std::string& path) {
    Json j;
    try {
      j = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
      throw InvalidInput("malformed config '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw InvalidInput("config '" + path + "' must be a JSON object");
    if (j.contains("config") && j["config"].is_object()) j = j["config"];
    Json flat = Json::object();
    flatten(j, "", flat);
    const fs::path base = fs::absolute(fs::path(path)).parent_path();
    for (auto it = flat.begin(); it != flat.end(); ++it) {
      Json v = *it;
      const std::string& key = it.key();
      if (key.size() > 5 && key.ends_with(".path") && v.is_string() && !v.get<std::string>().empty() &&
          fs::path(v.get<std::string>()).is_relative())
        v = (base / v.get<std::string>()).lexically_normal().string();
      set(key, v);
    }
  }

  // key=value with value parsed as JSON when possible, otherwise a string.
  void merge_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidInput("expected key=value, got '" + kv + "'");
    set(kv.substr(0, eq), parse_value(kv.substr(eq + 1)));
  }

  static Json parse_value(const std::string& s) {
    try {
      return Json::parse(s);
    } catch (const Json::parse_error&) {
      return Json(s);
    }
  }

  const Json& raw(const std::string& key) const {
    if (!flat_.contains(key)) throw std::logic_error("missing default for '" + key + "'");
    return flat_.at(key);
  }
  double num(const std::string& key) const { return raw(key).get<double>(); }
  Index integer(const std::string& key) const {
    const double v = num(key);
    if (std::floor(v) != v) throw InvalidInput("configuration key '" + key + "' must be an integer");
    return static_cast<Index>(v);
  }
  bool flag(const std::string& key) const { return raw(key).get<bool>(); }
  std::string str(const std::string& key) const { return raw(key).get<std::string>(); }
  std::vector<double> nums(const std::string& key) const {
    std::vector<double> out;
    for (const auto& v : raw(key)) {
      if (!v.is_number()) throw InvalidInput("configuration key '" + key + "' must hold numbers");
      out.push_back(v.get<double>());
    }
    return out;
  }
  const Json& json() const { return flat_; }

 private:
  Json flat_;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Seeds {
  std::uint64_t global = 0, init = 0, minibatch = 0, lanczos = 0, tomography = 0;

  explicit Seeds(std::uint64_t g) : global(g) {
    const std::uint64_t root = splitmix64(g);
    init = splitmix64(root + 1);
    minibatch = splitmix64(root + 2);
    lanczos = splitmix64(root + 3);
    tomography = splitmix64(root + 4);
  }

  Json json() const {
    return Json{{"global", global}, {"init", init}, {"minibatch", minibatch}, {"lanczos", lanczos}, {"tomography", tomography}};
  }
};

struct Run {
  std::string command;
  Config cfg;
  fs::path out;
  Seeds seeds{0};
  std::vector<std::string> outputs;
  std::vector<std::string> notes;
  Json extra = Json::object();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::time_t started_wall = std::time(nullptr);

  std::string path(const std::string& name) {
    outputs.push_back(name);
    return (out / name).string();
  }
};

std::string iso_time(std::time_t t) {
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(Run& run, bool ok, const std::string& error = {}) {
  Json m;
  m["command"] = run.command;
  m["status"] = ok ? "ok" : "failed";
  if (!error.empty()) m["error"] = error;
  m["config"] = run.cfg.json();
  m["seeds"] = run.seeds.json();
  m["versions"] = {{"qcarleman", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__},
                   {"cxx_standard", __cplusplus}};
  m["started_at"] = iso_time(run.started_wall);
  m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.started).count();
  m["outputs"] = run.outputs;
  m["notes"] = run.notes;
  if (!run.extra.empty()) m["results"] = run.extra;
  std::ofstream f(run.out / "manifest.json");
  f << m.dump(2) << '\n';
}

ModelSpec model_from(const Config& c) {
  const ModelKind kind = parse_model_kind(c.str("model.kind"));
  std::vector<double> coef = c.nums("model.coefficients");
  ModelSpec spec;
  switch (kind) {
    case ModelKind::diag_quadratic:
      spec = ModelSpec::diag_quadratic(coef.empty() ? std::vector<double>{1.0, 4.0} : coef);
      break;
    case ModelKind::scalar_cubic:
      if (coef.empty()) coef = {1.0, 1.0};
      if (coef.size() != 2) throw InvalidInput("scalar_cubic takes model.coefficients = [c1, c3]");
      spec = ModelSpec::scalar_cubic(coef[0], coef[1]);
      break;
    case ModelKind::mlp: {
      std::vector<int> widths;
      for (double w : c.nums("model.widths")) {
        if (w != std::floor(w)) throw InvalidInput("model.widths must be integers");
        widths.push_back(static_cast<int>(w));
      }
      spec = ModelSpec::mlp(widths, parse_activation(c.str("model.activation")), c.num("model.alpha"));
      break;
    }
  }
  spec.validate();
  return spec;
}

Dataset data_from(const Config& c, const ModelSpec& spec, const Seeds& seeds) {
  if (spec.is_analytic()) return Dataset{};
  const std::string kind = c.str("data.kind");
  if (kind == "blobs")
    return make_blobs(c.integer("data.blobs.per_class"), static_cast<int>(c.integer("data.blobs.classes")),
                      c.integer("data.blobs.dim"), seeds.init ^ 0xb10b5ULL, c.num("data.blobs.spread"));
  if (kind != "csv") throw InvalidInput("data.kind must be csv or blobs");
  const std::string path = c.str("data.path");
  if (path.empty()) throw InvalidInput("data.path is required for the mlp model");
  return load_csv_dataset(path, spec.widths.front(), c.flag("data.standardize"));
}

SgdOptions pretrain_options(const Config& c, const Seeds& seeds) {
  SgdOptions o;
  o.eta = c.num("pretrain.eta");
  o.steps = c.integer("pretrain.steps");
  o.batch = c.integer("pretrain.batch");
  o.seed = seeds.minibatch;
  return o;
}

// params.path, else simulate.theta0, else a seeded initialization (pretrained
// for the mlp when `train_mlp` is set).
ParamVector starting_params(Run& run, const ModelSpec& spec, const Dataset& data, bool train_mlp) {
  const Config& c = run.cfg;
  ParamVector p;
  if (const std::string path = c.str("params.path"); !path.empty()) {
    p = read_params_csv(path);
    run.notes.push_back("parameters read from " + path);
  } else if (const auto t0 = c.nums("simulate.theta0"); !t0.empty()) {
    p = ParamVector(Eigen::Map<const Eigen::VectorXd>(t0.data(), static_cast<Index>(t0.size())));
  } else {
    p = init_params(spec, run.seeds.init);
    if (train_mlp && !spec.is_analytic() && c.integer("pretrain.steps") > 0) {
      p = ParamVector(sgd_reference(spec, p, data, pretrain_options(c, run.seeds)).back());
      run.notes.push_back("parameters initialized from seeds.init and pretrained for pretrain.steps steps");
    }
  }
  p.check_size(spec.parameter_count());
  return p;
}

KappaOptions kappa_options(const Config& c, const Seeds& seeds) {
  KappaOptions k;
  k.dense_limit = c.integer("kappa.dense_limit");
  k.eliminate_constant_block = c.flag("kappa.eliminate_constant_block");
  k.seed = seeds.lanczos ^ 0x6b;
  return k;
}

void note_kappa(Run& run) {
  run.notes.push_back(run.cfg.flag("kappa.eliminate_constant_block")
                          ? "kappa measured on the block-bidiagonal system with the stationary constant block folded "
                            "into the right-hand side (no further preconditioning)"
                          : "kappa measured on the plain block-bidiagonal system including the constant block");
}

// Field, Carleman matrix and start state shared by simulate and kappa.
struct LinearizedProblem {
  ModelSpec spec;
  Dataset data;
  ParamVector theta0;
  ParamVector anchor;
  PolyField field;
  CarlemanMatrix carleman;
  InitialState y0;
};

LinearizedProblem linearize(Run& run) {
  const Config& c = run.cfg;
  LinearizedProblem lp;
  lp.spec = model_from(c);
  lp.data = data_from(c, lp.spec, run.seeds);
  lp.theta0 = starting_params(run, lp.spec, lp.data, true);

  const Json& a = c.raw("simulate.anchor");
  Eigen::VectorXd anchor;
  if (a.is_array()) {
    const auto v = c.nums("simulate.anchor");
    anchor = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  } else if (a == "origin") {
    anchor = Eigen::VectorXd::Zero(lp.theta0.size());
  } else if (a == "start") {
    anchor = lp.theta0.values;
  } else {
    throw InvalidInput("simulate.anchor must be origin, start or an array");
  }
  if (anchor.size() != lp.theta0.size()) throw InvalidInput("simulate.anchor has the wrong length");
  lp.anchor = lp.theta0.mask ? ParamVector(anchor, *lp.theta0.mask) : ParamVector(anchor);

  const int gdeg = lp.spec.gradient_degree();
  int degree = static_cast<int>(c.integer("simulate.degree"));
  if (degree == 0) degree = gdeg <= 3 ? gdeg : static_cast<int>(c.integer("schedule.field_degree"));
  const ExtractionMode mode = gdeg <= degree ? ExtractionMode::exact : ExtractionMode::taylor;
  if (mode == ExtractionMode::taylor)
    run.notes.push_back("gradient degree " + std::to_string(gdeg) + " exceeds field degree " + std::to_string(degree) +
                        "; field is a truncated Taylor expansion");
  lp.field = from_model(lp.spec, lp.data, lp.anchor, degree, c.num("schedule.eta"), mode);
  const int order = static_cast<int>(c.integer("schedule.order"));
  lp.carleman = embed(lp.field, order);

  Eigen::VectorXd reduced(lp.field.n);
  for (Index i = 0; i < lp.field.n; ++i) reduced[i] = lp.theta0.values[lp.field.full_index(i)];
  lp.y0 = initial_state(reduced, lp.field.anchor, order);
  return lp;
}

int cmd_pretrain(Run& run) {
  const Config& c = run.cfg;
  const ModelSpec spec = model_from(c);
  const Dataset data = data_from(c, spec, run.seeds);
  ParamVector start;
  if (const std::string path = c.str("params.path"); !path.empty())
    start = read_params_csv(path);
  else
    start = init_params(spec, run.seeds.init);
  start.check_size(spec.parameter_count());
  const auto traj = sgd_reference(spec, start, data, pretrain_options(c, run.seeds));
  CsvWriter w(run.path("pretrain.csv"), {"step", "loss", "accuracy"});
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const ParamVector p(traj[t]);
    w.cell(static_cast<long>(t)).cell(loss(spec, p, data)).cell(accuracy(spec, p, data));
    w.row_end();
  }
  write_params_csv(run.path("params.csv"), ParamVector(traj.back()));
  if (c.integer("pretrain.batch") > 0) run.notes.push_back("minibatches drawn from seeds.minibatch");
  return 0;
}

int cmd_prune(Run& run) {
  const ModelSpec spec = model_from(run.cfg);
  const Dataset data = data_from(run.cfg, spec, run.seeds);
  const ParamVector p = starting_params(run, spec, data, true);
  const ParamVector pruned = prune_topk(p, run.cfg.num("schedule.prune_fraction"));
  write_params_csv(run.path("params.csv"), pruned);
  run.extra["kept"] = pruned.active_indices().size();
  run.notes.push_back("largest-magnitude entries kept; ties go to the lower index");
  return 0;
}

int cmd_simulate(Run& run) {
  const Config& c = run.cfg;
  const LinearizedProblem lp = linearize(run);
  const Index steps = c.integer("schedule.total_steps");
  const GlobalSystem g = build_global(lp.carleman, lp.y0.y, steps);
  if (c.flag("simulate.export_matrix")) {
    std::ofstream mm(run.path("global_system.mtx"));
    write_matrix_market(mm, g.assemble());
  }
  const auto ys = solve(g);

  SgdOptions gd;
  gd.eta = c.num("schedule.eta");
  gd.steps = steps;
  const auto exact = sgd_reference(lp.spec, lp.theta0, lp.data, gd);

  std::vector<std::string> header{"step"};
  for (Index i = 0; i < lp.field.n; ++i) header.push_back("carleman_" + std::to_string(lp.field.full_index(i)));
  for (Index i = 0; i < lp.field.n; ++i) header.push_back("exact_" + std::to_string(lp.field.full_index(i)));
  header.insert(header.end(), {"err_l2", "err_linf", "param_abs_err", "param_rel_err"});

  // Single tracked coordinate, reported both absolute and relative to the exact value.
  Index tracked = c.integer("simulate.param");
  if (tracked < 0) tracked = static_cast<Index>(run.seeds.init % static_cast<std::uint64_t>(lp.field.n));
  if (tracked >= lp.field.n) throw InvalidInput("simulate.param must index a trainable parameter");
  std::vector<double> abs_err, rel_err;

  CsvWriter w(run.path("simulate.csv"), header);
  for (Index t = 0; t <= steps; ++t) {
    const Eigen::VectorXd approx = readout(ys[static_cast<std::size_t>(t)], lp.field.anchor).params;
    Eigen::VectorXd ex(lp.field.n);
    for (Index i = 0; i < lp.field.n; ++i) ex[i] = exact[static_cast<std::size_t>(t)][lp.field.full_index(i)];
    w.cell(static_cast<long>(t));
    for (Index i = 0; i < approx.size(); ++i) w.cell(approx[i]);
    for (Index i = 0; i < ex.size(); ++i) w.cell(ex[i]);
    const Eigen::VectorXd d = approx - ex;
    abs_err.push_back(std::abs(d[tracked]));
    rel_err.push_back(ex[tracked] != 0.0 ? abs_err.back() / std::abs(ex[tracked]) : std::numeric_limits<double>::infinity());
    w.cell(d.norm()).cell(d.cwiseAbs().maxCoeff()).cell(abs_err.back()).cell(rel_err.back());
    w.row_end();
  }
  run.extra["tracked_param"] = lp.field.full_index(tracked);
  run.extra["loglog_slope_abs"] = loglog_slope(abs_err, 1, steps);
  run.extra["loglog_slope_rel"] = loglog_slope(rel_err, 1, steps);
  run.extra["dimension"] = lp.carleman.dimension();
  run.extra["system_nonzeros"] = g.nonzeros();
  run.extra["y0_norm"] = lp.y0.norm;
  run.extra["exact_field"] = lp.field.exact;
  return 0;
}

int cmd_kappa(Run& run) {
  const Config& c = run.cfg;
  const LinearizedProblem lp = linearize(run);
  const KappaMethod method = parse_kappa_method(c.str("kappa.method"));
  const KappaOptions opt = kappa_options(c, run.seeds);
  CsvWriter w(run.path("kappa.csv"), {"T", "kappa", "method", "sigma_max", "sigma_min", "constant_block"});
  for (double tv : c.nums("kappa.steps")) {
    if (tv < 0 || std::floor(tv) != tv) throw InvalidInput("kappa.steps must be non-negative integers");
    const auto est = condition_number(build_global(lp.carleman, lp.y0.y, static_cast<Index>(tv)), method, opt);
    w.cell(static_cast<long>(tv)).cell(est.kappa).cell(to_string(est.method)).cell(est.sigma_max).cell(est.sigma_min);
    w.cell(std::string(est.constant_block_eliminated ? "eliminated" : "kept"));
    w.row_end();
  }
  note_kappa(run);
  return 0;
}

int cmd_pipeline(Run& run) {
  const Config& c = run.cfg;
  const ModelSpec spec = model_from(c);
  const Dataset data = data_from(c, spec, run.seeds);
  ParamVector p = starting_params(run, spec, data, true);
  write_params_csv(run.path("params_start.csv"), p);
  if (!p.mask) p = prune_topk(p, c.num("schedule.prune_fraction"));
  write_params_csv(run.path("params_pruned.csv"), p);

  Schedule s;
  s.total_steps = c.integer("schedule.total_steps");
  s.reupload_period = c.integer("schedule.reupload_period");
  s.refine_steps = c.integer("schedule.refine_steps");
  s.order = static_cast<int>(c.integer("schedule.order"));
  s.field_degree = static_cast<int>(c.integer("schedule.field_degree"));
  s.prune_fraction = c.num("schedule.prune_fraction");
  s.eta = c.num("schedule.eta");

  PipelineOptions opt;
  opt.compute_kappa = c.flag("kappa.compute");
  opt.kappa_method = parse_kappa_method(c.str("kappa.method"));
  opt.kappa = kappa_options(c, run.seeds);
  if (const Index shots = c.integer("tomography.shots"); shots > 0) {
    opt.shots = static_cast<std::uint64_t>(shots);
    opt.tomography_seed = run.seeds.tomography;
    run.notes.push_back("segment-end download by simulated tomography; signs taken from the exact state");
  }

  const PipelineReport rep = run_pipeline(spec, data, p, s, opt);
  write_trajectory_csv(run.path("trajectory.csv"), rep.steps);
  write_segments_csv(run.path("segments.csv"), rep.segments);
  write_params_csv(run.path("params_final.csv"), rep.final_params);
  {
    CsvWriter w(run.path("kappa.csv"), {"T", "kappa", "method"});
    for (const auto& seg : rep.segments) {
      w.cell(static_cast<long>(seg.steps));
      if (seg.kappa)
        w.cell(seg.kappa->kappa).cell(to_string(seg.kappa->method));
      else
        w.cell(std::string("nan")).cell(std::string("none"));
      w.row_end();
    }
  }
  run.notes.push_back("each segment linearizes the full-batch gradient field at its re-upload point");
  run.notes.push_back("trajectory error is measured against exact sparse GD from the same re-upload point");
  if (opt.compute_kappa) note_kappa(run);
  run.extra["trainable"] = rep.trainable;
  run.extra["segments"] = rep.segments.size();
  run.extra["diverged"] = rep.diverged;
  if (rep.diverged) {
    run.extra["failure_step"] = *rep.failure_step;
    run.extra["failure_message"] = rep.failure_message;
    std::cerr << "pipeline diverged at step " << *rep.failure_step << ": " << rep.failure_message << '\n';
    return static_cast<int>(ErrorClass::divergence);
  }
  return 0;
}

int cmd_hessian(Run& run) {
  const Config& c = run.cfg;
  const ModelSpec spec = model_from(c);
  const Dataset data = data_from(c, spec, run.seeds);
  const ParamVector p = starting_params(run, spec, data, true);
  const std::string m = c.str("spectrum.method");
  if (m != "direct" && m != "lanczos") throw InvalidInput("spectrum.method must be direct or lanczos");
  LanczosOptions lo;
  lo.steps = c.integer("lanczos.steps");
  lo.probes = c.integer("lanczos.probes");
  lo.seed = run.seeds.lanczos;
  const Spectrum s = spectrum(spec, p, data, m == "direct" ? SpectrumMethod::direct : SpectrumMethod::lanczos, lo);
  if (s.exact) write_eigenvalues_csv(run.path("eigenvalues.csv"), s);
  write_histogram_csv(run.path("histogram.csv"), histogram(s, static_cast<std::size_t>(c.integer("spectrum.bins"))));
  if (s.exact) {
    const auto r = classify(s, c.num("schedule.eta"), c.num("classify.delta"), c.num("classify.zeta"));
    CsvWriter w(run.path("dissipation.csv"), {"eta", "delta", "zeta", "fraction_convergent", "fraction_nonconvergent",
                                              "fraction_growing", "classification"});
    w.cell(c.num("schedule.eta")).cell(r.delta).cell(r.zeta).cell(r.fraction_convergent).cell(r.fraction_nonconvergent);
    w.cell(r.fraction_growing).cell(to_string(r.classification));
    w.row_end();
    run.notes.push_back("dissipativity classes are operational: " + r.definition);
  }
  run.extra["n"] = s.n;
  return 0;
}

int cmd_proxy(Run& run) {
  const Config& c = run.cfg;
  const std::string path = c.str("spectrum.path");
  if (path.empty()) throw InvalidInput("proxy needs spectrum.path (--spectrum)");
  const Spectrum s = read_spectrum_csv(path);
  ProxyOptions opt;
  opt.threshold = c.num("proxy.threshold");
  opt.eta_scaled = c.flag("proxy.eta_scaled");
  const Index tmax = c.integer("proxy.tmax");
  if (tmax < 0) throw InvalidInput("proxy.tmax must be non-negative");
  std::vector<Index> times;
  for (Index t = 0; t <= tmax; ++t) times.push_back(t);
  const auto e = error_proxy(s, c.num("proxy.eta"), times, opt);
  CsvWriter w(run.path("proxy.csv"), {"t", "E"});
  for (std::size_t i = 0; i < times.size(); ++i) {
    w.cell(static_cast<long>(times[i])).cell(e[i]);
    w.row_end();
  }
  run.notes.push_back(opt.eta_scaled ? "a = -eta * lambda" : "a = -lambda (raw eigenvalues)");
  return 0;
}

// Minimal reader for the CSV files this tool writes.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static Table read(const std::string& path) {
    Table t;
    std::istringstream in(read_file(path));
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      for (auto f : detail::split(line, ',')) cells.emplace_back(detail::trim(f));
      if (first)
        t.header = std::move(cells);
      else
        t.rows.push_back(std::move(cells));
      first = false;
    }
    return t;
  }

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidInput("column '" + name + "' not found");
  }

  double num(std::size_t r, const std::string& name) const {
    const auto v = detail::parse_double(rows[r][col(name)]);
    return v ? *v : std::numeric_limits<double>::quiet_NaN();
  }
};

int cmd_report(Run& run) {
  const Config& c = run.cfg;
  const std::string dir = c.str("report.run");
  if (dir.empty()) throw InvalidInput("report needs report.run (--run)");
  const fs::path rd(dir);
  Config src;
  if (fs::exists(rd / "manifest.json")) src.merge_file((rd / "manifest.json").string());

  std::vector<std::pair<std::string, std::string>> kv;
  auto put = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };

  double steps = static_cast<double>(src.integer("schedule.total_steps"));
  double n = 0, sparsity = 1, kappa = 1;
  if (fs::exists(rd / "trajectory.csv")) {
    const Table t = Table::read((rd / "trajectory.csv").string());
    if (!t.rows.empty()) {
      const std::size_t last = t.rows.size() - 1;
      put("final_loss", format_double(t.num(last, "loss")));
      put("final_accuracy", format_double(t.num(last, "accuracy")));
      double worst = 0;
      for (std::size_t r = 0; r < t.rows.size(); ++r) worst = std::max(worst, t.num(r, "err_l2"));
      put("max_err_l2", format_double(worst));
    }
  }
  if (fs::exists(rd / "segments.csv")) {
    const Table t = Table::read((rd / "segments.csv").string());
    double kmax = 0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (std::isfinite(t.num(r, "kappa"))) kmax = std::max(kmax, t.num(r, "kappa"));
      sparsity = std::max(sparsity, t.num(r, "sparsity"));
    }
    if (kmax > 0) kappa = kmax;
    put("segments", std::to_string(t.rows.size()));
    put("max_kappa", format_double(kmax));
    put("max_sparsity", format_double(sparsity));
  }
  if (fs::exists(rd / "params_final.csv")) {
    n = static_cast<double>(read_params_csv((rd / "params_final.csv").string()).active_indices().size());
    put("trainable", format_double(n));
  }
  if (fs::exists(rd / "eigenvalues.csv")) {
    const Spectrum s = read_spectrum_csv((rd / "eigenvalues.csv").string());
    const auto r = classify(s, src.num("schedule.eta"), src.num("classify.delta"), src.num("classify.zeta"));
    put("classification", to_string(r.classification));
    put("fraction_convergent", format_double(r.fraction_convergent));
    if (n == 0) n = static_cast<double>(s.n);
  }
  if (n >= 2) {
    const double eps = c.num("report.epsilon");
    put("cost_fully", format_double(cost_estimate(n, steps, sparsity, kappa, eps, Dissipativity::fully)));
    put("cost_almost", format_double(cost_estimate(n, steps, sparsity, kappa, eps, Dissipativity::almost)));
    run.notes.push_back("cost estimates are indicative: C=1, log2(n)^3, no tight constants");
  }
  CsvWriter w(run.path("report.csv"), {"key", "value"});
  for (const auto& [k, v] : kv) {
    w.cell(k).cell(v);
    w.row_end();
    std::cout << k << " = " << v << '\n';
  }
  return 0;
}

struct Shortcut {
  std::string flag;
  std::string key;
  std::string help;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse neural-network training through truncated Carleman linearization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  struct Sub {
    std::string name, help;
    std::function<int(Run&)> fn;
    std::vector<Shortcut> shortcuts;
  };
  const Shortcut model{"--model", "model.kind", "diag_quadratic | scalar_cubic | mlp"};
  const Shortcut order{"--order", "schedule.order", "Carleman truncation order N"};
  const Shortcut steps{"--steps", "schedule.total_steps", "number of time steps T"};
  const Shortcut eta{"--eta", "schedule.eta", "learning rate"};
  const Shortcut data{"--data", "data.path", "dataset CSV"};
  const Shortcut params{"--params", "params.path", "parameter CSV (index,value,trainable)"};
  const std::vector<Sub> subs{
      {"pretrain", "dense classical pre-training", cmd_pretrain, {model, data, params}},
      {"prune", "keep the largest-magnitude fraction of parameters", cmd_prune,
       {model, data, params, {"--fraction", "schedule.prune_fraction", "fraction kept"}}},
      {"simulate", "Carleman trajectory against exact GD", cmd_simulate, {model, order, steps, eta, data, params}},
      {"pipeline", "pretrain, prune and segmented Carleman training", cmd_pipeline,
       {model, order, steps, eta, data, params}},
      {"hessian", "Hessian spectrum and dissipativity", cmd_hessian, {model, eta, data, params}},
      {"proxy", "spectrum-weighted error proxy", cmd_proxy,
       {{"--spectrum", "spectrum.path", "spectrum CSV"},
        {"--eta", "proxy.eta", "learning rate scaling the eigenvalues"},
        {"--tmax", "proxy.tmax", "last time step"}}},
      {"kappa", "condition number of the global system", cmd_kappa, {model, order, eta, data, params}},
      {"report", "summarize a run directory", cmd_report, {{"--run", "report.run", "run directory"}}},
  };

  std::string config_path, out, chosen;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  std::map<std::string, std::string> shortcut_values;
  std::vector<std::pair<std::string, std::string>> shortcut_keys;  // flag -> key, in declaration order

  for (const auto& s : subs) {
    CLI::App* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("-c,--config", config_path, "JSON config or manifest");
    sc->add_option("--set", sets, "override, key=value (repeatable)");
    sc->add_option("-o,--out", out, "output directory");
    sc->add_option("--seed", seed, "global seed");
    for (const auto& sh : s.shortcuts) {
      sc->add_option(sh.flag, shortcut_values[s.name + sh.flag], sh.help + " (" + sh.key + ")");
    }
    sc->callback([&chosen, name = s.name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorClass::validation);
  }

  const auto sub = std::find_if(subs.begin(), subs.end(), [&](const Sub& s) { return s.name == chosen; });
  Run run;
  run.command = chosen;
  int code = 0;
  bool dir_ready = false;
  try {
    if (!config_path.empty()) run.cfg.merge_file(config_path);
    for (const auto& kv : sets) run.cfg.merge_assignment(kv);
    for (const auto& sh : sub->shortcuts) {
      const std::string& v = shortcut_values[sub->name + sh.flag];
      if (!v.empty()) run.cfg.set(sh.key, Config::parse_value(v));
    }
    if (seed) run.cfg.set("seed", *seed);
    if (!out.empty()) run.cfg.set("out", out);
    const double g = run.cfg.num("seed");
    if (g < 0 || std::floor(g) != g) throw InvalidInput("seed must be a non-negative integer");
    run.seeds = Seeds(static_cast<std::uint64_t>(g));
    run.out = run.cfg.str("out");
    fs::create_directories(run.out);
    dir_ready = true;
    code = sub->fn(run);
    write_manifest(run, code == 0, code == 0 ? "" : "see results");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (!dir_ready) std::cerr << app.get_subcommand(chosen)->help();
    code = static_cast<int>(e.error_class());
    if (dir_ready) write_manifest(run, false, e.what());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = static_cast<int>(ErrorClass::validation);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = static_cast<int>(ErrorClass::validation);
    if (dir_ready) write_manifest(run, false, e.what());
  }
  return code;
}
