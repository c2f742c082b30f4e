// qpctl: quasipotential learning, exit paths and mean-exit-time control for
// planar SDEs (Maier-Stein system).

#include "qpctl/qpctl.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace qpctl;

namespace {

struct KeyDoc {
  const char* key;
  const char* fallback;
  const char* help;
};

// Every configuration key, its default and a one-line description. Config
// files and --set use these names; dedicated flags map onto the same keys.
const std::vector<KeyDoc> kKeys = {
    {"gamma", "1", "Maier-Stein gamma"},
    {"seed", "1", "global seed (network init, collocation, Monte Carlo)"},
    {"threads", "1", "worker threads, 0 = all cores"},
    {"out_dir", ".", "output directory"},
    {"search_box", "-2,2,-2,2", "fixed-point search box x1min,x1max,x2min,x2max"},
    {"initial_point", "-1,0", "start of exit simulations; its nearest stable node is the basin"},
    {"domain", "-1.5,0,-0.6,0.6", "training domain and dataset grid domain"},
    {"grid_rows", "20", "dataset grid rows (along x2)"},
    {"grid_cols", "20", "dataset grid columns (along x1)"},
    {"circle_radius", "0.02", "seed circle radius"},
    {"circle_count", "2000", "number of characteristics"},
    {"project_seeds", "true", "rescale seed momenta to H = 0"},
    {"char_step", "1e-3", "characteristic RK4 step"},
    {"v_max", "2", "stop characteristics above this V"},
    {"dataset", "", "dataset CSV to train from (default: shoot first)"},
    {"n_collocation", "5000", "collocation points"},
    {"steps", "50000", "Adam steps"},
    {"learning_rate", "0.02", "Adam learning rate"},
    {"trace_every", "100", "loss trace interval"},
    {"use_data_term", "true", "include the dataset term in the loss"},
    {"checkpoint", "", "network checkpoint to load"},
    {"eval_grid", "50,50", "evaluation grid rows,cols"},
    {"eval_domain", "", "evaluation grid domain (default: domain)"},
    {"path_offset", "-1e-3,1e-3", "offset from the saddle where path tracing starts"},
    {"path_mirror", "true", "also trace the offset mirrored in x2"},
    {"path_step", "1e-3", "path RK4 step"},
    {"sigma", "0.15", "noise intensity"},
    {"dt", "1e-3", "Euler-Maruyama step"},
    {"n_traj", "1000", "Monte Carlo trajectories"},
    {"max_time", "auto", "censoring time (auto: 1e6, or 50 target_time when controlled)"},
    {"c", "0", "feedback gain for exit-time"},
    {"gradient", "net", "control gradient and V0 source: net or analytic (gamma = 1 only)"},
    {"target_time", "100", "desired mean exit time"},
    {"max_iters", "5", "control iterations"},
    {"tolerance", "0.1", "control tolerance on |ln(T/T_d)|"},
};

using KeyValues = std::map<std::string, std::string>;

class Settings {
 public:
  explicit Settings(KeyValues kv) : kv_(std::move(kv)) {}

  const std::string& str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw Error(ErrorCode::invalid_argument, "unknown key '" + key + "'");
    return it->second;
  }
  double num(const std::string& key) const { return io::parse_double(str(key), key); }
  long integer(const std::string& key) const {
    const double v = num(key);
    if (v != std::floor(v) || std::abs(v) > 9e15) {
      throw Error(ErrorCode::invalid_argument, key + " must be an integer");
    }
    return static_cast<long>(v);
  }
  std::uint64_t seed() const {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(str("seed"), &used);
      if (used != str("seed").size()) throw std::invalid_argument("seed");
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_argument, "seed must be a non-negative integer");
    }
  }
  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(ErrorCode::invalid_argument, key + " must be true or false");
  }
  Rect rect(const std::string& key) const { return io::parse_rect(str(key), key); }
  Vec2 vec2(const std::string& key) const {
    const auto v = io::parse_doubles(str(key), key);
    if (v.size() != 2) throw Error(ErrorCode::invalid_argument, key + " needs 2 numbers");
    return {v[0], v[1]};
  }
  int threads() const {
    const long t = integer("threads");
    if (t < 0) throw Error(ErrorCode::invalid_argument, "threads must be >= 0");
    return t == 0 ? default_thread_count() : static_cast<int>(t);
  }
  fs::path out_dir() const { return fs::path(str("out_dir")); }

 private:
  KeyValues kv_;
};

KeyValues defaults() {
  KeyValues kv;
  for (const auto& k : kKeys) kv[k.key] = k.fallback;
  return kv;
}

void apply(KeyValues& target, const KeyValues& source, const std::string& origin) {
  for (const auto& [k, v] : source) {
    if (!target.contains(k)) {
      throw Error(ErrorCode::invalid_argument, "unknown key '" + k + "' in " + origin);
    }
    target[k] = v;
  }
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

struct SystemSetup {
  MaierStein sys;
  std::vector<FixedPoint> fixed_points;
  FixedPoint stable;
  FixedPoint saddle;
};

SystemSetup setup_system(const Settings& s) {
  SystemSetup out{MaierStein(s.num("gamma")), {}, {}, {}};
  out.fixed_points = find_fixed_points(out.sys, s.rect("search_box"));
  const Vec2 start = s.vec2("initial_point");
  const FixedPoint* stable = nullptr;
  const FixedPoint* saddle = nullptr;
  for (const auto& fp : out.fixed_points) {
    if (fp.kind == FixedPointKind::stable_node &&
        (!stable || (fp.location - start).norm() < (stable->location - start).norm())) {
      stable = &fp;
    }
  }
  if (!stable) throw Error(ErrorCode::no_convergence, "no stable node in the search box");
  for (const auto& fp : out.fixed_points) {
    if (fp.kind == FixedPointKind::saddle &&
        (!saddle || (fp.location - stable->location).norm() <
                        (saddle->location - stable->location).norm())) {
      saddle = &fp;
    }
  }
  if (!saddle) throw Error(ErrorCode::no_convergence, "no saddle in the search box");
  out.stable = *stable;
  out.saddle = *saddle;
  return out;
}

fs::path prepare_out_dir(const Settings& s) {
  const fs::path dir = s.out_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create output directory '" + dir.string() + "'");
  return dir;
}

ShootConfig shoot_config(const Settings& s) {
  auto cfg = ShootConfig::with_domain(s.rect("domain"));
  cfg.radius = s.num("circle_radius");
  cfg.count = static_cast<int>(s.integer("circle_count"));
  cfg.project_to_zero_energy = s.flag("project_seeds");
  cfg.rows = static_cast<int>(s.integer("grid_rows"));
  cfg.cols = static_cast<int>(s.integer("grid_cols"));
  cfg.step = s.num("char_step");
  cfg.stop.v_max = s.num("v_max");
  cfg.threads = s.threads();
  return cfg;
}

void write_point(io::JsonWriter& w, std::string_view key, const Vec2& x) {
  w.key(key).numbers(std::vector<double>{x[0], x[1]});
}

Checkpoint load_checkpoint(const Settings& s, const SystemSetup& setup) {
  const auto& path = s.str("checkpoint");
  if (path.empty()) throw Error(ErrorCode::invalid_argument, "this command needs --checkpoint");
  auto in = io::open_input(path);
  auto cp = read_checkpoint(in);
  if (cp.gamma != setup.sys.gamma()) {
    throw Error(ErrorCode::shape_mismatch, "checkpoint was trained for gamma " + io::fmt(cp.gamma) +
                                               " but gamma is " + io::fmt(setup.sys.gamma()));
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_fixed_points(const Settings& s) {
  const MaierStein sys(s.num("gamma"));
  const auto fps = find_fixed_points(sys, s.rect("search_box"));
  if (fps.empty()) throw Error(ErrorCode::no_convergence, "no fixed points in the search box");
  const auto dir = prepare_out_dir(s);
  auto out = io::open_output((dir / "fixed_points.csv").string());
  out << "x1,x2,kind,eig1_re,eig1_im,eig2_re,eig2_im\n";
  for (const auto& fp : fps) {
    out << io::fmt(fp.location[0]) << ',' << io::fmt(fp.location[1]) << ',' << to_string(fp.kind);
    for (const auto& ev : fp.eigenvalues) out << ',' << io::fmt(ev.real()) << ',' << io::fmt(ev.imag());
    out << '\n';
    std::cout << to_string(fp.kind) << " (" << io::fmt(fp.location[0]) << ", "
              << io::fmt(fp.location[1]) << ") eigenvalues " << io::fmt(fp.eigenvalues[0].real())
              << ", " << io::fmt(fp.eigenvalues[1].real()) << '\n';
  }
  return 0;
}

CharacteristicDataset run_shoot(const Settings& s, const SystemSetup& setup, const fs::path& dir) {
  const auto cfg = shoot_config(s);
  const auto result = shoot(setup.sys, setup.stable, cfg);
  {
    auto out = io::open_output((dir / "dataset.csv").string());
    write_dataset_csv(out, result.dataset);
  }
  auto out = io::open_output((dir / "shoot_summary.json").string());
  io::JsonWriter w(out);
  const auto& d = result.diagnostics;
  w.begin_object();
  w.field("gamma", setup.sys.gamma());
  write_point(w, "center", setup.stable.location);
  w.field("radius", cfg.radius);
  w.field("count", cfg.count);
  w.field("records", result.dataset.size());
  w.field("total_samples", d.total_samples);
  w.field("truncated", d.truncated);
  w.field("max_abs_h", d.max_abs_h);
  w.key("stop_reasons").begin_object();
  for (std::size_t i = 0; i < kStopReasonCount; ++i) {
    w.field(to_string(static_cast<StopReason>(i)), d.stop_counts[i]);
  }
  w.end_object();
  if (setup.sys.gamma() == 1.0 && !result.dataset.empty()) {
    double worst = 0.0;
    for (const auto& r : result.dataset.records) {
      worst = std::max(worst, std::abs(r.V - analytic_quasipotential(setup.sys, r.x)));
    }
    w.field("oracle_max_abs_error", worst);
  }
  w.end_object();
  w.finish();
  std::cout << "dataset: " << result.dataset.size() << " records from " << d.trajectories
            << " characteristics, max |H| " << io::fmt(d.max_abs_h) << '\n';
  return result.dataset;
}

int cmd_shoot(const Settings& s) {
  const auto setup = setup_system(s);
  run_shoot(s, setup, prepare_out_dir(s));
  return 0;
}

double oracle_grid_error(const MaierStein& sys, const NetParams& params, const Rect& domain, int n) {
  NetGradient net(params);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vec2 x{domain.x1_min + domain.width() * i / (n - 1),
                   domain.x2_min + domain.height() * j / (n - 1)};
      worst = std::max(worst, std::abs(net.value(x) - analytic_quasipotential(sys, x)));
    }
  }
  return worst;
}

Checkpoint run_train(const Settings& s, const SystemSetup& setup, const fs::path& dir) {
  TrainingConfig cfg;
  cfg.collocation_domain = s.rect("domain");
  cfg.n_collocation = static_cast<int>(s.integer("n_collocation"));
  cfg.stable_point = setup.stable.location;
  cfg.steps = s.integer("steps");
  cfg.learning_rate = s.num("learning_rate");
  cfg.seed = s.seed();
  cfg.use_data_term = s.flag("use_data_term");
  cfg.trace_every = s.integer("trace_every");
  cfg.threads = s.threads();
  if (cfg.use_data_term) {
    const auto& path = s.str("dataset");
    if (path.empty()) {
      cfg.dataset = run_shoot(s, setup, dir);
    } else {
      auto in = io::open_input(path);
      cfg.dataset = read_dataset_csv(in, s.rect("domain"), static_cast<int>(s.integer("grid_rows")),
                                     static_cast<int>(s.integer("grid_cols")));
    }
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<TraceEntry> trace;
  TrainingResult result;
  try {
    result = train(setup.sys, cfg, [&](const TraceEntry& e) {
      if (e.step % (cfg.trace_every * 10) == 0 || e.step == cfg.steps) {
        std::cerr << "step " << e.step << " L_all " << io::fmt(e.loss.L_all) << '\n';
      }
    });
  } catch (const TrainingAborted& e) {
    auto out = io::open_output((dir / "loss_trace.csv").string());
    write_loss_trace(out, e.trace());
    throw;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Checkpoint cp{result.params, setup.sys.gamma(), result.final_loss, cfg.steps};
  {
    auto out = io::open_output((dir / "checkpoint.json").string());
    write_checkpoint(out, cp);
  }
  {
    auto out = io::open_output((dir / "loss_trace.csv").string());
    write_loss_trace(out, result.trace);
  }
  NetGradient net(result.params);
  const double v0 = net.value(setup.saddle.location);
  auto out = io::open_output((dir / "train_summary.json").string());
  io::JsonWriter w(out);
  w.begin_object();
  w.field("gamma", setup.sys.gamma());
  w.field("steps", cfg.steps);
  w.field("seed", cfg.seed);
  w.key("final_loss").begin_object();
  w.field("L_p", result.final_loss.L_p);
  w.field("L_H", result.final_loss.L_H);
  w.field("L_0", result.final_loss.L_0);
  w.field("L_d", result.final_loss.L_d);
  w.field("L_all", result.final_loss.L_all);
  w.end_object();
  write_point(w, "saddle", setup.saddle.location);
  w.field("V_saddle", v0);
  if (setup.sys.gamma() == 1.0) {
    w.field("oracle_grid_max_abs_error", oracle_grid_error(setup.sys, result.params, cfg.collocation_domain, 50));
  }
  w.key("metadata").begin_object();
  w.field("wall_seconds", wall);
  w.end_object();
  w.end_object();
  w.finish();
  std::cout << "trained " << cfg.steps << " steps, final L_all " << io::fmt(result.final_loss.L_all)
            << ", V at saddle " << io::fmt(v0) << '\n';
  return cp;
}

int cmd_train(const Settings& s) {
  const auto setup = setup_system(s);
  run_train(s, setup, prepare_out_dir(s));
  return 0;
}

int cmd_eval_grid(const Settings& s) {
  const auto setup = setup_system(s);
  const auto cp = load_checkpoint(s, setup);
  const Rect domain = s.str("eval_domain").empty() ? s.rect("domain") : s.rect("eval_domain");
  const auto dims = io::parse_doubles(s.str("eval_grid"), "eval_grid");
  if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1 || dims[0] != std::floor(dims[0]) ||
      dims[1] != std::floor(dims[1])) {
    throw Error(ErrorCode::invalid_argument, "eval_grid needs two positive integers rows,cols");
  }
  const int rows = static_cast<int>(dims[0]);
  const int cols = static_cast<int>(dims[1]);
  const bool oracle = setup.sys.gamma() == 1.0;
  const auto dir = prepare_out_dir(s);
  auto out = io::open_output((dir / "grid.csv").string());
  out << "x1,x2,V,p1,p2" << (oracle ? ",V_true,abs_error" : "") << '\n';
  auto coord = [](double lo, double hi, int i, int n) {
    return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (n - 1);
  };
  double worst = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const Vec2 x{coord(domain.x1_min, domain.x1_max, c, cols),
                   coord(domain.x2_min, domain.x2_max, r, rows)};
      const auto y = forward(cp.params, x);
      out << io::fmt(x[0]) << ',' << io::fmt(x[1]) << ',' << io::fmt(y.V) << ','
          << io::fmt(y.p[0]) << ',' << io::fmt(y.p[1]);
      if (oracle) {
        const double v = analytic_quasipotential(setup.sys, x);
        worst = std::max(worst, std::abs(y.V - v));
        out << ',' << io::fmt(v) << ',' << io::fmt(std::abs(y.V - v));
      }
      out << '\n';
    }
  }
  std::cout << "grid " << rows << "x" << cols << " written";
  if (oracle) std::cout << ", max |V - V_true| " << io::fmt(worst);
  std::cout << '\n';
  return 0;
}

void write_path_csv(const fs::path& file, const ProbablePath& path) {
  auto out = io::open_output(file.string());
  out << "t,x1,x2\n";
  for (const auto& p : path.samples) {
    out << io::fmt(p.t) << ',' << io::fmt(p.x[0]) << ',' << io::fmt(p.x[1]) << '\n';
  }
}

int cmd_trace_path(const Settings& s) {
  const auto setup = setup_system(s);
  const auto cp = load_checkpoint(s, setup);
  std::vector<Vec2> nodes;
  for (const auto& fp : setup.fixed_points) {
    if (fp.kind == FixedPointKind::stable_node) nodes.push_back(fp.location);
  }
  PathSettings settings;
  settings.step = s.num("path_step");
  std::vector<Vec2> offsets{s.vec2("path_offset")};
  if (s.flag("path_mirror") && offsets[0][1] != 0.0) offsets.emplace_back(offsets[0][0], -offsets[0][1]);

  const auto dir = prepare_out_dir(s);
  std::vector<ProbablePath> paths;
  for (const auto& offset : offsets) {
    paths.push_back(trace_most_probable_path(setup.sys, NetGradient(cp.params),
                                             setup.saddle.location, offset, nodes, settings));
  }
  auto out = io::open_output((dir / "path_summary.json").string());
  io::JsonWriter w(out);
  w.begin_object();
  w.field("gamma", setup.sys.gamma());
  write_point(w, "saddle", setup.saddle.location);
  w.field("V_saddle", NetGradient(cp.params).value(setup.saddle.location));
  w.field("step", settings.step);
  w.field("capture_radius", settings.capture_radius);
  w.key("paths").begin_array();
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& p = paths[i];
    const std::string file = "path_" + std::to_string(i) + ".csv";
    write_path_csv(dir / file, p);
    double max_x2 = 0.0;
    for (const auto& q : p.samples) max_x2 = std::max(max_x2, std::abs(q.x[1]));
    w.begin_object();
    w.field("file", file);
    write_point(w, "offset", offsets[i]);
    write_point(w, "start_anchor", p.start_anchor);
    write_point(w, "end_anchor", p.end_anchor);
    w.field("samples", p.samples.size());
    w.field("duration", p.samples.back().t);
    w.field("action", p.action);
    w.field("max_abs_x2", max_x2);
    w.end_object();
    std::cout << file << ": " << p.samples.size() << " samples, action " << io::fmt(p.action) << '\n';
  }
  w.end_array();
  if (paths.size() == 2) {
    w.field("mirror_distance",
            hausdorff_distance(path_points(paths[0], 10), mirrored(path_points(paths[1], 10))));
  }
  w.end_object();
  w.finish();
  return 0;
}

/// Control gradient and V0, either from a checkpoint or from the gamma = 1 oracle.
struct GradientSource {
  std::optional<Checkpoint> cp;
  bool analytic = false;
  double V0 = 0.0;
};

GradientSource gradient_source(const Settings& s, const SystemSetup& setup, bool need_gradient) {
  GradientSource g;
  const auto& mode = s.str("gradient");
  if (mode == "analytic") {
    g.analytic = true;
    g.V0 = analytic_quasipotential(setup.sys, setup.saddle.location);
  } else if (mode == "net") {
    if (need_gradient || !s.str("checkpoint").empty()) {
      g.cp = load_checkpoint(s, setup);
      g.V0 = NetGradient(g.cp->params).value(setup.saddle.location);
    }
  } else {
    throw Error(ErrorCode::invalid_argument, "gradient must be 'net' or 'analytic'");
  }
  return g;
}

struct AnalyticGradient {
  MaierStein sys;
  Vec2 operator()(const Vec2& x) const { return analytic_quasipotential_gradient(sys, x); }
};

SimulationSettings simulation_settings(const Settings& s, double auto_max_time) {
  SimulationSettings sim;
  sim.dt = s.num("dt");
  sim.max_time = s.str("max_time") == "auto" ? auto_max_time : s.num("max_time");
  sim.n_trajectories = static_cast<int>(s.integer("n_traj"));
  sim.base_seed = s.seed();
  sim.initial_point = s.vec2("initial_point");
  sim.threads = s.threads();
  return sim;
}

ExitRegion exit_region(const SystemSetup& setup) {
  ExitRegion region;
  region.threshold = setup.saddle.location[0];
  if (setup.stable.location[0] > setup.saddle.location[0]) {
    region.normal = {-1.0, 0.0};
    region.threshold = -setup.saddle.location[0];
  }
  return region;
}

void write_estimate(io::JsonWriter& w, const ExitTimeEstimate& e) {
  w.field("mean", e.mean);
  w.field("std_error", e.std_error);
  w.field("n", e.n);
  w.field("n_censored", e.n_censored);
  w.field("n_safety_exits", e.n_safety_exits);
}

int cmd_exit_time(const Settings& s) {
  const auto setup = setup_system(s);
  const double c = s.num("c");
  const auto grad = gradient_source(s, setup, c != 0.0);
  const auto sim = simulation_settings(s, c != 0.0 ? 50.0 * s.num("target_time") : 1e6);
  const NoiseModel noise(s.num("sigma"));
  const auto region = exit_region(setup);

  ExitTimeEstimate est;
  if (c == 0.0) {
    est = estimate_mean_exit_time(setup.sys, noise, FeedbackControl<>{}, region, sim);
  } else if (grad.analytic) {
    est = estimate_mean_exit_time(setup.sys, noise,
                                  FeedbackControl<AnalyticGradient>{c, AnalyticGradient{setup.sys}},
                                  region, sim);
  } else {
    est = estimate_mean_exit_time(setup.sys, noise,
                                  FeedbackControl<NetGradient>{c, NetGradient(grad.cp->params)},
                                  region, sim);
  }

  const auto dir = prepare_out_dir(s);
  auto out = io::open_output((dir / "exit_time.json").string());
  io::JsonWriter w(out);
  w.begin_object();
  w.field("gamma", setup.sys.gamma());
  w.field("sigma", noise.sigma);
  w.field("c", c);
  w.field("gradient", c == 0.0 ? "none" : (grad.analytic ? "analytic" : "net"));
  w.field("dt", sim.dt);
  w.field("max_time", sim.max_time);
  w.field("n_trajectories", sim.n_trajectories);
  w.field("base_seed", sim.base_seed);
  write_point(w, "initial_point", sim.initial_point);
  write_estimate(w, est);
  w.end_object();
  w.finish();
  std::cout << "mean exit time " << io::fmt(est.mean) << " +- " << io::fmt(est.std_error) << " ("
            << est.n << " exits, " << est.n_censored << " censored)\n";
  return 0;
}

void write_control_report(const fs::path& file, const ControlReport& r, const std::string& source) {
  auto out = io::open_output(file.string());
  io::JsonWriter w(out);
  w.begin_object();
  w.field("V0", r.V0);
  w.field("V0_source", source);
  w.field("sigma", r.sigma);
  w.field("T_d", r.T_d);
  w.field("tolerance", r.tolerance);
  w.field("max_iters", r.max_iters);
  w.field("converged", r.converged);
  w.key("iterates").begin_array();
  for (const auto& it : r.iterates) {
    w.begin_object();
    w.field("c", it.c);
    w.field("clamped", it.clamped);
    write_estimate(w, it.estimate);
    w.field("log_ratio", std::log(it.estimate.mean / r.T_d));
    w.end_object();
  }
  w.end_array();
  w.key("metadata").begin_object();
  w.field("wall_seconds", r.wall_seconds);
  w.end_object();
  w.end_object();
  w.finish();
}

int run_control(const Settings& s, const SystemSetup& setup, const GradientSource& grad,
                const fs::path& dir) {
  const double T_d = s.num("target_time");
  const NoiseModel noise(s.num("sigma"));
  const auto sim = simulation_settings(s, 50.0 * T_d);
  const auto region = exit_region(setup);
  const int max_iters = static_cast<int>(s.integer("max_iters"));
  const double tol = s.num("tolerance");
  const std::string source = grad.analytic ? "analytic" : "net";

  ControlReport report;
  try {
    auto estimator = [&](double c) {
      std::cerr << "estimating exit time with c = " << io::fmt(c) << '\n';
      if (grad.analytic) {
        return estimate_mean_exit_time(setup.sys, noise,
                                       FeedbackControl<AnalyticGradient>{c, AnalyticGradient{setup.sys}},
                                       region, sim);
      }
      return estimate_mean_exit_time(setup.sys, noise,
                                     FeedbackControl<NetGradient>{c, NetGradient(grad.cp->params)},
                                     region, sim);
    };
    report = run_control_loop(grad.V0, noise.sigma, T_d, estimator, max_iters, tol);
  } catch (const ControlLoopError& e) {
    write_control_report(dir / "control_report.json", e.partial(), source);
    throw;
  }
  write_control_report(dir / "control_report.json", report, source);
  for (std::size_t k = 0; k < report.iterates.size(); ++k) {
    const auto& it = report.iterates[k];
    std::cout << "c_" << k + 1 << " = " << io::fmt(it.c) << "  T = " << io::fmt(it.estimate.mean)
              << (it.clamped ? " (clamped)" : "") << '\n';
  }
  std::cout << (report.converged ? "converged" : "not converged") << " to T_d = " << io::fmt(T_d)
            << '\n';
  return 0;
}

int cmd_control(const Settings& s) {
  const auto setup = setup_system(s);
  const auto grad = gradient_source(s, setup, true);
  return run_control(s, setup, grad, prepare_out_dir(s));
}

int cmd_repro(const Settings& s) {
  const auto setup = setup_system(s);
  const auto dir = prepare_out_dir(s);
  GradientSource grad;
  grad.cp = run_train(s, setup, dir);
  grad.V0 = NetGradient(grad.cp->params).value(setup.saddle.location);
  if (s.str("gradient") == "analytic") {
    grad.analytic = true;
    grad.V0 = analytic_quasipotential(setup.sys, setup.saddle.location);
  }
  return run_control(s, setup, grad, dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quasipotential learning and mean-exit-time control for planar SDEs"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--set", sets, "override any key: --set key=value")->take_all();
  const std::vector<std::pair<std::string, std::string>> flag_keys = {
      {"--seed", "seed"},         {"--gamma", "gamma"},         {"--sigma", "sigma"},
      {"--target-time", "target_time"}, {"--out-dir", "out_dir"}, {"--n-traj", "n_traj"},
      {"--dt", "dt"},             {"--c", "c"},                 {"--checkpoint", "checkpoint"},
      {"--dataset", "dataset"},   {"--steps", "steps"},         {"--threads", "threads"},
      {"--gradient", "gradient"}, {"--max-time", "max_time"},   {"--count", "circle_count"},
  };
  for (const auto& [flag, key] : flag_keys) {
    app.add_option(flag, flag_values[key], std::string("sets '") + key + "'");
  }
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  using Command = int (*)(const Settings&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"fixed-points", "locate and classify fixed points", cmd_fixed_points},
      {"shoot", "integrate characteristics and build the training dataset", cmd_shoot},
      {"train", "train the quasipotential network", cmd_train},
      {"eval-grid", "evaluate a checkpoint on a grid", cmd_eval_grid},
      {"trace-path", "trace most probable exit paths", cmd_trace_path},
      {"exit-time", "Monte Carlo mean exit time", cmd_exit_time},
      {"control", "iterate the feedback gain towards a target exit time", cmd_control},
      {"repro", "shoot, train and control in one run", cmd_repro},
  };
  std::map<CLI::App*, Command> handlers;
  for (const auto& [name, help, fn] : commands) handlers[app.add_subcommand(name, help)] = fn;

  // --list-keys works without a subcommand
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--list-keys") {
      for (const auto& k : kKeys) {
        std::cout << k.key << " = " << k.fallback << "    # " << k.help << '\n';
      }
      return 0;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error code=usage message=\"" << e.what() << "\"\n";
    return 64;
  }

  try {
    KeyValues kv = defaults();
    if (!config_path.empty()) {
      auto in = io::open_input(config_path);
      apply(kv, io::parse_key_values(in), "config file '" + config_path + "'");
    }
    if (const char* env = std::getenv("QPCTL_OUT_DIR"); env && *env) kv["out_dir"] = env;
    for (const auto& item : sets) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::invalid_argument, "--set expects key=value, got '" + item + "'");
      }
      apply(kv, {{io::trim(item.substr(0, eq)), io::trim(item.substr(eq + 1))}}, "--set");
    }
    for (const auto& [flag, key] : flag_keys) {
      if (app.count(flag) > 0) kv[key] = flag_values[key];
    }
    const Settings settings(std::move(kv));
    for (auto* sub : app.get_subcommands()) return handlers.at(sub)(settings);
    return 0;
  } catch (const Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n' || ch == '"') ch = '\'';
    }
    std::cerr << "error code=" << to_string(e.code()) << " message=\"" << msg << "\"\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal message=\"" << e.what() << "\"\n";
    return 3;
  }
}
