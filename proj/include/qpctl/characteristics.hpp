#pragma once

#include "qpctl/core.hpp"
#include "qpctl/dynamics.hpp"
#include "qpctl/io.hpp"
#include "qpctl/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace qpctl {

/// A point on a characteristic of the Hamiltonian H(x, p) = <p, F(x)> + |p|^2/2,
/// with V accumulated along it.
struct CharacteristicState {
  Vec2 x = Vec2::Zero();
  Vec2 p = Vec2::Zero();
  double V = 0.0;
  double t = 0.0;
};

/// Quadratic form Q of the local quasipotential V ~ (x - x*)^T Q (x - x*) / 2
/// at a stable point with Jacobian J. Q^{-1} solves J X + X J^T + I = 0, so
/// Q J + J^T Q + Q^2 = 0.
inline Mat2 seed_quadratic_form(const Mat2& j) {
  Eigen::Matrix3d a;
  a << 2.0 * j(0, 0), 2.0 * j(0, 1), 0.0,
       j(1, 0), j(0, 0) + j(1, 1), j(0, 1),
       0.0, 2.0 * j(1, 0), 2.0 * j(1, 1);
  const Eigen::Vector3d rhs(-1.0, 0.0, -1.0);
  Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::singular_lyapunov, "Lyapunov equation is singular at this point");
  }
  const Eigen::Vector3d s = lu.solve(rhs);
  Mat2 x;
  x << s[0], s[1], s[1], s[2];
  if (!(x.determinant() > 0.0) || !(x(0, 0) > 0.0)) {
    throw Error(ErrorCode::singular_lyapunov, "Lyapunov solution is not positive definite");
  }
  Mat2 q = x.inverse();
  q = 0.5 * (q + q.transpose());
  return q;
}

/// Frobenius norm of Q J + J^T Q + Q^2.
inline double quadratic_form_residual(const Mat2& q, const Mat2& j) {
  return (q * j + j.transpose() * q + q * q).norm();
}

struct SeedCircle {
  Vec2 center = Vec2::Zero();
  double radius = 0.02;
  int count = 2000;
  Mat2 Q = Mat2::Identity();
};

/// `count` seeds at angles 2 pi k / count on a circle around a stable node,
/// with p = Q d and V = d^T Q d / 2 for d = x - center. With
/// `project_to_zero_energy`, p is rescaled along its direction so that
/// H(x, p) = 0 exactly, which the quadratic approximation only gives to
/// O(radius^3).
template <DriftField S>
std::vector<CharacteristicState> make_seed_circle(const S& sys, const FixedPoint& center,
                                                  double radius, int count,
                                                  bool project_to_zero_energy = true) {
  if (center.kind != FixedPointKind::stable_node) {
    throw Error(ErrorCode::not_stable, "seed circle centre must be a stable node");
  }
  if (!(radius > 0.0) || count < 1) {
    throw Error(ErrorCode::invalid_argument, "seed circle needs radius > 0 and count >= 1");
  }
  const Mat2 q = seed_quadratic_form(sys.jacobian(center.location));
  std::vector<CharacteristicState> seeds;
  seeds.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / count;
    const Vec2 d{radius * std::cos(theta), radius * std::sin(theta)};
    CharacteristicState s;
    s.x = center.location + d;
    s.p = q * d;
    s.V = 0.5 * d.dot(q * d);
    if (project_to_zero_energy) {
      const double pp = s.p.squaredNorm();
      const double scale = -2.0 * s.p.dot(sys.field(s.x)) / pp;
      if (pp > 0.0 && std::isfinite(scale) && scale > 0.0) s.p *= scale;
    }
    seeds.push_back(s);
  }
  return seeds;
}

// ---------------------------------------------------------------------------
// Integration

struct StopRule {
  Rect domain{-1.65, 0.15, -0.72, 0.72};
  double v_max = 2.0;
  double max_arc_length = 20.0;
  long max_steps = 200000;
  /// Samples with |H| above this end the trajectory (flagged, not dropped).
  double energy_tolerance = 1e-5;
};

enum class StopReason { left_domain, v_max, arc_length, step_cap, non_finite, energy_drift };
inline constexpr std::size_t kStopReasonCount = 6;

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::left_domain: return "left_domain";
    case StopReason::v_max: return "v_max";
    case StopReason::arc_length: return "arc_length";
    case StopReason::step_cap: return "step_cap";
    case StopReason::non_finite: return "non_finite";
    case StopReason::energy_drift: return "energy_drift";
  }
  return "unknown";
}

struct TrajectorySummary {
  StopReason reason = StopReason::step_cap;
  std::size_t samples = 0;
  double max_abs_h = 0.0;
  /// Truncated because of NaN/inf or energy drift.
  bool truncated() const {
    return reason == StopReason::non_finite || reason == StopReason::energy_drift;
  }
};

struct Trajectory {
  std::vector<CharacteristicState> samples;
  TrajectorySummary summary;
};

namespace detail {

struct Phase {
  Vec2 x, p;
  double v;
};

template <DriftField S>
Phase hamilton_rhs(const S& sys, const Phase& s) {
  return {s.p + sys.field(s.x), -sys.jacobian(s.x).transpose() * s.p, 0.5 * s.p.squaredNorm()};
}

inline Phase axpy(const Phase& s, double h, const Phase& k) {
  return {s.x + h * k.x, s.p + h * k.p, s.v + h * k.v};
}

}  // namespace detail

/// Fixed-step RK4 on x' = p + F(x), p' = -(dF)^T p, V' = |p|^2/2. Every
/// accepted sample (seed included) is passed to `visit` in time order.
template <DriftField S, class Visit>
TrajectorySummary integrate_characteristic(const S& sys, const CharacteristicState& seed,
                                           const StopRule& stop, double step, Visit&& visit) {
  if (!(step > 0.0)) throw Error(ErrorCode::invalid_argument, "step must be positive");
  const double h0 = hamiltonian(sys, seed.x, seed.p);
  if (!(std::abs(h0) <= 1e-8)) {
    throw Error(ErrorCode::invalid_argument, "seed is not on the zero-energy manifold");
  }
  TrajectorySummary summary;
  summary.max_abs_h = std::abs(h0);
  visit(seed);
  summary.samples = 1;
  if (!stop.domain.contains(seed.x)) {
    summary.reason = StopReason::left_domain;
    return summary;
  }
  if (seed.V > stop.v_max) {
    summary.reason = StopReason::v_max;
    return summary;
  }

  detail::Phase s{seed.x, seed.p, seed.V};
  double t = seed.t;
  double arc = 0.0;
  for (long n = 1;; ++n) {
    if (n > stop.max_steps) {
      summary.reason = StopReason::step_cap;
      return summary;
    }
    const auto k1 = detail::hamilton_rhs(sys, s);
    const auto k2 = detail::hamilton_rhs(sys, detail::axpy(s, 0.5 * step, k1));
    const auto k3 = detail::hamilton_rhs(sys, detail::axpy(s, 0.5 * step, k2));
    const auto k4 = detail::hamilton_rhs(sys, detail::axpy(s, step, k3));
    detail::Phase next{s.x + step / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
                       s.p + step / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
                       s.v + step / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v)};
    if (!is_finite(next.x) || !is_finite(next.p) || !std::isfinite(next.v)) {
      summary.reason = StopReason::non_finite;
      return summary;
    }
    if (!stop.domain.contains(next.x)) {
      summary.reason = StopReason::left_domain;
      return summary;
    }
    if (next.v > stop.v_max) {
      summary.reason = StopReason::v_max;
      return summary;
    }
    arc += (next.x - s.x).norm();
    if (arc > stop.max_arc_length) {
      summary.reason = StopReason::arc_length;
      return summary;
    }
    const double h = std::abs(hamiltonian(sys, next.x, next.p));
    if (!(h <= stop.energy_tolerance)) {
      summary.reason = StopReason::energy_drift;
      return summary;
    }
    summary.max_abs_h = std::max(summary.max_abs_h, h);
    s = next;
    t = seed.t + static_cast<double>(n) * step;
    visit(CharacteristicState{s.x, s.p, s.v, t});
    ++summary.samples;
  }
}

template <DriftField S>
Trajectory integrate_characteristic(const S& sys, const CharacteristicState& seed,
                                    const StopRule& stop, double step = 1e-3) {
  Trajectory out;
  out.summary = integrate_characteristic(
      sys, seed, stop, step, [&](const CharacteristicState& st) { out.samples.push_back(st); });
  return out;
}

// ---------------------------------------------------------------------------
// Grid dataset

struct DatasetRecord {
  Vec2 x = Vec2::Zero();
  Vec2 p = Vec2::Zero();
  double V = 0.0;
};

/// At most one record per grid cell, in row-major cell order (rows along
/// x2, columns along x1).
struct CharacteristicDataset {
  Rect domain;
  int rows = 20;
  int cols = 20;
  std::vector<DatasetRecord> records;
  std::vector<int> cells;  // cell index of each record

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Cell index of x in a rows x cols grid over `domain`, or -1 outside.
inline int grid_cell(const Rect& domain, int rows, int cols, const Vec2& x) {
  if (!domain.contains(x)) return -1;
  int c = static_cast<int>(std::floor((x[0] - domain.x1_min) / domain.width() * cols));
  int r = static_cast<int>(std::floor((x[1] - domain.x2_min) / domain.height() * rows));
  c = std::clamp(c, 0, cols - 1);
  r = std::clamp(r, 0, rows - 1);
  return r * cols + c;
}

/// Per-cell minimum-V reduction. Offers must arrive in (trajectory, time)
/// order; a later offer replaces the kept one only if its V is strictly
/// smaller, so ties go to the earlier trajectory and then the earlier sample.
class GridMinimum {
 public:
  GridMinimum(const Rect& domain, int rows, int cols) : domain_(domain), rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1) {
      throw Error(ErrorCode::invalid_argument, "grid dimensions must be >= 1");
    }
    if (domain.degenerate()) throw Error(ErrorCode::invalid_argument, "grid domain is degenerate");
    best_.resize(static_cast<std::size_t>(rows) * cols);
    filled_.assign(best_.size(), 0);
  }

  void offer(const Vec2& x, const Vec2& p, double v) {
    const int cell = grid_cell(domain_, rows_, cols_, x);
    if (cell < 0) return;
    auto& slot = best_[static_cast<std::size_t>(cell)];
    if (!filled_[static_cast<std::size_t>(cell)] || v < slot.V) {
      slot = {x, p, v};
      filled_[static_cast<std::size_t>(cell)] = 1;
    }
  }

  void offer(const CharacteristicState& s) { offer(s.x, s.p, s.V); }

  /// Folds in a reduction made over later trajectories.
  void merge(const GridMinimum& later) {
    for (std::size_t i = 0; i < best_.size(); ++i) {
      if (later.filled_[i] && (!filled_[i] || later.best_[i].V < best_[i].V)) {
        best_[i] = later.best_[i];
        filled_[i] = 1;
      }
    }
  }

  CharacteristicDataset dataset() const {
    CharacteristicDataset out{domain_, rows_, cols_, {}, {}};
    for (std::size_t i = 0; i < best_.size(); ++i) {
      if (!filled_[i]) continue;
      out.records.push_back(best_[i]);
      out.cells.push_back(static_cast<int>(i));
    }
    return out;
  }

 private:
  Rect domain_;
  int rows_;
  int cols_;
  std::vector<DatasetRecord> best_;
  std::vector<char> filled_;
};

inline CharacteristicDataset extract_grid_dataset(std::span<const Trajectory> trajectories,
                                                  const Rect& domain, int rows, int cols) {
  GridMinimum grid(domain, rows, cols);
  for (const auto& traj : trajectories) {
    for (const auto& s : traj.samples) grid.offer(s);
  }
  return grid.dataset();
}

// ---------------------------------------------------------------------------
// Whole shooting pipeline

struct ShootConfig {
  double radius = 0.02;
  int count = 2000;
  bool project_to_zero_energy = true;
  Rect dataset_domain{-1.5, 0.0, -0.6, 0.6};
  int rows = 20;
  int cols = 20;
  StopRule stop{};  // stop.domain defaults to dataset_domain inflated by 20%
  double step = 1e-3;
  int threads = 1;

  static ShootConfig with_domain(const Rect& domain) {
    ShootConfig c;
    c.dataset_domain = domain;
    c.stop.domain = domain.inflated(0.2);
    return c;
  }
};

struct ShootDiagnostics {
  std::size_t trajectories = 0;
  std::size_t total_samples = 0;
  std::array<std::size_t, kStopReasonCount> stop_counts{};
  std::size_t truncated = 0;
  double max_abs_h = 0.0;
};

struct ShootResult {
  CharacteristicDataset dataset;
  ShootDiagnostics diagnostics;
};

/// Integrates one characteristic per seed and reduces all of them onto the
/// dataset grid. Trajectories run concurrently; the reduction is done in
/// seed order so the dataset does not depend on `threads`.
template <DriftField S>
ShootResult shoot(const S& sys, const FixedPoint& center, const ShootConfig& cfg) {
  const auto seeds =
      make_seed_circle(sys, center, cfg.radius, cfg.count, cfg.project_to_zero_energy);
  std::vector<GridMinimum> local(seeds.size(),
                                 GridMinimum(cfg.dataset_domain, cfg.rows, cfg.cols));
  std::vector<TrajectorySummary> summaries(seeds.size());
  parallel_for(seeds.size(), cfg.threads, [&](std::size_t i) {
    auto& grid = local[i];
    summaries[i] = integrate_characteristic(sys, seeds[i], cfg.stop, cfg.step,
                                            [&](const CharacteristicState& s) { grid.offer(s); });
  });

  GridMinimum total(cfg.dataset_domain, cfg.rows, cfg.cols);
  ShootDiagnostics diag;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    total.merge(local[i]);
    const auto& s = summaries[i];
    ++diag.trajectories;
    diag.total_samples += s.samples;
    ++diag.stop_counts[static_cast<std::size_t>(s.reason)];
    if (s.truncated()) ++diag.truncated;
    diag.max_abs_h = std::max(diag.max_abs_h, s.max_abs_h);
  }
  return {total.dataset(), diag};
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kDatasetHeader = "x1,x2,p1,p2,V";

inline void write_dataset_csv(std::ostream& out, const CharacteristicDataset& data) {
  out << kDatasetHeader << '\n';
  for (const auto& r : data.records) {
    out << io::fmt(r.x[0]) << ',' << io::fmt(r.x[1]) << ',' << io::fmt(r.p[0]) << ','
        << io::fmt(r.p[1]) << ',' << io::fmt(r.V) << '\n';
  }
}

/// Reads records back and re-derives their cells against `domain`/grid.
/// Records outside the domain are rejected.
inline CharacteristicDataset read_dataset_csv(std::istream& in, const Rect& domain, int rows,
                                              int cols) {
  std::string line;
  if (!std::getline(in, line) || io::trim(line) != kDatasetHeader) {
    throw Error(ErrorCode::io, std::string("dataset header must be '") + kDatasetHeader + "'");
  }
  CharacteristicDataset out{domain, rows, cols, {}, {}};
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line, ',');
    if (f.size() != 5) {
      throw Error(ErrorCode::io, "dataset line " + std::to_string(line_no) + " needs 5 fields");
    }
    DatasetRecord r;
    r.x = {io::parse_double(f[0], "x1"), io::parse_double(f[1], "x2")};
    r.p = {io::parse_double(f[2], "p1"), io::parse_double(f[3], "p2")};
    r.V = io::parse_double(f[4], "V");
    const int cell = grid_cell(domain, rows, cols, r.x);
    if (cell < 0) {
      throw Error(ErrorCode::io,
                  "dataset line " + std::to_string(line_no) + " lies outside the domain");
    }
    out.records.push_back(r);
    out.cells.push_back(cell);
  }
  return out;
}

}  // namespace qpctl
