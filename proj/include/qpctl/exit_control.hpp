#pragma once

#include "qpctl/core.hpp"
#include "qpctl/dynamics.hpp"
#include "qpctl/parallel.hpp"
#include "qpctl/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace qpctl {

struct SimulationSettings {
  double dt = 1e-3;
  double max_time = 1e6;
  int n_trajectories = 1000;
  std::uint64_t base_seed = 1;
  Vec2 initial_point{-1.0, 0.0};
  int threads = 1;

  long max_steps() const { return static_cast<long>(std::ceil(max_time / dt - 1e-9)); }
};

/// Escape region for the left well: the trajectory has exited once
/// <normal, x> >= threshold (default x1 >= 0), or once it leaves the safety box.
struct ExitRegion {
  Vec2 normal{1.0, 0.0};
  double threshold = 0.0;
  Rect safety_box{-3.0, 3.0, -3.0, 3.0};

  bool crossed(const Vec2& x) const { return normal.dot(x) >= threshold; }
  bool inside(const Vec2& x) const { return !crossed(x) && safety_box.contains(x); }
};

struct ZeroGradient {
  Vec2 operator()(const Vec2&) const { return Vec2::Zero(); }
};

/// u(x) = c grad V(x).
template <class Grad = ZeroGradient>
struct FeedbackControl {
  double c = 0.0;
  Grad gradient{};
};

struct ExitSample {
  double time = 0.0;
  bool censored = false;
  bool left_safety_box = false;
};

inline void validate(const SimulationSettings& s) {
  if (!(s.dt > 0.0) || !std::isfinite(s.dt)) {
    throw Error(ErrorCode::invalid_argument, "dt must be positive");
  }
  if (!(s.max_time >= s.dt) || !std::isfinite(s.max_time)) {
    throw Error(ErrorCode::invalid_argument, "max_time must be finite and at least dt");
  }
  if (s.n_trajectories < 1) throw Error(ErrorCode::invalid_argument, "n_trajectories must be >= 1");
}

/// One Euler-Maruyama run of dx = [F(x) + c grad V(x)] dt + sqrt(sigma) dW,
/// with its normals drawn from counter stream (base_seed, index).
template <DriftField S, class Grad>
ExitSample simulate_exit(const S& sys, const NoiseModel& noise, FeedbackControl<Grad> control,
                         const ExitRegion& region, const SimulationSettings& settings,
                         std::uint64_t index) {
  if (!region.inside(settings.initial_point)) {
    throw Error(ErrorCode::invalid_argument, "initial point is not inside the exit region");
  }
  CounterStream rng(settings.base_seed, index);
  const double dt = settings.dt;
  const double sd = noise.increment_stddev(dt);
  const bool noisy = sd > 0.0;
  const bool controlled = control.c != 0.0;
  const long steps = settings.max_steps();

  Vec2 x = settings.initial_point;
  for (long k = 1; k <= steps; ++k) {
    Vec2 drift = sys.field(x);
    if (controlled) drift += control.c * Vec2(control.gradient(x));
    x += drift * dt;
    if (noisy) {
      const auto [z1, z2] = rng.normal_pair();
      x[0] += sd * z1;
      x[1] += sd * z2;
    }
    if (!region.safety_box.contains(x) || !is_finite(x)) {
      return {static_cast<double>(k) * dt, false, true};
    }
    if (region.crossed(x)) return {static_cast<double>(k) * dt, false, false};
  }
  return {static_cast<double>(steps) * dt, true, false};
}

struct ExitTimeEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n = 0;
  int n_censored = 0;
  int n_safety_exits = 0;
  SimulationSettings settings;
};

/// Mean over the uncensored exits; censored runs are only counted.
template <DriftField S, class Grad>
ExitTimeEstimate estimate_mean_exit_time(const S& sys, const NoiseModel& noise,
                                         const FeedbackControl<Grad>& control,
                                         const ExitRegion& region,
                                         const SimulationSettings& settings) {
  validate(settings);
  std::vector<ExitSample> runs(static_cast<std::size_t>(settings.n_trajectories));
  parallel_for(runs.size(), settings.threads, [&](std::size_t i) {
    runs[i] = simulate_exit(sys, noise, control, region, settings, i);
  });

  ExitTimeEstimate est;
  est.settings = settings;
  double sum = 0.0;
  for (const auto& r : runs) {
    if (r.censored) {
      ++est.n_censored;
      continue;
    }
    if (r.left_safety_box) ++est.n_safety_exits;
    sum += r.time;
    ++est.n;
  }
  if (est.n == 0) {
    throw Error(ErrorCode::all_censored, "every trajectory reached max_time " +
                                             std::to_string(settings.max_time) +
                                             "; increase max_time");
  }
  est.mean = sum / est.n;
  double ss = 0.0;
  for (const auto& r : runs) {
    if (!r.censored) ss += (r.time - est.mean) * (r.time - est.mean);
  }
  est.std_error = est.n > 1 ? std::sqrt(ss / (est.n - 1)) / std::sqrt(static_cast<double>(est.n))
                            : 0.0;
  return est;
}

// ---------------------------------------------------------------------------
// Controller

/// c_1 = 1/2 - sigma / (2 V0) ln T_d.
inline double c_initial(double V0, double sigma, double T_d) {
  if (!(V0 > 0.0)) throw Error(ErrorCode::domain, "V0 must be positive");
  if (!(T_d > 0.0)) throw Error(ErrorCode::domain, "target time must be positive");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::domain, "sigma must be >= 0");
  return 0.5 - sigma / (2.0 * V0) * std::log(T_d);
}

/// c_{k+1} = c_k + sigma / (2 V0) ln(T_k / T_d).
inline double c_update(double c_k, double V0, double sigma, double T_k, double T_d) {
  if (!(V0 > 0.0)) throw Error(ErrorCode::domain, "V0 must be positive");
  if (!(T_k > 0.0) || !(T_d > 0.0)) throw Error(ErrorCode::domain, "times must be positive");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::domain, "sigma must be >= 0");
  return c_k + sigma / (2.0 * V0) * std::log(T_k / T_d);
}

struct ControlIterate {
  double c = 0.0;
  bool clamped = false;
  ExitTimeEstimate estimate;
};

struct ControlReport {
  double V0 = 0.0;
  double sigma = 0.0;
  double T_d = 0.0;
  double tolerance = 0.1;
  int max_iters = 5;
  std::vector<ControlIterate> iterates;
  bool converged = false;
  double wall_seconds = 0.0;
};

/// An estimator failure inside the loop, with the iterates completed so far.
class ControlLoopError : public Error {
 public:
  ControlLoopError(ErrorCode code, const std::string& message, ControlReport partial)
      : Error(code, message), partial_(std::move(partial)) {}
  const ControlReport& partial() const { return partial_; }

 private:
  ControlReport partial_;
};

using ExitTimeEstimator = std::function<ExitTimeEstimate(double c)>;

/// Iterates c_k until |ln(T_k / T_d)| <= tol or `max_iters` estimates have
/// been made. Every c_k is clamped to at most 1/2.
inline ControlReport run_control_loop(double V0, double sigma, double T_d,
                                      const ExitTimeEstimator& estimate, int max_iters = 5,
                                      double tol = 0.1) {
  if (max_iters < 1) throw Error(ErrorCode::invalid_argument, "max_iters must be >= 1");
  if (!(tol >= 0.0)) throw Error(ErrorCode::invalid_argument, "tolerance must be >= 0");
  const auto start = std::chrono::steady_clock::now();
  ControlReport report;
  report.V0 = V0;
  report.sigma = sigma;
  report.T_d = T_d;
  report.tolerance = tol;
  report.max_iters = max_iters;

  double c = c_initial(V0, sigma, T_d);
  for (int k = 0; k < max_iters; ++k) {
    ControlIterate it;
    it.clamped = c > 0.5;
    it.c = it.clamped ? 0.5 : c;
    try {
      it.estimate = estimate(it.c);
    } catch (const Error& e) {
      report.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      throw ControlLoopError(e.code(),
                             "iterate " + std::to_string(k + 1) + ": " + std::string(e.what()),
                             report);
    }
    report.iterates.push_back(it);
    if (std::abs(std::log(it.estimate.mean / T_d)) <= tol) {
      report.converged = true;
      break;
    }
    c = c_update(it.c, V0, sigma, it.estimate.mean, T_d);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Monte Carlo control loop on a drift field with feedback gradient `grad`.
/// Controlled runs are censored at 50 T_d.
template <DriftField S, class Grad>
ControlReport run_control_loop(const S& sys, Grad grad, double V0, const NoiseModel& noise,
                               double T_d, const ExitRegion& region, SimulationSettings settings,
                               int max_iters = 5, double tol = 0.1) {
  settings.max_time = 50.0 * T_d;
  return run_control_loop(
      V0, noise.sigma, T_d,
      [&](double c) {
        return estimate_mean_exit_time(sys, noise, FeedbackControl<Grad>{c, grad}, region,
                                       settings);
      },
      max_iters, tol);
}

}  // namespace qpctl
