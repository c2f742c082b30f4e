#pragma once

#include "qpctl/core.hpp"
#include "qpctl/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace qpctl {

struct PathSample {
  double t = 0.0;
  Vec2 x = Vec2::Zero();
};

/// Most probable exit path. Samples run forward in physical time, from the
/// stable point out to the saddle neighbourhood.
struct ProbablePath {
  std::vector<PathSample> samples;
  Vec2 start_anchor = Vec2::Zero();  // saddle + offset, where integration began
  Vec2 end_anchor = Vec2::Zero();    // the stable point that captured the path
  double action = 0.0;
};

struct PathSettings {
  double step = 1e-3;
  long max_steps = 1'000'000;
  double capture_radius = 0.02;
  double max_offset = 0.05;
};

/// Thrown when the reverse flow never reaches a stable point. Carries the
/// samples produced so far (in integration order, not time-reversed).
class PathError : public Error {
 public:
  PathError(const std::string& message, std::vector<PathSample> partial)
      : Error(ErrorCode::no_convergence, message), partial_(std::move(partial)) {}
  const std::vector<PathSample>& partial() const { return partial_; }

 private:
  std::vector<PathSample> partial_;
};

/// Trapezoid rule for the integral of |xdot - F(x)|^2 / 2, with xdot the
/// forward difference on each interval and the Lagrangian taken at both ends.
template <DriftField S>
double path_action(const S& sys, std::span<const PathSample> samples) {
  if (samples.size() < 2) throw Error(ErrorCode::invalid_argument, "action needs >= 2 samples");
  double total = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const auto& a = samples[i - 1];
    const auto& b = samples[i];
    const double dt = b.t - a.t;
    if (!(dt > 0.0)) {
      throw Error(ErrorCode::invalid_argument,
                  "path timestamps must be strictly increasing (index " + std::to_string(i) + ")");
    }
    const Vec2 v = (b.x - a.x) / dt;
    const double la = 0.5 * (v - sys.field(a.x)).squaredNorm();
    const double lb = 0.5 * (v - sys.field(b.x)).squaredNorm();
    total += 0.5 * (la + lb) * dt;
  }
  return total;
}

template <DriftField S>
void require_saddle(const S& sys, const Vec2& saddle) {
  require_finite(saddle, "saddle");
  if (sys.field(saddle).norm() > 1e-8) {
    throw Error(ErrorCode::invalid_argument, "the given saddle is not a fixed point");
  }
  if (make_fixed_point(sys, saddle).kind != FixedPointKind::saddle) {
    throw Error(ErrorCode::invalid_argument, "the given fixed point is not a saddle");
  }
}

/// Integrates dx/ds = -(F(x) + grad V(x)) with RK4 from saddle + offset until
/// the state comes within `capture_radius` of one of `stable_points`, then
/// reverses the samples so that the path leaves the stable point at t = 0.
///
/// `grad_v` is any callable Vec2 -> Vec2 (a trained net or an analytic field).
template <DriftField S, class Grad>
ProbablePath trace_most_probable_path(const S& sys, Grad grad_v, const Vec2& saddle,
                                      const Vec2& offset, std::span<const Vec2> stable_points,
                                      const PathSettings& settings = {}) {
  require_saddle(sys, saddle);
  const double r = offset.norm();
  if (!(r > 0.0) || r > settings.max_offset) {
    throw Error(ErrorCode::invalid_argument, "offset length must lie in (0, " +
                                                 std::to_string(settings.max_offset) + "]");
  }
  if (stable_points.empty()) throw Error(ErrorCode::invalid_argument, "no stable points given");
  if (!(settings.step > 0.0) || settings.max_steps < 1) {
    throw Error(ErrorCode::invalid_argument, "path step and step cap must be positive");
  }

  auto rhs = [&](const Vec2& x) -> Vec2 { return -(sys.field(x) + Vec2(grad_v(x))); };
  auto captured = [&](const Vec2& x) -> const Vec2* {
    for (const auto& s : stable_points) {
      if ((x - s).norm() <= settings.capture_radius) return &s;
    }
    return nullptr;
  };

  const double h = settings.step;
  std::vector<Vec2> xs;
  xs.push_back(saddle + offset);
  Vec2 x = xs.back();
  const Vec2* hit = captured(x);
  for (long k = 0; k < settings.max_steps && hit == nullptr; ++k) {
    const Vec2 k1 = rhs(x);
    const Vec2 k2 = rhs(x + 0.5 * h * k1);
    const Vec2 k3 = rhs(x + 0.5 * h * k2);
    const Vec2 k4 = rhs(x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!is_finite(x)) break;
    xs.push_back(x);
    hit = captured(x);
  }

  if (hit == nullptr) {
    std::vector<PathSample> partial;
    partial.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) partial.push_back({static_cast<double>(i) * h, xs[i]});
    throw PathError(is_finite(x) ? "path did not reach a stable point within the step cap"
                                 : "path integration produced a non-finite state",
                    std::move(partial));
  }

  ProbablePath path;
  path.start_anchor = xs.front();
  path.end_anchor = *hit;
  const std::size_t n = xs.size();
  path.samples.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    path.samples.push_back({static_cast<double>(j) * h, xs[n - 1 - j]});
  }
  path.action = path.samples.size() >= 2 ? path_action(sys, std::span<const PathSample>(path.samples))
                                         : 0.0;
  return path;
}

// ---------------------------------------------------------------------------
// Curve comparison

/// Symmetric Hausdorff distance between two point sets.
inline double hausdorff_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::invalid_argument, "empty point set");
  auto directed = [](std::span<const Vec2> from, std::span<const Vec2> to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(directed(a, b), directed(b, a));
}

/// Every `stride`-th point of a path, always keeping the last one.
inline std::vector<Vec2> path_points(const ProbablePath& path, std::size_t stride = 1) {
  stride = std::max<std::size_t>(1, stride);
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < path.samples.size(); i += stride) out.push_back(path.samples[i].x);
  if (!path.samples.empty() && (path.samples.size() - 1) % stride != 0) {
    out.push_back(path.samples.back().x);
  }
  return out;
}

inline std::vector<Vec2> mirrored(std::vector<Vec2> points) {
  for (auto& p : points) p[1] = -p[1];
  return points;
}

}  // namespace qpctl
