#pragma once

#include "qpctl/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <concepts>
#include <string>
#include <vector>

namespace qpctl {

/// A planar drift field F with its Jacobian (dF_i/dx_j). Custom systems plug
/// in by providing these two members; `field` and `jacobian` must be
/// consistent and continuously differentiable on the working domain.
template <class S>
concept DriftField = requires(const S& s, const Vec2& x) {
  { s.field(x) } -> std::convertible_to<Vec2>;
  { s.jacobian(x) } -> std::convertible_to<Mat2>;
};

/// dx1 = x1 - x1^3 - gamma x1 x2^2,  dx2 = -(1 + x1^2) x2.
class MaierStein {
 public:
  explicit MaierStein(double gamma = 1.0) : gamma_(gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
      throw Error(ErrorCode::invalid_argument, "Maier-Stein gamma must be positive");
    }
  }

  double gamma() const { return gamma_; }

  Vec2 field(const Vec2& x) const {
    const double a = x[0];
    const double b = x[1];
    return {a - a * a * a - gamma_ * a * b * b, -(1.0 + a * a) * b};
  }

  Mat2 jacobian(const Vec2& x) const {
    const double a = x[0];
    const double b = x[1];
    Mat2 j;
    j << 1.0 - 3.0 * a * a - gamma_ * b * b, -2.0 * gamma_ * a * b,
        -2.0 * a * b, -(1.0 + a * a);
    return j;
  }

 private:
  double gamma_;
};

static_assert(DriftField<MaierStein>);

template <DriftField S>
Vec2 eval_field(const S& sys, const Vec2& x) {
  require_finite(x, "field argument");
  return sys.field(x);
}

template <DriftField S>
Mat2 eval_jacobian(const S& sys, const Vec2& x) {
  require_finite(x, "jacobian argument");
  return sys.jacobian(x);
}

/// H(x, p) = <p, F(x)> + |p|^2 / 2.
template <DriftField S>
double hamiltonian(const S& sys, const Vec2& x, const Vec2& p) {
  return p.dot(sys.field(x)) + 0.5 * p.squaredNorm();
}

/// l(x) = F(x) + gradV / 2, the component of F orthogonal to gradV when V
/// solves the Hamilton-Jacobi equation.
template <DriftField S>
Vec2 rotational_component(const S& sys, const Vec2& x, const Vec2& grad_v) {
  require_finite(x, "point");
  require_finite(grad_v, "quasipotential gradient");
  return sys.field(x) + 0.5 * grad_v;
}

// ---------------------------------------------------------------------------
// Fixed points

enum class FixedPointKind { stable_node, saddle, unstable };

inline std::string_view to_string(FixedPointKind kind) {
  switch (kind) {
    case FixedPointKind::stable_node: return "stable_node";
    case FixedPointKind::saddle: return "saddle";
    case FixedPointKind::unstable: return "unstable";
  }
  return "unknown";
}

struct FixedPoint {
  Vec2 location = Vec2::Zero();
  FixedPointKind kind = FixedPointKind::unstable;
  std::array<std::complex<double>, 2> eigenvalues{};
};

inline std::array<std::complex<double>, 2> eigenvalues(const Mat2& j) {
  const double half_trace = 0.5 * j.trace();
  const double disc = half_trace * half_trace - j.determinant();
  if (disc >= 0.0) {
    const double r = std::sqrt(disc);
    return {std::complex<double>(half_trace - r, 0.0), std::complex<double>(half_trace + r, 0.0)};
  }
  const double w = std::sqrt(-disc);
  return {std::complex<double>(half_trace, -w), std::complex<double>(half_trace, w)};
}

/// Real parts within `degenerate_tol` of zero are reported as unstable.
inline FixedPointKind classify(const std::array<std::complex<double>, 2>& ev,
                               double degenerate_tol = 1e-8) {
  const double r0 = ev[0].real();
  const double r1 = ev[1].real();
  if (std::abs(r0) <= degenerate_tol || std::abs(r1) <= degenerate_tol) {
    return FixedPointKind::unstable;
  }
  if (r0 < 0.0 && r1 < 0.0) return FixedPointKind::stable_node;
  if ((r0 < 0.0) != (r1 < 0.0)) return FixedPointKind::saddle;
  return FixedPointKind::unstable;
}

template <DriftField S>
FixedPoint make_fixed_point(const S& sys, const Vec2& location) {
  FixedPoint fp;
  fp.location = location;
  fp.eigenvalues = eigenvalues(sys.jacobian(location));
  fp.kind = classify(fp.eigenvalues);
  return fp;
}

struct NewtonSettings {
  int seeds_per_axis = 10;
  int max_iterations = 50;
  double step_tolerance = 1e-12;
  double residual_tolerance = 1e-10;
  double dedup_radius = 1e-6;
};

/// Newton iteration from a seeds_per_axis^2 grid of cell centres in `box`.
/// Converged points inside the box are deduplicated and classified; the
/// result is sorted by (x1, x2). An empty result is not an error.
template <DriftField S>
std::vector<FixedPoint> find_fixed_points(const S& sys, const Rect& box,
                                          const NewtonSettings& settings = {}) {
  if (box.degenerate()) {
    throw Error(ErrorCode::invalid_argument, "fixed-point search box is degenerate");
  }
  const int n = std::max(1, settings.seeds_per_axis);
  std::vector<Vec2> found;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      Vec2 x{box.x1_min + (i + 0.5) * box.width() / n, box.x2_min + (k + 0.5) * box.height() / n};
      bool converged = false;
      for (int it = 0; it < settings.max_iterations; ++it) {
        const Vec2 f = sys.field(x);
        const Mat2 j = sys.jacobian(x);
        if (!is_finite(f) || std::abs(j.determinant()) < 1e-14) break;
        const Vec2 step = j.inverse() * f;
        x -= step;
        if (!is_finite(x)) break;
        if (step.norm() <= settings.step_tolerance) {
          converged = true;
          break;
        }
      }
      if (!converged) {
        converged = is_finite(x) && sys.field(x).norm() <= settings.residual_tolerance;
      }
      if (!converged || sys.field(x).norm() > settings.residual_tolerance) continue;
      if (!box.contains(x)) continue;
      const bool duplicate = std::any_of(found.begin(), found.end(), [&](const Vec2& y) {
        return (x - y).norm() <= settings.dedup_radius;
      });
      if (!duplicate) found.push_back(x);
    }
  }
  std::sort(found.begin(), found.end(), [](const Vec2& a, const Vec2& b) {
    return a[0] != b[0] ? a[0] < b[0] : a[1] < b[1];
  });
  std::vector<FixedPoint> out;
  out.reserve(found.size());
  for (const auto& x : found) out.push_back(make_fixed_point(sys, x));
  return out;
}

// ---------------------------------------------------------------------------
// Gradient case (gamma = 1): F = -grad U, quasipotential V = 2U.

/// U(x) = ((x1^2 - 1)^2 + 2 x2^2 (x1^2 + 1)) / 4.
inline double maier_stein_potential(const Vec2& x) {
  const double a2 = x[0] * x[0];
  return 0.25 * ((a2 - 1.0) * (a2 - 1.0) + 2.0 * x[1] * x[1] * (a2 + 1.0));
}

inline Vec2 maier_stein_potential_gradient(const Vec2& x) {
  const double a = x[0];
  const double b = x[1];
  return {a * a * a - a + a * b * b, b * (a * a + 1.0)};
}

inline void require_gradient_case(const MaierStein& sys) {
  if (sys.gamma() != 1.0) {
    throw Error(ErrorCode::unsupported_oracle,
                "analytic quasipotential is only known for gamma = 1 (got " +
                    std::to_string(sys.gamma()) + ")");
  }
}

inline double analytic_quasipotential(const MaierStein& sys, const Vec2& x) {
  require_gradient_case(sys);
  require_finite(x, "point");
  return 2.0 * maier_stein_potential(x);
}

inline Vec2 analytic_quasipotential_gradient(const MaierStein& sys, const Vec2& x) {
  require_gradient_case(sys);
  require_finite(x, "point");
  return 2.0 * maier_stein_potential_gradient(x);
}

// ---------------------------------------------------------------------------

/// Additive noise with E[(d eta_i)^2] = sigma dt per component.
struct NoiseModel {
  double sigma = 0.0;

  explicit NoiseModel(double s = 0.0) : sigma(s) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::invalid_argument, "noise intensity must be finite and >= 0");
    }
  }

  double increment_stddev(double dt) const { return std::sqrt(sigma * dt); }
};

}  // namespace qpctl
