#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qpctl {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Error categories surfaced by the library. The CLI prints these names as
/// machine-parsable codes.
enum class ErrorCode {
  domain,
  unsupported_oracle,
  not_stable,
  singular_lyapunov,
  empty_dataset,
  non_finite_loss,
  shape_mismatch,
  no_convergence,
  all_censored,
  invalid_argument,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::domain: return "domain";
    case ErrorCode::unsupported_oracle: return "unsupported_oracle";
    case ErrorCode::not_stable: return "not_stable";
    case ErrorCode::singular_lyapunov: return "singular_lyapunov";
    case ErrorCode::empty_dataset: return "empty_dataset";
    case ErrorCode::non_finite_loss: return "non_finite_loss";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::no_convergence: return "no_convergence";
    case ErrorCode::all_censored: return "all_censored";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline bool is_finite(const Vec2& x) { return std::isfinite(x[0]) && std::isfinite(x[1]); }

inline void require_finite(const Vec2& x, const char* what) {
  if (!is_finite(x)) {
    throw Error(ErrorCode::domain, std::string(what) + " is not finite");
  }
}

/// Axis-aligned rectangle [x1_min, x1_max] x [x2_min, x2_max].
struct Rect {
  double x1_min = 0.0;
  double x1_max = 0.0;
  double x2_min = 0.0;
  double x2_max = 0.0;

  double width() const { return x1_max - x1_min; }
  double height() const { return x2_max - x2_min; }
  bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }

  bool contains(const Vec2& x) const {
    return x[0] >= x1_min && x[0] <= x1_max && x[1] >= x2_min && x[1] <= x2_max;
  }
  bool contains(const Rect& other) const {
    return other.x1_min >= x1_min && other.x1_max <= x1_max && other.x2_min >= x2_min &&
           other.x2_max <= x2_max;
  }

  /// Grows every side by `fraction` of the corresponding half-extent.
  Rect inflated(double fraction) const {
    const double dx = 0.5 * width() * fraction;
    const double dy = 0.5 * height() * fraction;
    return {x1_min - dx, x1_max + dx, x2_min - dy, x2_max + dy};
  }
};

}  // namespace qpctl
