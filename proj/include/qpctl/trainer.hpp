#pragma once

#include "qpctl/characteristics.hpp"
#include "qpctl/core.hpp"
#include "qpctl/dynamics.hpp"
#include "qpctl/net.hpp"
#include "qpctl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace qpctl {

struct LossBreakdown {
  double L_p = 0.0;
  double L_H = 0.0;
  double L_0 = 0.0;
  double L_d = 0.0;
  double L_all = 0.0;
};

struct LossWeights {
  double gradient = 1.0;  // L_p
  double hamilton = 1.0;  // L_H
  double anchor = 1.0;    // L_0
  double data = 1.0;      // L_d
};

namespace kernels {

/// |p - grad V|^2, reading grad V from the Jacobian's V row.
inline JacobianKernel gradient_consistency() {
  return [](std::size_t, const Eigen::Vector3d& y, const OutputJacobian& jac,
            Eigen::Vector3d& g_y, OutputJacobian& g_jac) {
    const Vec2 d = y.head<2>() - jac.row(2).transpose();
    g_y.head<2>() = 2.0 * d;
    g_jac.row(2) = -2.0 * d.transpose();
    return d.squaredNorm();
  };
}

/// H(x_i, p)^2 with the drift values F(x_i) precomputed.
inline ValueKernel hamilton_residual(std::shared_ptr<const std::vector<Vec2>> drift) {
  return [drift = std::move(drift)](std::size_t i, const Eigen::Vector3d& y, Eigen::Vector3d& g_y) {
    const Vec2 p = y.head<2>();
    const Vec2& f = (*drift)[i];
    const double h = p.dot(f) + 0.5 * p.squaredNorm();
    g_y.head<2>() = 2.0 * h * (f + p);
    return h * h;
  };
}

inline ValueKernel anchor_value() {
  return [](std::size_t, const Eigen::Vector3d& y, Eigen::Vector3d& g_y) {
    g_y[2] = 2.0 * y[2];
    return y[2] * y[2];
  };
}

inline ValueKernel data_fit(std::shared_ptr<const std::vector<DatasetRecord>> records) {
  return [records = std::move(records)](std::size_t i, const Eigen::Vector3d& y,
                                        Eigen::Vector3d& g_y) {
    const auto& r = (*records)[i];
    const Vec2 dp = y.head<2>() - r.p;
    const double dv = y[2] - r.V;
    g_y.head<2>() = 2.0 * dp;
    g_y[2] = 2.0 * dv;
    return dp.squaredNorm() + dv * dv;
  };
}

inline Eigen::Matrix2Xd to_matrix(const std::vector<Vec2>& points) {
  Eigen::Matrix2Xd m(2, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = points[i];
  return m;
}

}  // namespace kernels

/// The four-part training loss L_all = L_p + L_H + L_0 + L_d (each weighted
/// by LossWeights, all 1 by default). L_p and L_H share one pass over the
/// collocation points.
class TrainingLoss {
 public:
  template <DriftField S>
  TrainingLoss(const S& sys, const std::vector<Vec2>& collocation, const Vec2& stable_point,
               const CharacteristicDataset& dataset, const LossWeights& weights = {},
               bool use_data_term = true) {
    if (collocation.empty()) {
      throw Error(ErrorCode::invalid_argument, "need at least one collocation point");
    }
    auto drift = std::make_shared<std::vector<Vec2>>();
    drift->reserve(collocation.size());
    for (const auto& x : collocation) drift->push_back(sys.field(x));

    const int colloc = program_.add_point_set(kernels::to_matrix(collocation), true);
    term_p_ = program_.add_term("L_p", colloc, weights.gradient, kernels::gradient_consistency());
    term_h_ = program_.add_term("L_H", colloc, weights.hamilton, kernels::hamilton_residual(drift));
    const int anchor = program_.add_point_set(kernels::to_matrix({stable_point}), false);
    term_0_ = program_.add_term("L_0", anchor, weights.anchor, kernels::anchor_value());
    if (use_data_term) {
      if (dataset.empty()) {
        throw Error(ErrorCode::empty_dataset, "the data term needs a non-empty dataset");
      }
      std::vector<Vec2> xs;
      for (const auto& r : dataset.records) xs.push_back(r.x);
      auto records = std::make_shared<std::vector<DatasetRecord>>(dataset.records);
      const int data = program_.add_point_set(kernels::to_matrix(xs), false);
      term_d_ = program_.add_term("L_d", data, weights.data, kernels::data_fit(records));
    }
  }

  LossBreakdown evaluate(const NetParams& params, Eigen::VectorXd* grad, int threads = 1) {
    const auto e = program_.evaluate(params, grad, threads);
    LossBreakdown out;
    out.L_p = e.term_means[static_cast<std::size_t>(term_p_)];
    out.L_H = e.term_means[static_cast<std::size_t>(term_h_)];
    out.L_0 = e.term_means[static_cast<std::size_t>(term_0_)];
    if (term_d_ >= 0) out.L_d = e.term_means[static_cast<std::size_t>(term_d_)];
    out.L_all = e.total;
    return out;
  }

 private:
  LossProgram program_;
  int term_p_ = -1;
  int term_h_ = -1;
  int term_0_ = -1;
  int term_d_ = -1;
};

// Single-term losses, each evaluated as its own program.

inline double loss_p(const NetParams& params, const std::vector<Vec2>& points) {
  LossProgram prog;
  prog.add_term("L_p", prog.add_point_set(kernels::to_matrix(points), true), 1.0,
                kernels::gradient_consistency());
  return prog.evaluate(params, nullptr).total;
}

template <DriftField S>
double loss_H(const S& sys, const NetParams& params, const std::vector<Vec2>& points) {
  auto drift = std::make_shared<std::vector<Vec2>>();
  for (const auto& x : points) drift->push_back(sys.field(x));
  LossProgram prog;
  prog.add_term("L_H", prog.add_point_set(kernels::to_matrix(points), false), 1.0,
                kernels::hamilton_residual(drift));
  return prog.evaluate(params, nullptr).total;
}

inline double loss_0(const NetParams& params, const Vec2& stable_point) {
  const double v = forward(params, stable_point).V;
  return v * v;
}

inline double loss_d(const NetParams& params, const CharacteristicDataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::empty_dataset, "L_d needs a non-empty dataset");
  std::vector<Vec2> xs;
  for (const auto& r : dataset.records) xs.push_back(r.x);
  LossProgram prog;
  prog.add_term("L_d", prog.add_point_set(kernels::to_matrix(xs), false), 1.0,
                kernels::data_fit(std::make_shared<std::vector<DatasetRecord>>(dataset.records)));
  return prog.evaluate(params, nullptr).total;
}

// ---------------------------------------------------------------------------

struct TrainingConfig {
  Rect collocation_domain{-1.5, 0.0, -0.6, 0.6};
  int n_collocation = 5000;
  CharacteristicDataset dataset;
  Vec2 stable_point{-1.0, 0.0};
  long steps = 50000;
  double learning_rate = 0.02;
  std::uint64_t seed = 1;
  LossWeights weights;
  bool use_data_term = true;
  NetArchitecture architecture;
  long trace_every = 100;
  double abort_threshold = 1e6;
  int threads = 1;
};

struct TraceEntry {
  long step = 0;
  LossBreakdown loss;
};

struct TrainingResult {
  NetParams params;
  std::vector<TraceEntry> trace;
  LossBreakdown final_loss;
};

class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, std::vector<TraceEntry> trace)
      : Error(ErrorCode::non_finite_loss, message), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// Collocation points drawn once, uniformly, from counter stream (seed, 1).
inline std::vector<Vec2> sample_collocation(const Rect& domain, int n, std::uint64_t seed) {
  CounterStream rng(seed, 1);
  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(domain.x1_min, domain.x1_max);
    const double b = rng.uniform(domain.x2_min, domain.x2_max);
    pts.emplace_back(a, b);
  }
  return pts;
}

inline void validate(const TrainingConfig& cfg) {
  if (cfg.n_collocation < 1) throw Error(ErrorCode::invalid_argument, "n_collocation must be >= 1");
  if (cfg.steps < 0) throw Error(ErrorCode::invalid_argument, "steps must be >= 0");
  if (cfg.collocation_domain.degenerate()) {
    throw Error(ErrorCode::invalid_argument, "collocation domain is degenerate");
  }
  if (!cfg.collocation_domain.contains(cfg.stable_point)) {
    throw Error(ErrorCode::invalid_argument, "stable point lies outside the collocation domain");
  }
  if (cfg.use_data_term) {
    if (cfg.dataset.empty()) throw Error(ErrorCode::empty_dataset, "training dataset is empty");
    if (!cfg.collocation_domain.contains(cfg.dataset.domain)) {
      throw Error(ErrorCode::invalid_argument, "dataset domain exceeds the collocation domain");
    }
  }
}

/// Full-batch Adam on L_all. The trace holds the loss at every
/// `trace_every`-th step (evaluated before that step's update) plus the loss
/// of the final parameters.
template <DriftField S>
TrainingResult train(const S& sys, const TrainingConfig& cfg,
                     const std::function<void(const TraceEntry&)>& progress = {}) {
  validate(cfg);
  const auto collocation = sample_collocation(cfg.collocation_domain, cfg.n_collocation, cfg.seed);
  TrainingLoss loss(sys, collocation, cfg.stable_point, cfg.dataset, cfg.weights,
                    cfg.use_data_term);

  TrainingResult result{init_params(cfg.architecture, cfg.seed), {}, {}};
  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  Eigen::VectorXd grad;
  const long every = std::max(1L, cfg.trace_every);

  auto check = [&](const LossBreakdown& l, long step) {
    if (!std::isfinite(l.L_all) || l.L_all > cfg.abort_threshold) {
      result.trace.push_back({step, l});
      throw TrainingAborted("loss became " + io::fmt(l.L_all) + " at step " + std::to_string(step),
                            result.trace);
    }
  };

  for (long step = 0; step < cfg.steps; ++step) {
    const LossBreakdown l = loss.evaluate(result.params, &grad, cfg.threads);
    check(l, step);
    if (step % every == 0) {
      result.trace.push_back({step, l});
      if (progress) progress(result.trace.back());
    }
    adam_step(result.params, grad, adam);
  }
  result.final_loss = loss.evaluate(result.params, nullptr, cfg.threads);
  check(result.final_loss, cfg.steps);
  result.trace.push_back({cfg.steps, result.final_loss});
  if (progress) progress(result.trace.back());
  return result;
}

}  // namespace qpctl
