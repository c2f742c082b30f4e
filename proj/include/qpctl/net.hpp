#pragma once

#include "qpctl/core.hpp"
#include "qpctl/parallel.hpp"
#include "qpctl/rng.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace qpctl {

/// 2 inputs -> tanh hidden layers -> 3 linear outputs ordered (p1, p2, V).
struct NetArchitecture {
  static constexpr int input_dim = 2;
  static constexpr int output_dim = 3;
  std::vector<int> hidden_sizes{20, 20, 20, 20};

  int layer_count() const { return static_cast<int>(hidden_sizes.size()) + 1; }
  int fan_in(int layer) const { return layer == 0 ? input_dim : hidden_sizes[layer - 1]; }
  int fan_out(int layer) const {
    return layer == layer_count() - 1 ? output_dim : hidden_sizes[layer];
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l) {
      n += static_cast<std::size_t>(fan_out(l)) * (fan_in(l) + 1);
    }
    return n;
  }
  void validate() const {
    for (int h : hidden_sizes) {
      if (h < 1) throw Error(ErrorCode::shape_mismatch, "hidden layer sizes must be positive");
    }
  }
  bool operator==(const NetArchitecture&) const = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// All weights and biases in one flat vector: for each layer the row-major
/// fan_out x fan_in weight matrix followed by its bias.
class NetParams {
 public:
  NetParams() : NetParams(NetArchitecture{}, 0) {}
  NetParams(NetArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
    arch_.validate();
    std::size_t offset = 0;
    for (int l = 0; l < arch_.layer_count(); ++l) {
      weight_offset_.push_back(offset);
      offset += static_cast<std::size_t>(arch_.fan_out(l)) * arch_.fan_in(l);
      bias_offset_.push_back(offset);
      offset += static_cast<std::size_t>(arch_.fan_out(l));
    }
    values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
  }

  const NetArchitecture& architecture() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  int layer_count() const { return arch_.layer_count(); }
  Eigen::Index size() const { return values_.size(); }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  Eigen::Map<RowMatrix> weights(int l) {
    return {values_.data() + weight_offset_[l], arch_.fan_out(l), arch_.fan_in(l)};
  }
  Eigen::Map<const RowMatrix> weights(int l) const {
    return {values_.data() + weight_offset_[l], arch_.fan_out(l), arch_.fan_in(l)};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) {
    return {values_.data() + bias_offset_[l], arch_.fan_out(l)};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const {
    return {values_.data() + bias_offset_[l], arch_.fan_out(l)};
  }

  std::size_t weight_offset(int l) const { return weight_offset_[l]; }
  std::size_t bias_offset(int l) const { return bias_offset_[l]; }

  bool all_finite() const { return values_.allFinite(); }

 private:
  NetArchitecture arch_;
  std::uint64_t seed_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  Eigen::VectorXd values_;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero. The draw
/// order is layer by layer, row-major, from counter stream (seed, 0).
inline NetParams init_params(const NetArchitecture& arch, std::uint64_t seed) {
  NetParams params(arch, seed);
  CounterStream rng(seed, 0);
  for (int l = 0; l < params.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / (arch.fan_in(l) + arch.fan_out(l)));
    auto w = params.weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
  }
  return params;
}

/// tanh written as 1 - 2 / (exp(2z) + 1) so Eigen can vectorise it over
/// batches; the scalar form below is the same expression.
inline double activation(double z) { return 1.0 - 2.0 / (std::exp(2.0 * z) + 1.0); }

template <class Derived>
auto activation(const Eigen::ArrayBase<Derived>& z) {
  return 1.0 - 2.0 / ((2.0 * z).exp() + 1.0);
}

struct NetOutput {
  Vec2 p = Vec2::Zero();
  double V = 0.0;
};

using OutputJacobian = Eigen::Matrix<double, 3, 2>;

/// Single-point evaluation carrying the value and both input tangents
/// through the layers. Keeps scratch buffers, so one instance per thread.
class PointEvaluator {
 public:
  /// Returns (p1, p2, V) and fills `jac` (d output_i / d x_j) when given.
  Eigen::Vector3d evaluate(const NetParams& params, const Vec2& x, OutputJacobian* jac) {
    const int layers = params.layer_count();
    const int tracks = jac ? 3 : 1;
    in_.resize(2, tracks);
    in_.col(0) = x;
    if (jac) {
      in_.col(1) << 1.0, 0.0;
      in_.col(2) << 0.0, 1.0;
    }
    for (int l = 0; l < layers; ++l) {
      z_.noalias() = params.weights(l) * in_;
      z_.col(0) += params.bias(l);
      if (l == layers - 1) break;
      in_.resize(z_.rows(), tracks);
      for (Eigen::Index i = 0; i < z_.rows(); ++i) {
        const double a = activation(z_(i, 0));
        const double s = 1.0 - a * a;
        in_(i, 0) = a;
        for (int t = 1; t < tracks; ++t) in_(i, t) = s * z_(i, t);
      }
    }
    if (jac) *jac = z_.rightCols<2>();
    return z_.col(0);
  }

 private:
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> in_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> z_;
};

inline NetOutput forward(const NetParams& params, const Vec2& x) {
  require_finite(x, "network input");
  PointEvaluator eval;
  const Eigen::Vector3d y = eval.evaluate(params, x, nullptr);
  return {{y[0], y[1]}, y[2]};
}

/// Rows: outputs (p1, p2, V); columns: inputs (x1, x2). Row 2 is grad V.
inline OutputJacobian input_jacobian(const NetParams& params, const Vec2& x) {
  require_finite(x, "network input");
  PointEvaluator eval;
  OutputJacobian jac;
  eval.evaluate(params, x, &jac);
  return jac;
}

/// grad V of the network, as a callable field for path tracing and control.
class NetGradient {
 public:
  explicit NetGradient(const NetParams& params) : params_(&params) {}

  Vec2 operator()(const Vec2& x) {
    OutputJacobian jac;
    eval_.evaluate(*params_, x, &jac);
    return jac.row(2).transpose();
  }

  double value(const Vec2& x) { return eval_.evaluate(*params_, x, nullptr)[2]; }

 private:
  const NetParams* params_;
  PointEvaluator eval_;
};

// ---------------------------------------------------------------------------
// Batched evaluation with reverse-mode parameter gradients.

using Outputs3 = Eigen::Matrix<double, 3, Eigen::Dynamic>;

/// Evaluates a batch of points, optionally with the two input tangents, and
/// backpropagates output adjoints (including adjoints of the input tangents,
/// i.e. through grad_x of the outputs) into a parameter gradient.
class BatchWorkspace {
 public:
  void forward(const NetParams& params, const Eigen::Ref<const Eigen::Matrix2Xd>& points,
               bool with_jacobian) {
    const int layers = params.layer_count();
    batch_ = points.cols();
    tracks_ = with_jacobian ? 3 : 1;
    const Eigen::Index b = batch_;
    stacks_.resize(static_cast<std::size_t>(layers));
    pre_.resize(static_cast<std::size_t>(layers));
    slope_.resize(static_cast<std::size_t>(layers));

    auto& s0 = stacks_[0];
    s0.resize(2, tracks_ * b);
    s0.leftCols(b) = points;
    if (with_jacobian) {
      s0.middleCols(b, b).row(0).setOnes();
      s0.middleCols(b, b).row(1).setZero();
      s0.rightCols(b).row(0).setZero();
      s0.rightCols(b).row(1).setOnes();
    }
    for (int l = 0; l < layers; ++l) {
      auto& z = pre_[static_cast<std::size_t>(l)];
      z.noalias() = params.weights(l) * stacks_[static_cast<std::size_t>(l)];
      z.leftCols(b).colwise() += params.bias(l);
      if (l == layers - 1) break;
      auto& next = stacks_[static_cast<std::size_t>(l) + 1];
      auto& slope = slope_[static_cast<std::size_t>(l)];
      next.resize(z.rows(), tracks_ * b);
      next.leftCols(b) = activation(z.leftCols(b).array()).matrix();
      slope = 1.0 - next.leftCols(b).array().square();
      for (int t = 1; t < tracks_; ++t) {
        next.middleCols(t * b, b) = (slope * z.middleCols(t * b, b).array()).matrix();
      }
    }
  }

  Eigen::Index batch() const { return batch_; }
  bool has_jacobian() const { return tracks_ == 3; }
  /// (p1, p2, V) per column.
  auto values() const { return pre_.back().leftCols(batch_); }
  /// d outputs / d x_j per column, j = 0 or 1.
  auto tangent(int j) const { return pre_.back().middleCols((j + 1) * batch_, batch_); }

  /// Accumulates d loss / d params into `grad` given `adjoint` shaped like
  /// the output stack: 3 x B (values only) or 3 x 3B (values, d/dx1, d/dx2).
  void backward(const NetParams& params, const Eigen::Ref<const Eigen::MatrixXd>& adjoint,
                Eigen::Ref<Eigen::VectorXd> grad) {
    const int layers = params.layer_count();
    const Eigen::Index b = batch_;
    if (adjoint.rows() != 3 || adjoint.cols() != tracks_ * b || grad.size() != params.size()) {
      throw Error(ErrorCode::shape_mismatch, "adjoint or gradient shape does not match batch");
    }
    g_ = adjoint;
    for (int l = layers - 1; l >= 0; --l) {
      const auto& input = stacks_[static_cast<std::size_t>(l)];
      Eigen::Map<RowMatrix> g_w(grad.data() + params.weight_offset(l), params.weights(l).rows(),
                                params.weights(l).cols());
      g_w.noalias() += g_ * input.transpose();
      Eigen::Map<Eigen::VectorXd>(grad.data() + params.bias_offset(l), g_.rows()) +=
          g_.leftCols(b).rowwise().sum();
      if (l == 0) break;

      g_in_.noalias() = params.weights(l).transpose() * g_;
      // Undo the tanh of layer l-1 on all tracks.
      const auto& slope = slope_[static_cast<std::size_t>(l) - 1];
      const auto& z = pre_[static_cast<std::size_t>(l) - 1];
      const auto a = input.leftCols(b).array();
      g_.resize(g_in_.rows(), tracks_ * b);
      if (tracks_ == 3) {
        const auto gd1 = g_in_.middleCols(b, b).array();
        const auto gd2 = g_in_.rightCols(b).array();
        const auto g_slope = gd1 * z.middleCols(b, b).array() + gd2 * z.rightCols(b).array();
        g_.leftCols(b) = ((g_in_.leftCols(b).array() - 2.0 * g_slope * a) * slope).matrix();
        g_.middleCols(b, b) = (slope * gd1).matrix();
        g_.rightCols(b) = (slope * gd2).matrix();
      } else {
        g_.leftCols(b) = (g_in_.leftCols(b).array() * slope).matrix();
      }
    }
  }

 private:
  Eigen::Index batch_ = 0;
  int tracks_ = 1;
  std::vector<Eigen::MatrixXd> stacks_;  // layer inputs [a | da/dx1 | da/dx2]
  std::vector<Eigen::MatrixXd> pre_;     // pre-activations, same layout
  std::vector<Eigen::ArrayXXd> slope_;   // 1 - tanh^2 of the value track
  Eigen::MatrixXd g_;
  Eigen::MatrixXd g_in_;
};

// ---------------------------------------------------------------------------
// Loss programs

/// Per-point loss on the outputs only: returns the contribution and writes
/// d contribution / d y.
using ValueKernel =
    std::function<double(std::size_t i, const Eigen::Vector3d& y, Eigen::Vector3d& g_y)>;

/// Per-point loss that also reads the input Jacobian of the outputs.
using JacobianKernel =
    std::function<double(std::size_t i, const Eigen::Vector3d& y, const OutputJacobian& jac,
                         Eigen::Vector3d& g_y, OutputJacobian& g_jac)>;

/// A loss assembled from point sets and per-point kernels. Each term
/// contributes weight * mean over its point set. The kernels are the only
/// way to build a loss, so every composite the program accepts has an exact
/// reverse-mode gradient; a kernel that needs Jacobians attached to a point
/// set evaluated without them is rejected when the term is added.
class LossProgram {
 public:
  static constexpr Eigen::Index kChunk = 1024;

  struct Evaluation {
    std::vector<double> term_means;  // unweighted
    double total = 0.0;              // sum of weight * mean, in term order
  };

  int add_point_set(Eigen::Matrix2Xd points, bool with_jacobian) {
    if (points.cols() == 0) {
      throw Error(ErrorCode::invalid_argument, "point set must not be empty");
    }
    if (!points.allFinite()) throw Error(ErrorCode::invalid_argument, "point set has non-finite entries");
    sets_.push_back({std::move(points), with_jacobian, {}});
    rebuild_chunks();
    return static_cast<int>(sets_.size()) - 1;
  }

  int add_term(std::string name, int set, double weight,
               std::variant<ValueKernel, JacobianKernel> kernel) {
    if (set < 0 || set >= static_cast<int>(sets_.size())) {
      throw Error(ErrorCode::invalid_argument, "unknown point set for term '" + name + "'");
    }
    if (!std::isfinite(weight) || weight < 0.0) {
      throw Error(ErrorCode::invalid_argument, "term '" + name + "' needs a finite weight >= 0");
    }
    const bool needs_jac = std::holds_alternative<JacobianKernel>(kernel);
    const bool empty = needs_jac ? !std::get<JacobianKernel>(kernel) : !std::get<ValueKernel>(kernel);
    if (empty) throw Error(ErrorCode::invalid_argument, "term '" + name + "' has no kernel");
    if (needs_jac && !sets_[static_cast<std::size_t>(set)].with_jacobian) {
      throw Error(ErrorCode::invalid_argument,
                  "term '" + name + "' reads input Jacobians but its point set does not carry them");
    }
    terms_.push_back({std::move(name), set, weight, std::move(kernel)});
    sets_[static_cast<std::size_t>(set)].terms.push_back(static_cast<int>(terms_.size()) - 1);
    return static_cast<int>(terms_.size()) - 1;
  }

  std::size_t term_count() const { return terms_.size(); }
  const std::string& term_name(int t) const { return terms_[static_cast<std::size_t>(t)].name; }
  double term_weight(int t) const { return terms_[static_cast<std::size_t>(t)].weight; }

  /// Loss values and, when `grad` is given, the exact parameter gradient of
  /// the total. Chunks may run on several threads; partial sums are reduced
  /// in chunk order so the result does not depend on `threads`.
  Evaluation evaluate(const NetParams& params, Eigen::VectorXd* grad, int threads = 1) {
    if (terms_.empty()) throw Error(ErrorCode::invalid_argument, "loss program has no terms");
    const std::size_t n_chunks = chunks_.size();
    if (partial_grad_.size() != n_chunks || partial_loss_.empty() || partial_loss_.front().size() != terms_.size()) {
      partial_grad_.assign(n_chunks, Eigen::VectorXd());
      partial_loss_.assign(n_chunks, std::vector<double>(terms_.size(), 0.0));
      workspaces_.resize(n_chunks);
      adjoints_.resize(n_chunks);
    }
    parallel_for(n_chunks, threads, [&](std::size_t c) {
      run_chunk(params, c, grad != nullptr);
    });

    Evaluation out;
    out.term_means.assign(terms_.size(), 0.0);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      for (std::size_t t = 0; t < terms_.size(); ++t) out.term_means[t] += partial_loss_[c][t];
    }
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      const auto n = sets_[static_cast<std::size_t>(terms_[t].set)].points.cols();
      out.term_means[t] /= static_cast<double>(n);
      out.total += terms_[t].weight * out.term_means[t];
    }
    if (grad) {
      grad->setZero(params.size());
      for (std::size_t c = 0; c < n_chunks; ++c) *grad += partial_grad_[c];
    }
    return out;
  }

 private:
  struct PointSet {
    Eigen::Matrix2Xd points;
    bool with_jacobian;
    std::vector<int> terms;
  };
  struct Term {
    std::string name;
    int set;
    double weight;
    std::variant<ValueKernel, JacobianKernel> kernel;
  };
  struct Chunk {
    int set;
    Eigen::Index begin;
    Eigen::Index count;
  };

  void rebuild_chunks() {
    chunks_.clear();
    for (std::size_t s = 0; s < sets_.size(); ++s) {
      const auto n = sets_[s].points.cols();
      for (Eigen::Index b = 0; b < n; b += kChunk) {
        chunks_.push_back({static_cast<int>(s), b, std::min(kChunk, n - b)});
      }
    }
    partial_grad_.clear();
    partial_loss_.clear();
  }

  void run_chunk(const NetParams& params, std::size_t c, bool want_grad) {
    const Chunk& chunk = chunks_[c];
    const PointSet& set = sets_[static_cast<std::size_t>(chunk.set)];
    auto& ws = workspaces_[c];
    auto& losses = partial_loss_[c];
    std::fill(losses.begin(), losses.end(), 0.0);
    ws.forward(params, set.points.middleCols(chunk.begin, chunk.count), set.with_jacobian);

    const Eigen::Index b = chunk.count;
    const int tracks = set.with_jacobian ? 3 : 1;
    auto& adjoint = adjoints_[c];
    adjoint.setZero(3, tracks * b);
    const auto values = ws.values();
    Eigen::Vector3d y, g_y;
    OutputJacobian jac, g_jac;
    for (Eigen::Index k = 0; k < b; ++k) {
      y = values.col(k);
      if (set.with_jacobian) {
        jac.col(0) = ws.tangent(0).col(k);
        jac.col(1) = ws.tangent(1).col(k);
      }
      const auto index = static_cast<std::size_t>(chunk.begin + k);
      for (int t : set.terms) {
        const Term& term = terms_[static_cast<std::size_t>(t)];
        const double scale =
            term.weight / static_cast<double>(set.points.cols());
        g_y.setZero();
        double v = 0.0;
        if (const auto* vk = std::get_if<ValueKernel>(&term.kernel)) {
          v = (*vk)(index, y, g_y);
        } else {
          g_jac.setZero();
          v = std::get<JacobianKernel>(term.kernel)(index, y, jac, g_y, g_jac);
          adjoint.col(b + k) += scale * g_jac.col(0);
          adjoint.col(2 * b + k) += scale * g_jac.col(1);
        }
        adjoint.col(k) += scale * g_y;
        losses[static_cast<std::size_t>(t)] += v;
      }
    }
    if (want_grad) {
      partial_grad_[c].setZero(params.size());
      ws.backward(params, adjoint, partial_grad_[c]);
    }
  }

  std::vector<PointSet> sets_;
  std::vector<Term> terms_;
  std::vector<Chunk> chunks_;
  std::vector<BatchWorkspace> workspaces_;
  std::vector<Eigen::MatrixXd> adjoints_;
  std::vector<Eigen::VectorXd> partial_grad_;
  std::vector<std::vector<double>> partial_loss_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  long step = 0;
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
};

/// One bias-corrected Adam update in place.
inline void adam_step(NetParams& params, const Eigen::VectorXd& grad, AdamState& state) {
  if (grad.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "gradient size does not match parameters");
  }
  if (state.first_moment.size() == 0) {
    state.first_moment = Eigen::VectorXd::Zero(params.size());
    state.second_moment = Eigen::VectorXd::Zero(params.size());
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "optimizer state does not match parameters");
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.values().array() -= state.learning_rate * (state.first_moment.array() / c1) /
                             ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace qpctl
