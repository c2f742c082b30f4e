#include <catch2/catch_amalgamated.hpp>

#include "qpctl/trainer.hpp"
#include "support.hpp"

#include <cmath>

using namespace qpctl;
using namespace qpctl::testing;
using Catch::Approx;

namespace {

/// One hidden unit; output biases set directly so outputs are known constants
/// when the hidden weights are zero.
NetParams constant_net(double p1, double p2, double v) {
  NetArchitecture arch;
  arch.hidden_sizes = {1};
  NetParams params(arch, 0);
  params.bias(1) << p1, p2, v;
  return params;
}

CharacteristicDataset one_record(const Vec2& x, const Vec2& p, double v) {
  CharacteristicDataset d;
  d.domain = {-1.5, 0, -0.6, 0.6};
  d.records.push_back({x, p, v});
  d.cells.push_back(grid_cell(d.domain, 20, 20, x));
  return d;
}

}  // namespace

TEST_CASE("zero network gives zero L_p, L_H and L_0") {
  const MaierStein sys(1.0);
  const NetParams zero({}, 0);
  const std::vector<Vec2> pts{{-0.5, 0.1}, {-1.2, -0.3}};
  CHECK(loss_p(zero, pts) == 0.0);
  CHECK(loss_H(sys, zero, pts) == 0.0);
  CHECK(loss_0(zero, {-1, 0}) == 0.0);
}

TEST_CASE("hand-built single-point losses") {
  const MaierStein sys(1.0);
  // p = (1, 0) with grad V = 0
  CHECK(loss_p(constant_net(1, 0, 0.7), {{-0.5, 0.2}}) == 1.0);
  // F(-1, 0) = 0, so H = |p|^2 / 2 = 2
  CHECK(loss_H(sys, constant_net(2, 0, 0), {{-1, 0}}) == 4.0);
  CHECK(loss_0(constant_net(0, 0, 0.3), {-1, 0}) == Approx(0.09));
}

TEST_CASE("data loss on the seed-circle record") {
  const NetParams zero({}, 0);
  const auto d = one_record({-0.98, 0}, {0.08, 0}, 0.0008);
  CHECK(loss_d(zero, d) == Approx(0.00640064).epsilon(1e-12));
  auto doubled = d;
  doubled.records.push_back(d.records[0]);
  doubled.cells.push_back(d.cells[0]);
  CHECK(loss_d(zero, doubled) == Approx(loss_d(zero, d)).epsilon(1e-15));
  CHECK(loss_d(constant_net(0.08, 0, 0.0008), d) == Approx(0.0).margin(1e-30));
  CHECK_THROWS_AS(loss_d(zero, CharacteristicDataset{}), Error);
}

TEST_CASE("analytic momentum solves L_H") {
  const MaierStein sys(1.0);
  const auto pts = sample_collocation({-1.5, 0, -0.6, 0.6}, 500, 3);
  double sum = 0.0;
  for (const auto& x : pts) {
    const double h = hamiltonian(sys, x, analytic_quasipotential_gradient(sys, x));
    sum += h * h;
  }
  CHECK(sum / pts.size() <= 1e-20);
}

TEST_CASE("loss breakdown is additive") {
  const MaierStein sys(5.0);
  const auto pts = sample_collocation({-1.5, 0, -0.6, 0.6}, 50, 4);
  const auto d = one_record({-0.98, 0}, {0.08, 0}, 0.0008);
  const auto params = random_params(5);
  TrainingLoss loss(sys, pts, {-1, 0}, d);
  const auto l = loss.evaluate(params, nullptr);
  CHECK(l.L_all == Approx(l.L_p + l.L_H + l.L_0 + l.L_d).epsilon(1e-15));
  CHECK(l.L_p == Approx(loss_p(params, pts)).epsilon(1e-13));
  CHECK(l.L_H == Approx(loss_H(sys, params, pts)).epsilon(1e-13));
  CHECK(l.L_0 == Approx(loss_0(params, {-1, 0})).epsilon(1e-13));
  CHECK(l.L_d == Approx(loss_d(params, d)).epsilon(1e-13));
}

TEST_CASE("zero value at the anchor gives zero anchor gradient") {
  NetParams params = random_params(6);
  params.bias(params.layer_count() - 1)[2] -= forward(params, {-1, 0}).V;
  REQUIRE(std::abs(forward(params, {-1, 0}).V) < 1e-15);
  LossProgram prog;
  prog.add_term("L_0", prog.add_point_set(kernels::to_matrix({{-1, 0}}), false), 1.0,
                kernels::anchor_value());
  Eigen::VectorXd grad;
  prog.evaluate(params, &grad);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("duplicated collocation point doubles its contribution") {
  const MaierStein sys(1.0);
  const auto params = random_params(7);
  auto grad_of = [&](const std::vector<Vec2>& pts) {
    LossProgram prog;
    prog.add_term("L_H", prog.add_point_set(kernels::to_matrix(pts), false), 1.0,
                  kernels::hamilton_residual(std::make_shared<std::vector<Vec2>>([&] {
                    std::vector<Vec2> f;
                    for (const auto& x : pts) f.push_back(sys.field(x));
                    return f;
                  }())));
    Eigen::VectorXd g;
    const double v = prog.evaluate(params, &g).total * static_cast<double>(pts.size());
    return std::make_pair(v, g * static_cast<double>(pts.size()));
  };
  const Vec2 a{-0.4, 0.3}, b{-1.1, -0.2};
  const auto single = grad_of({a, b});
  const auto dup = grad_of({a, a, b});
  const auto only_a = grad_of({a});
  CHECK(dup.first == Approx(single.first + only_a.first).epsilon(1e-13));
  CHECK(relative_error(dup.second, single.second + only_a.second) < 1e-13);
}

TEST_CASE("config validation") {
  TrainingConfig cfg;
  CHECK_THROWS_AS(validate(cfg), Error);  // no dataset
  cfg.use_data_term = false;
  CHECK_NOTHROW(validate(cfg));
  cfg.stable_point = {1, 0};
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg.stable_point = {-1, 0};
  cfg.n_collocation = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("short training runs are seeded and deterministic") {
  const MaierStein sys(1.0);
  const auto center = make_fixed_point(sys, {-1, 0});
  ShootConfig shoot_cfg;
  shoot_cfg.count = 200;
  TrainingConfig cfg;
  cfg.dataset = shoot(sys, center, shoot_cfg).dataset;
  cfg.n_collocation = 500;
  cfg.steps = 60;
  cfg.trace_every = 20;
  const auto a = train(sys, cfg);
  const auto b = train(sys, cfg);
  REQUIRE(a.trace.size() == 4);
  CHECK(a.trace.back().step == 60);
  CHECK(a.params.values() == b.params.values());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss.L_all == b.trace[i].loss.L_all);
  CHECK(a.final_loss.L_all < a.trace.front().loss.L_all);
  cfg.threads = 3;
  CHECK(train(sys, cfg).params.values() == a.params.values());
}

TEST_CASE("without the data term training collapses towards the trivial solution") {
  const MaierStein sys(1.0);
  TrainingConfig cfg;
  cfg.use_data_term = false;
  cfg.n_collocation = 500;
  cfg.steps = 1500;
  const auto result = train(sys, cfg);
  // nothing anchors V away from zero, so the learned barrier stays tiny
  CHECK(std::abs(forward(result.params, {0, 0}).V) < 0.05);
  CHECK(result.final_loss.L_all < 1e-3);
}

TEST_CASE("abort on a diverging loss keeps the trace") {
  const MaierStein sys(1.0);
  TrainingConfig cfg;
  cfg.use_data_term = false;
  cfg.n_collocation = 50;
  cfg.steps = 10;
  cfg.abort_threshold = 0.0;  // any positive loss counts as divergence
  try {
    train(sys, cfg);
    FAIL("expected an abort");
  } catch (const TrainingAborted& e) {
    CHECK(e.code() == ErrorCode::non_finite_loss);
    CHECK(e.trace().size() == 1);
  }
}
