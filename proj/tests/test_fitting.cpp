#include <doctest.h>

#include <cmath>
#include <random>

#include "handsyn/asset_builder.hpp"
#include "handsyn/fitting.hpp"
#include "oracles/finite_difference.hpp"

using namespace handsyn;
using handsyn::testing::central_difference;
using handsyn::testing::relative_error;

namespace {

const HandModel& hand() {
  static const HandModel m = build_hand_asset();
  return m;
}

double norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.storage()) s += v * v;
  return std::sqrt(s);
}

FitConfig short_config() {
  FitConfig cfg;
  cfg.coarse.iters_per_epoch = 600;
  cfg.coarse.lr_decay_every = 200;
  cfg.fine.epochs = 2;
  cfg.fine.iters_per_epoch = 600;
  cfg.fine.lr_decay_every = 200;
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule divides by 10 every 1000 iterations and resets per epoch") {
  const FineConfig f;
  const double expect[] = {1e-3, 1e-3, 1e-4, 1e-5, 1e-3, 1e-4};
  const std::size_t at[] = {0, 999, 1000, 2000, 3000, 4000};
  for (int i = 0; i < 6; ++i)
    CHECK(scheduled_lr(f.lr_pose, at[i], f.iters_per_epoch, f.lr_decay_every, f.lr_decay_factor) ==
          doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("two-stage fit with default settings: schedule trace and recovery") {
  const HandModel& m = hand();
  const FitConfig cfg;
  const PoseState gt = sample_target_state(m, 42);
  const auto target = lbs_forward(m, gt);
  const FitResult r = fit(m, target.vertices, target.joints, cfg);

  REQUIRE(r.coarse.loss_trace.size() == 2 * 3000);
  REQUIRE(r.fine.loss_trace.size() == 4 * 3000);
  REQUIRE(r.fine.lr_trace.size() == 4 * 3000);
  CHECK(r.fine.lr_trace[0] == 1e-3);
  CHECK(r.fine.lr_trace[1000] == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(r.fine.lr_trace[2000] == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK(r.fine.lr_trace[3000] == 1e-3);
  CHECK(r.coarse.lr_trace[0] == 1.0);
  CHECK(r.coarse.lr_trace[2999] == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(r.coarse.lr_trace[3000] == 1.0);

  CHECK(r.coarse.loss_trace[0] >= r.coarse.loss_trace[2999]);
  CHECK(r.fine.vertex_rms < 5e-3);
  CHECK(r.fine.vertex_rms < r.coarse.vertex_rms);
}

TEST_CASE("coarse stage recovers a rigid transform of the rest pose") {
  const HandModel& m = hand();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PoseState gt = sample_target_state(m, seed);
    gt.pose.fill(0.0);
    gt.shape.fill(0.0);
    const auto target = lbs_forward(m, gt);
    const auto r = fit_coarse(m, target.vertices, target.joints, FitConfig{});
    CHECK(r.report.vertex_rms < 1e-3);
    CHECK(r.report.loss_trace.front() >= r.report.loss_trace[2999]);
  }
}

TEST_CASE("rest-pose target is a zero-residual fixed point") {
  const HandModel& m = hand();
  const auto rest = lbs_forward(m, PoseState::zeros(m));
  const auto r = fit_coarse(m, rest.vertices, rest.joints, short_config());
  CHECK(r.report.loss_trace.front() == 0.0);
  CHECK(r.rotation == Mat(1, 3));
  CHECK(r.translation == Mat(1, 3));

  const auto f = fit_fine(m, rest.vertices, r.rotation, r.translation, short_config());
  CHECK(f.loss_trace.front() == 0.0);
  CHECK(norm(f.state.pose) == 0.0);
  CHECK(norm(f.state.shape) == 0.0);
  CHECK(f.vertex_rms < 1e-15);
}

TEST_CASE("stronger regularizers shrink the recovered coefficients") {
  const HandModel& m = hand();
  const PoseState gt = sample_target_state(m, 8);
  const auto target = lbs_forward(m, gt);
  FitConfig base = short_config();
  FitConfig heavy = base;
  heavy.fine.lambda_pose = 1e6;
  heavy.fine.lambda_shape = 1e6;
  const auto a = fit_fine(m, target.vertices, gt.rotation, gt.translation, base);
  const auto b = fit_fine(m, target.vertices, gt.rotation, gt.translation, heavy);
  CHECK(norm(b.state.pose) < norm(a.state.pose));
  CHECK(norm(b.state.shape) < norm(a.state.shape));
}

TEST_CASE("fitting is deterministic and the batch fitter is order-stable") {
  const HandModel& m = hand();
  FitConfig cfg = short_config();
  std::vector<FitTarget> targets;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto t = lbs_forward(m, sample_target_state(m, 100 + s));
    targets.push_back({t.vertices, t.joints});
  }
  const auto seq = fit_batch(m, targets, cfg, 1);
  const auto par = fit_batch(m, targets, cfg, 3);
  REQUIRE(seq.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(seq[i].fine.loss_trace == par[i].fine.loss_trace);
    CHECK(seq[i].coarse.loss_trace == par[i].coarse.loss_trace);
    CHECK(seq[i].state.pose == par[i].state.pose);
    CHECK(seq[i].state.translation == par[i].state.translation);
    const auto single = fit(m, targets[i].vertices, targets[i].joints, cfg);
    CHECK(single.state.shape == seq[i].state.shape);
  }
  CHECK(seq[0].state.pose != seq[1].state.pose);
}

TEST_CASE("shifting the target shifts the coarse translation by the same amount") {
  const HandModel& m = hand();
  PoseState gt = sample_target_state(m, 77);
  gt.pose.fill(0.0);
  gt.shape.fill(0.0);
  const auto target = lbs_forward(m, gt);
  const double delta[3] = {0.05, -0.02, 0.1};
  Mat sv = target.vertices, sj = target.joints;
  for (std::size_t i = 0; i < sv.rows(); ++i)
    for (int a = 0; a < 3; ++a) sv(i, a) += delta[a];
  for (std::size_t i = 0; i < sj.rows(); ++i)
    for (int a = 0; a < 3; ++a) sj(i, a) += delta[a];
  const auto r0 = fit_coarse(m, target.vertices, target.joints, FitConfig{});
  const auto r1 = fit_coarse(m, sv, sj, FitConfig{});
  for (int a = 0; a < 3; ++a) CHECK(std::abs(r1.translation[a] - r0.translation[a] - delta[a]) < 5e-4);
  // Axis-angle vectors may alias (angle vs. 2π − angle); compare the rotations themselves.
  double q0[9], q1[9];
  diff::rodrigues_value(r0.rotation.data(), q0);
  diff::rodrigues_value(r1.rotation.data(), q1);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(q0[k] - q1[k]) < 3e-3);
}

TEST_CASE("fitting loss gradients match central differences") {
  const HandModel& m = hand();
  const FitConfig cfg;
  const double u = cfg.loss_units_per_meter;
  const auto rest = lbs_forward(m, PoseState::zeros(m));
  Mat rv = rest.vertices, rj = rest.joints;
  for (auto& v : rv.storage()) v *= u;
  for (auto& v : rj.storage()) v *= u;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);

  for (int seed = 0; seed < 100; ++seed) {
    const auto target = lbs_forward(m, sample_target_state(m, 500 + seed));
    Mat tv = target.vertices, tj = target.joints;
    for (auto& v : tv.storage()) v *= u;
    for (auto& v : tj.storage()) v *= u;

    // Coarse: 6 parameters.
    std::vector<double> x(6);
    for (auto& v : x) v = 0.5 * n(rng);
    auto coarse_eval = [&](const std::vector<double>& p, std::vector<double>* grad) {
      diff::Tape t;
      diff::Var r = t.variable(Mat(1, 3, {p[0], p[1], p[2]}));
      diff::Var tr = t.variable(Mat(1, 3, {100 * p[3], 100 * p[4], 100 * p[5]}));
      diff::Var l = coarse_loss(t, rv, rj, r, tr, tv, tj, cfg);
      if (grad) {
        const diff::Var ps[] = {r, tr};
        auto g = diff::gradients(l, ps);
        *grad = {g[0][0], g[0][1], g[0][2], 100 * g[1][0], 100 * g[1][1], 100 * g[1][2]};
      }
      return l.scalar();
    };
    std::vector<double> g;
    coarse_eval(x, &g);
    CHECK(relative_error(g, central_difference([&](const std::vector<double>& p) { return coarse_eval(p, nullptr); }, x)) < 1e-4);

    if (seed % 10 != 0) continue;
    // Fine: all parameters of the desk asset.
    const std::size_t P = m.pose_dim(), S = m.shape_dim();
    std::vector<double> y(P + S + 6);
    for (auto& v : y) v = 0.2 * n(rng);
    auto fine_eval = [&](const std::vector<double>& p, std::vector<double>* grad) {
      diff::Tape t;
      diff::Var pose = t.variable(Mat(1, P, std::vector<double>(p.begin(), p.begin() + P)));
      diff::Var shape = t.variable(Mat(1, S, std::vector<double>(p.begin() + P, p.begin() + P + S)));
      diff::Var r = t.variable(Mat(1, 3, {p[P + S], p[P + S + 1], p[P + S + 2]}));
      diff::Var tr = t.variable(Mat(1, 3, {100 * p[P + S + 3], 100 * p[P + S + 4], 400 + 100 * p[P + S + 5]}));
      diff::Var l = fine_loss(t, m, pose, shape, r, tr, tv, cfg);
      if (grad) {
        const diff::Var ps[] = {pose, shape, r, tr};
        auto gs = diff::gradients(l, ps);
        grad->clear();
        for (int k = 0; k < 3; ++k) grad->insert(grad->end(), gs[k].storage().begin(), gs[k].storage().end());
        for (int a = 0; a < 3; ++a) grad->push_back(100 * gs[3][a]);
      }
      return l.scalar();
    };
    std::vector<double> gf;
    fine_eval(y, &gf);
    CHECK(relative_error(gf, central_difference([&](const std::vector<double>& p) { return fine_eval(p, nullptr); }, y)) < 1e-4);
  }
}

TEST_CASE("non-finite loss aborts with the iteration index") {
  const HandModel& m = hand();
  const auto target = lbs_forward(m, sample_target_state(m, 3));
  FitConfig cfg = short_config();
  cfg.coarse.lr_trans = 1e200;
  try {
    fit_coarse(m, target.vertices, target.joints, cfg);
    FAIL("expected FitError");
  } catch (const FitError& e) {
    CHECK(e.iteration() == 1);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
}

TEST_CASE("invalid configurations and targets are rejected") {
  const HandModel& m = hand();
  const auto target = lbs_forward(m, PoseState::zeros(m));
  FitConfig cfg;
  cfg.fine.iters_per_epoch = 2500;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FitConfig{};
  cfg.coarse.lr_rot = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(fit_coarse(m, Mat(3, 3), target.joints, short_config()), std::invalid_argument);
  Mat bad = target.vertices;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(fit_coarse(m, bad, target.joints, short_config()), std::invalid_argument);
}
