#include "handsyn/fitting.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "handsyn/adam.hpp"

namespace handsyn {

using diff::Tape;
using diff::Var;

namespace {

Mat scaled(const Mat& m, double s) {
  Mat out = m;
  for (auto& v : out.storage()) v *= s;
  return out;
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw std::invalid_argument(std::string("FitConfig.") + name + " must be positive");
}

void require_schedule(std::size_t epochs, std::size_t iters, std::size_t every, double factor,
                      const char* stage) {
  if (epochs == 0 || iters == 0 || every == 0)
    throw std::invalid_argument(std::string("FitConfig.") + stage +
                                ": epochs, iterations and decay interval must be positive");
  if (iters % every != 0)
    throw std::invalid_argument(std::string("FitConfig.") + stage +
                                ": itersPerEpoch must be divisible by lrDecayEvery");
  require_positive(factor, "lrDecayFactor");
}

void check_target(const Mat& m, std::size_t rows, const char* what) {
  if (m.rows() != rows || m.cols() != 3)
    throw std::invalid_argument(std::string("fit: ") + what + " is " + m.shape_string() +
                                ", model produces " + std::to_string(rows) + "x3");
  if (!all_finite(m)) throw std::invalid_argument(std::string("fit: ") + what + " is not finite");
}

Var mean_sq_dist(Var pred, const Mat& target) {
  Var d = pred - pred.tape->constant(target);
  return diff::scale(diff::sum_squares(d), 1.0 / static_cast<double>(target.rows()));
}

// Runs `total` Adam iterations. `loss_fn(tape, vars)` builds the objective from
// the current parameter variables.
template <typename LossFn>
void optimize(std::vector<Mat>& params, const std::vector<double>& base_lrs, std::size_t epochs,
              std::size_t iters_per_epoch, std::size_t decay_every, double decay_factor,
              const char* stage, FitReport& report, LossFn loss_fn) {
  auto adam = diff::AdamState::init(params, base_lrs);
  const std::size_t total = epochs * iters_per_epoch;
  report.loss_trace.reserve(total);
  report.lr_trace.reserve(total);
  for (std::size_t it = 0; it < total; ++it) {
    for (std::size_t g = 0; g < params.size(); ++g)
      adam.learning_rate[g] =
          scheduled_lr(base_lrs[g], it, iters_per_epoch, decay_every, decay_factor);

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.variable(p));
    Var loss;
    try {
      loss = loss_fn(tape, vars);
    } catch (const diff::NonFiniteError& e) {
      throw FitError(stage, it, e.what());
    }
    const double value = loss.scalar();
    if (!std::isfinite(value)) throw FitError(stage, it, "");
    report.loss_trace.push_back(value);
    report.lr_trace.push_back(adam.learning_rate[0]);

    auto grads = diff::gradients(loss, vars);
    for (const auto& g : grads)
      if (!all_finite(g)) throw FitError(stage, it, "non-finite gradient");
    diff::adam_step(adam, params, grads);
  }
}

}  // namespace

void FitConfig::validate() const {
  require_positive(coarse.lr_rot, "coarse.lrRot");
  require_positive(coarse.lr_trans, "coarse.lrTrans");
  require_positive(coarse.lambda_vert, "coarse.lambdaVert");
  require_schedule(coarse.epochs, coarse.iters_per_epoch, coarse.lr_decay_every,
                   coarse.lr_decay_factor, "coarse");
  require_positive(fine.lr_pose, "fine.lrPose");
  require_positive(fine.lr_shape, "fine.lrShape");
  require_positive(fine.lr_rot, "fine.lrRot");
  require_positive(fine.lr_trans, "fine.lrTrans");
  require_positive(fine.lambda_pose, "fine.lambdaPose");
  require_positive(fine.lambda_shape, "fine.lambdaShape");
  require_schedule(fine.epochs, fine.iters_per_epoch, fine.lr_decay_every, fine.lr_decay_factor,
                   "fine");
  require_positive(loss_units_per_meter, "lossUnitsPerMeter");
}

double scheduled_lr(double base, std::size_t iter, std::size_t iters_per_epoch,
                    std::size_t decay_every, double decay_factor) {
  const std::size_t within = iter % iters_per_epoch;
  return base / std::pow(decay_factor, static_cast<double>(within / decay_every));
}

double vertex_rms(const Mat& a, const Mat& b) {
  if (!a.same_shape(b) || a.cols() != 3)
    throw std::invalid_argument("vertex_rms: shapes " + a.shape_string() + " and " +
                                b.shape_string());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.rows()));
}

Var coarse_loss(Tape& tape, const Mat& rest_verts_units, const Mat& rest_joints_units,
                Var rotation, Var translation_units, const Mat& target_verts_units,
                const Mat& target_joints_units, const FitConfig& cfg) {
  Var rt = diff::transpose(diff::rodrigues(rotation));
  Var verts = diff::add_row(diff::matmul(tape.constant(rest_verts_units), rt), translation_units);
  Var joints = diff::add_row(diff::matmul(tape.constant(rest_joints_units), rt), translation_units);
  return mean_sq_dist(joints, target_joints_units) +
         diff::scale(mean_sq_dist(verts, target_verts_units), cfg.coarse.lambda_vert);
}

Var fine_loss(Tape& tape, const HandModel& model, Var pose, Var shape, Var rotation,
              Var translation_units, const Mat& target_verts_units, const FitConfig& cfg) {
  auto out = lbs_on_tape(tape, model, pose, shape, rotation, tape.constant(Mat(1, 3)));
  Var verts = diff::add_row(diff::scale(out.vertices, cfg.loss_units_per_meter), translation_units);
  Var loss = mean_sq_dist(verts, target_verts_units);
  loss = loss + diff::scale(diff::sum_squares(pose), cfg.fine.lambda_pose);
  if (model.shape_dim() > 0)
    loss = loss + diff::scale(diff::sum_squares(shape), cfg.fine.lambda_shape);
  return loss;
}

CoarseResult fit_coarse(const HandModel& model, const Mat& target_verts, const Mat& target_joints,
                        const FitConfig& cfg) {
  cfg.validate();
  check_target(target_verts, model.num_vertices(), "target vertices");
  check_target(target_joints, model.num_joints(), "target joints");
  const double u = cfg.loss_units_per_meter;
  const auto rest = lbs_forward(model, PoseState::zeros(model));
  const Mat rest_v = scaled(rest.vertices, u), rest_j = scaled(rest.joints, u);
  const Mat tv = scaled(target_verts, u), tj = scaled(target_joints, u);

  std::vector<Mat> params{Mat(1, 3), Mat(1, 3)};
  CoarseResult result;
  optimize(params, {cfg.coarse.lr_rot, cfg.coarse.lr_trans}, cfg.coarse.epochs,
           cfg.coarse.iters_per_epoch, cfg.coarse.lr_decay_every, cfg.coarse.lr_decay_factor,
           "coarse", result.report, [&](Tape& tape, const std::vector<Var>& v) {
             return coarse_loss(tape, rest_v, rest_j, v[0], v[1], tv, tj, cfg);
           });
  result.rotation = params[0];
  result.translation = scaled(params[1], 1.0 / u);
  result.report.state = PoseState::zeros(model);
  result.report.state.rotation = result.rotation;
  result.report.state.translation = result.translation;
  result.report.vertex_rms = vertex_rms(lbs_forward(model, result.report.state).vertices, target_verts);
  return result;
}

FitReport fit_fine(const HandModel& model, const Mat& target_verts, const Mat& init_rotation,
                   const Mat& init_translation, const FitConfig& cfg) {
  cfg.validate();
  check_target(target_verts, model.num_vertices(), "target vertices");
  if (init_rotation.size() != 3 || init_translation.size() != 3)
    throw std::invalid_argument("fit_fine: initial rotation and translation must have 3 entries");
  const double u = cfg.loss_units_per_meter;
  const Mat tv = scaled(target_verts, u);

  std::vector<Mat> params{Mat(1, model.pose_dim()), Mat(1, model.shape_dim()),
                          Mat(1, 3, init_rotation.storage()),
                          scaled(Mat(1, 3, init_translation.storage()), u)};
  FitReport report;
  optimize(params, {cfg.fine.lr_pose, cfg.fine.lr_shape, cfg.fine.lr_rot, cfg.fine.lr_trans},
           cfg.fine.epochs, cfg.fine.iters_per_epoch, cfg.fine.lr_decay_every,
           cfg.fine.lr_decay_factor, "fine", report, [&](Tape& tape, const std::vector<Var>& v) {
             return fine_loss(tape, model, v[0], v[1], v[2], v[3], tv, cfg);
           });
  report.state = {params[0], params[1], params[2], scaled(params[3], 1.0 / u)};
  report.vertex_rms = vertex_rms(lbs_forward(model, report.state).vertices, target_verts);
  return report;
}

FitResult fit(const HandModel& model, const Mat& target_verts, const Mat& target_joints,
              const FitConfig& cfg) {
  auto coarse = fit_coarse(model, target_verts, target_joints, cfg);
  auto fine = fit_fine(model, target_verts, coarse.rotation, coarse.translation, cfg);
  FitResult r;
  r.state = fine.state;
  r.coarse = std::move(coarse.report);
  r.fine = std::move(fine);
  return r;
}

std::vector<FitResult> fit_batch(const HandModel& model, const std::vector<FitTarget>& targets,
                                 const FitConfig& cfg, std::size_t threads) {
  std::vector<FitResult> results(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < targets.size(); i = next++) {
      try {
        results[i] = fit(model, targets[i].vertices, targets[i].joints, cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, targets.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

PoseState sample_target_state(const HandModel& model, std::uint64_t seed,
                              const TargetSampling& sampling) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PoseState s = PoseState::zeros(model);
  for (auto& v : s.pose.storage()) v = sampling.pose_sigma * unit(rng);
  for (auto& v : s.shape.storage()) v = sampling.shape_sigma * unit(rng);
  double axis[3];
  double n = 0.0;
  do {
    for (auto& a : axis) a = unit(rng);
    n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  } while (n < 1e-6);
  const double angle = sampling.max_rotation * uniform(rng);
  for (int a = 0; a < 3; ++a) s.rotation[a] = axis[a] / n * angle;
  for (int a = 0; a < 3; ++a) s.translation[a] = sampling.translation_sigma * unit(rng);
  s.translation[2] += sampling.depth;
  return s;
}

}  // namespace handsyn
