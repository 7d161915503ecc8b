#pragma once
// Two-stage fit of a hand model to a target mesh: rigid alignment first, then
// pose, shape, rotation and translation jointly with coefficient regularizers.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/hand_model.hpp"

namespace handsyn {

struct CoarseConfig {
  double lr_rot = 1.0;
  double lr_trans = 1.0;
  std::size_t epochs = 2;
  std::size_t iters_per_epoch = 3000;
  double lambda_vert = 0.1;
  std::size_t lr_decay_every = 1000;
  double lr_decay_factor = 10.0;
};

struct FineConfig {
  double lr_pose = 1e-3;
  double lr_shape = 1e-3;
  double lr_rot = 1e-2;
  double lr_trans = 1e-2;
  std::size_t epochs = 4;
  std::size_t iters_per_epoch = 3000;
  double lambda_pose = 50.0;
  double lambda_shape = 50.0;
  std::size_t lr_decay_every = 1000;
  double lr_decay_factor = 10.0;
};

struct FitConfig {
  CoarseConfig coarse;
  FineConfig fine;
  /// Length unit the losses and the translation parameter are expressed in, per meter.
  /// 1000 means millimeters; the learning rates above are calibrated for it.
  double loss_units_per_meter = 1000.0;

  void validate() const;
};

struct FitReport {
  PoseState state;
  std::vector<double> loss_trace;  // one entry per iteration, loss before the update
  std::vector<double> lr_trace;    // learning rate of the first parameter group per iteration
  double vertex_rms = 0.0;         // meters, after the final update
};

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& stage, std::size_t iteration, const std::string& detail)
      : std::runtime_error(stage + " fit: non-finite loss at iteration " + std::to_string(iteration) +
                           (detail.empty() ? "" : " (" + detail + ")")),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Learning rate at `iter` (0-based, counted from the start of the stage).
double scheduled_lr(double base, std::size_t iter, std::size_t iters_per_epoch,
                    std::size_t decay_every, double decay_factor);

struct CoarseResult {
  Mat rotation;     // 1×3
  Mat translation;  // 1×3, meters
  FitReport report;
};

/// Optimizes global rotation and translation only; pose and shape stay zero.
CoarseResult fit_coarse(const HandModel& model, const Mat& target_verts, const Mat& target_joints,
                        const FitConfig& cfg);

/// Optimizes all parameters starting from the coarse rotation/translation, pose and shape zero.
FitReport fit_fine(const HandModel& model, const Mat& target_verts, const Mat& init_rotation,
                   const Mat& init_translation, const FitConfig& cfg);

struct FitResult {
  PoseState state;
  FitReport coarse;
  FitReport fine;
};

FitResult fit(const HandModel& model, const Mat& target_verts, const Mat& target_joints,
              const FitConfig& cfg);

struct FitTarget {
  Mat vertices;  // V×3
  Mat joints;    // J×3
};

/// Independent fits on up to `threads` workers; results are in input order.
std::vector<FitResult> fit_batch(const HandModel& model, const std::vector<FitTarget>& targets,
                                 const FitConfig& cfg, std::size_t threads);

/// Loss terms evaluated on a tape (exposed for gradient checks).
/// Rest-pose geometry (already in loss units) is rigidly moved by (rotation, translation).
diff::Var coarse_loss(diff::Tape& tape, const Mat& rest_verts_units, const Mat& rest_joints_units,
                      diff::Var rotation, diff::Var translation_units,
                      const Mat& target_verts_units, const Mat& target_joints_units,
                      const FitConfig& cfg);
diff::Var fine_loss(diff::Tape& tape, const HandModel& model, diff::Var pose, diff::Var shape,
                    diff::Var rotation, diff::Var translation_units,
                    const Mat& target_verts_units, const FitConfig& cfg);

double vertex_rms(const Mat& a, const Mat& b);

/// Distribution of self-generated fitting targets.
struct TargetSampling {
  double pose_sigma = 0.1;       // radians per axis-angle component
  double shape_sigma = 0.5;
  double max_rotation = 0.8;     // radians, uniform angle about a uniform axis
  double depth = 0.4;            // meters along +z
  double translation_sigma = 0.03;
};

/// Deterministic random ground-truth state for a given seed.
PoseState sample_target_state(const HandModel& model, std::uint64_t seed,
                              const TargetSampling& sampling = {});

}  // namespace handsyn
