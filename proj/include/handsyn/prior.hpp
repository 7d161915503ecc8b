#pragma once
// Variational autoencoder over root-centered 3D joint sets, trained with random joint masking,
// and single-pass refinement of hidden joints.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "handsyn/json_io.hpp"
#include "handsyn/matrix.hpp"
#include "handsyn/tape.hpp"

namespace handsyn {

class PriorError : public std::runtime_error {
 public:
  PriorError(std::size_t epoch, std::size_t step, const std::string& detail);
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t epoch_, step_;
};

/// Encoder: three Linear+ReLU, one Linear, then a projection to [μ | log σ²].
/// Decoder: five Linear+ReLU (the first reads z), one Linear, then a projection to 3J.
inline constexpr std::size_t kEncoderLayers = 5;
inline constexpr std::size_t kDecoderLayers = 7;

struct PriorModel {
  std::size_t joints = 21;
  std::size_t latent_dim = 64;
  std::size_t hidden_dim = 512;
  std::size_t root_joint = 0;
  double units_per_meter = 100.0;  // network coordinates are centimeters
  Mat mean_pose;                   // 1×3J, meters, root-centered training mean
  /// Weight (in×out) and bias (1×out) per layer: encoder layers first, then decoder layers.
  std::vector<Mat> params;

  static PriorModel init(std::size_t joints, std::size_t latent_dim, std::size_t hidden_dim, std::uint64_t seed);

  std::size_t input_dim() const noexcept { return 3 * joints; }
  Mat& weight(std::size_t layer) { return params[2 * layer]; }
  Mat& bias(std::size_t layer) { return params[2 * layer + 1]; }
  const Mat& weight(std::size_t layer) const { return params[2 * layer]; }
  const Mat& bias(std::size_t layer) const { return params[2 * layer + 1]; }
  std::size_t parameter_count() const noexcept;
  void validate() const;

  friend bool operator==(const PriorModel&, const PriorModel&) = default;
};

/// Closed-form KL(N(μ, σ²) ‖ N(0, I)) summed over latent dimensions, averaged over rows.
double kl_divergence(const Mat& mean, const Mat& log_variance);
diff::Var kl_on_tape(diff::Var mean, diff::Var log_variance);

struct PriorVars {
  std::vector<diff::Var> params;
};
PriorVars bind_prior(diff::Tape& tape, const PriorModel& model, bool trainable);

struct Encoding {
  diff::Var mean, log_variance;
};
Encoding encode(const PriorModel& model, const PriorVars& vars, diff::Var input);
/// Network output is a residual on top of the training mean pose.
diff::Var decode(const PriorModel& model, const PriorVars& vars, diff::Var z);

struct VaeLoss {
  diff::Var total, kl, reconstruction;
};

/// total = λ·KL + Σ‖x̂ − x‖² / B with z = μ + exp(½ log σ²) ⊙ noise.
/// `masked_input` and `target` are B×3J in network units; `noise` is B×latent.
VaeLoss vae_loss(const PriorModel& model, const PriorVars& vars, const Mat& masked_input, const Mat& target,
                 const Mat& noise, double lambda_kl);

struct PriorTrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t epochs = 160;
  double lambda_kl = 0.01;
  double mask_rate = 0.25;
  std::uint64_t seed = 0;
  std::size_t latent_dim = 64;
  std::size_t hidden_dim = 512;
  double units_per_meter = 100.0;

  void validate() const;
};

struct PriorStep {
  std::size_t epoch, step;
  double total, kl, reconstruction;
};

struct PriorTrainResult {
  PriorModel model;
  std::vector<PriorStep> trace;
  /// Unmasked posterior-mean reconstruction RMS per coordinate (meters), after each epoch.
  std::vector<double> epoch_rms;
};

/// Subtracts each pose's root joint and flattens the J×3 poses into the rows of an N×3J matrix.
Mat root_center(std::span<const Mat> poses, std::size_t root_joint = 0);

/// Number of joints hidden per training sample: round(mask_rate · J).
std::size_t masked_joint_count(double mask_rate, std::size_t joints);

/// Minibatch training; the trailing partial batch of each epoch is dropped.
PriorTrainResult train_prior(std::span<const Mat> poses, const PriorTrainConfig& cfg);

struct RefineResult {
  Mat pose;  // J×3
  bool all_hidden = false;
};

/// Visible joints are copied; hidden joints come from decoding the posterior mean of the
/// masked input. Coordinates are taken relative to the root joint when it is visible.
RefineResult refine(const PriorModel& model, const Mat& pose, const std::vector<bool>& visible);
std::vector<RefineResult> refine_batch(const PriorModel& model, std::span<const Mat> poses,
                                       std::span<const std::vector<bool>> visible, unsigned threads = 0);

/// Posterior-mean reconstruction of unmasked poses; RMS over all coordinates (meters).
double reconstruction_rms(const PriorModel& model, std::span<const Mat> poses);

io::json prior_to_json(const PriorModel& model);
PriorModel prior_from_json(const io::json& j);
void save_prior(const PriorModel& model, const std::filesystem::path& path);
PriorModel load_prior(const std::filesystem::path& path);

/// Two-factor pose family: joint j = base_j + a_j sin(t1 + φ_j) + b_j sin(t2 + ψ_j),
/// with a_j, b_j, φ_j, ψ_j fixed by `structure_seed` and the root held at the origin.
class ToyPoseManifold {
 public:
  ToyPoseManifold(Mat base_joints, std::uint64_t structure_seed, double amplitude = 0.015);
  /// Uses the procedural asset's rest joints as the base pose.
  static ToyPoseManifold from_asset(std::size_t joints, std::uint64_t structure_seed);

  Mat pose(double t1, double t2) const;
  std::vector<Mat> sample(std::size_t count, std::uint64_t seed) const;
  std::size_t joints() const noexcept { return base_.rows(); }

 private:
  Mat base_, amp_a_, amp_b_;
  std::vector<double> phase_a_, phase_b_;
};

}  // namespace handsyn
