#pragma once

#include <string>
#include <vector>

#include "context.hpp"

namespace handsyn::cli {

struct BuildAssetOptions {
  std::size_t joints = 21;
};

struct MakeToyOptions {
  fs::path model;
  std::size_t count = 8;
  std::size_t train_count = 512;
  std::size_t width = 224, height = 224;
  double focal = 300.0;
};

struct FitOptions {
  fs::path model, manifest;
  std::size_t coarse_epochs = 2, fine_epochs = 4;
  std::size_t iters_per_epoch = 3000;
  std::size_t decay_every = 1000;
};

struct LabelOptionsCli {
  fs::path model, manifest;
  std::size_t threshold = 40;
  bool auto_scale = false;
  bool object_only = false;
  double depth_epsilon = 0.005;
  double joint_epsilon = 0.005;
};

struct TrainPriorOptions {
  fs::path poses;
  std::size_t epochs = 160, batch = 128, latent = 64, hidden = 512;
  double lr = 1e-4, lambda_kl = 0.01, mask_rate = 0.25;
};

struct RefineOptions {
  fs::path prior, poses, labels;
};

struct EvaluateOptions {
  fs::path predictions, manifest, labels, model;
  std::vector<std::size_t> map;
};

struct AugmentOptions {
  fs::path manifest;
  double alpha = 3.0, beta = 0.25, k = 2.0;
  bool no_clamp = false;
};

struct SpectrumOptions {
  fs::path manifest;
  std::size_t bands = 32;
};

struct ComposeOptions {
  fs::path manifest;
  std::string mode = "segmented";
  bool no_fill_arm = false, no_fill_object = false;
};

void cmd_build_asset(Context& ctx, const BuildAssetOptions& o);
void cmd_make_toy(Context& ctx, const MakeToyOptions& o);
void cmd_fit(Context& ctx, const FitOptions& o);
void cmd_label_occlusion(Context& ctx, const LabelOptionsCli& o);
void cmd_train_prior(Context& ctx, const TrainPriorOptions& o);
void cmd_refine(Context& ctx, const RefineOptions& o);
void cmd_evaluate(Context& ctx, const EvaluateOptions& o);
void cmd_augment(Context& ctx, const AugmentOptions& o);
void cmd_analyze_spectrum(Context& ctx, const SpectrumOptions& o);
void cmd_compose(Context& ctx, const ComposeOptions& o);

}  // namespace handsyn::cli
