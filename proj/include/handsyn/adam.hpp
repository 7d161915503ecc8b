#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "handsyn/matrix.hpp"

namespace handsyn::diff {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for a list of parameter blocks, each with its own learning rate.
struct AdamState {
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;
  std::vector<double> learning_rate;
  std::int64_t step = 0;
  AdamOptions options;

  static AdamState init(std::span<const Mat> params, std::span<const double> learning_rates,
                        AdamOptions options = {});
};

/// One bias-corrected Adam update; increments state.step. Throws on shape mismatch.
void adam_step(AdamState& state, std::span<Mat> params, std::span<const Mat> grads);

}  // namespace handsyn::diff
