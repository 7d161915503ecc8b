#pragma once
// Mask-based composition of real arm/object pixels into synthetic hand images.

#include <array>
#include <cstdint>
#include <optional>

#include "handsyn/image.hpp"

namespace handsyn {

enum class ComposeMode { Segmented, RandomFill };

struct CompositionJob {
  ImageBuffer syn;
  ImageBuffer real;
  MaskBuffer object_mask;
  MaskBuffer arm_mask;
  std::optional<MaskBuffer> hand_mask;  // required when the arm is filled
  ComposeMode mode = ComposeMode::Segmented;
  bool fill_arm = true;     // RandomFill: arm gets the mean hand color (else real pixels)
  bool fill_object = true;  // RandomFill: object gets one random color (else real pixels)
  std::uint64_t seed = 0;
};

/// Arm mask with object pixels removed: the object takes precedence where both are set.
MaskBuffer resolve_arm_mask(const MaskBuffer& object_mask, const MaskBuffer& arm_mask);

/// Ĩ = (1 − M_obj − M_arm) ⊙ I_syn + M_obj ⊙ I_real + M_arm ⊙ I_real, after arm trimming.
ImageBuffer compose(const CompositionJob& job);

/// Mean color of `image` over the mask's foreground; throws on an empty mask.
std::array<double, 3> mean_color(const ImageBuffer& image, const MaskBuffer& mask);
/// Uniform RGB triple in [0,1) drawn from `seed`.
std::array<double, 3> random_color(std::uint64_t seed);

ImageBuffer random_fill(const CompositionJob& job);

/// Dispatches on job.mode.
ImageBuffer run_composition(const CompositionJob& job);

/// Index of the synthetic image reusing real pose i (1-based) on repetition k: j = k·N + i.
std::uint64_t synth_index(std::uint64_t k, std::uint64_t i, std::uint64_t n);

}  // namespace handsyn
