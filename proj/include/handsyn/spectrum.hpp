#pragma once
// Amplitude-spectrum augmentation and radial amplitude statistics over image sets.
//
// Centered layout: index i of an n-point axis holds signed frequency i - floor(n/2),
// i.e. the numpy fftshift convention; ifftshift is its exact inverse.

#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include "handsyn/image.hpp"
#include "handsyn/matrix.hpp"

namespace handsyn {

struct AmpAugParams {
  double alpha = 3.0;
  double k = 2.0;
  double beta = 0.25;
  bool clamp_nonneg = true;
  std::uint64_t seed = 0;

  void validate() const;
};

using Spectrum2D = std::vector<std::complex<double>>;  // row-major H×W, unshifted

Spectrum2D fft2(std::span<const double> plane, std::size_t h, std::size_t w);
/// Inverse transform including the 1/(HW) factor.
Spectrum2D ifft2(const Spectrum2D& spec, std::size_t h, std::size_t w);

Mat fftshift(const Mat& m);
Mat ifftshift(const Mat& m);

/// σ over the centered layout: (2α·sqrt((p²+q²)/(H²+W²)))^k + β.
Mat sigma_field(std::size_t h, std::size_t w, const AmpAugParams& params);

/// λ ~ N(1, σ²) per frequency in the centered layout (clamped at 0 when requested).
Mat sample_lambda(std::size_t h, std::size_t w, const AmpAugParams& params);

/// Multiplies every channel's amplitude by `lambda_centered` (shared across channels),
/// keeps the phase, and returns the real part of the inverse transform without clipping.
ImageBuffer amp_perturb_unclipped(const ImageBuffer& image, const Mat& lambda_centered);

/// Full augmentation: sampled λ, perturbation, output clipped to [0,1].
ImageBuffer amp_augment(const ImageBuffer& image, const AmpAugParams& params);
/// Same with a caller-supplied λ field (centered layout); used to force λ ≡ 1.
ImageBuffer amp_augment_with_lambda(const ImageBuffer& image, const Mat& lambda_centered);

struct SpectrumProfile {
  std::vector<double> band_edges;       // B+1 normalized radial frequencies
  std::vector<double> mean_amplitude;   // per band, mean over images of the band average
  std::vector<double> variance;         // per band, sample variance across images
  std::size_t image_count = 0;
  bool single_image_warning = false;
};

/// Per-image band averages of log10(1 + |F|) of the channel-mean image.
std::vector<double> band_log_amplitude(const ImageBuffer& image, std::size_t bands);

/// Images are pulled from `load(i)` for i in [0, count); work is split over `threads`
/// and reduced in index order.
SpectrumProfile band_variance(std::size_t count, const std::function<ImageBuffer(std::size_t)>& load,
                              std::size_t bands = 32, std::size_t threads = 1);
SpectrumProfile band_variance(const std::vector<ImageBuffer>& images, std::size_t bands = 32,
                              std::size_t threads = 1);

}  // namespace handsyn
