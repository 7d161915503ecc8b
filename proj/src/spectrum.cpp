#include "handsyn/spectrum.hpp"

#include <fftw3.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "handsyn/simd.hpp"

namespace handsyn {

namespace {

// FFTW's planner is not thread-safe; execution with new-array execute is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

Spectrum2D transform(const std::complex<double>* in, std::size_t h, std::size_t w, int sign) {
  Spectrum2D out(h * w);
  fftw_complex* buf = fftw_alloc_complex(h * w);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, sign, FFTW_ESTIMATE);
  }
  std::copy(in, in + h * w, reinterpret_cast<std::complex<double>*>(buf));
  fftw_execute(plan);
  std::copy(reinterpret_cast<std::complex<double>*>(buf),
            reinterpret_cast<std::complex<double>*>(buf) + h * w, out.begin());
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  return out;
}

std::size_t centered_to_unshifted(std::size_t i, std::size_t n) { return (i + n - n / 2) % n; }

}  // namespace

void AmpAugParams::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(k >= 0.0))
    throw std::invalid_argument("AmpAugParams: alpha, beta and k must be nonnegative");
}

Spectrum2D fft2(std::span<const double> plane, std::size_t h, std::size_t w) {
  if (plane.size() != h * w) throw std::invalid_argument("fft2: plane size does not match HxW");
  std::vector<std::complex<double>> in(plane.begin(), plane.end());
  return transform(in.data(), h, w, FFTW_FORWARD);
}

Spectrum2D ifft2(const Spectrum2D& spec, std::size_t h, std::size_t w) {
  if (spec.size() != h * w) throw std::invalid_argument("ifft2: spectrum size does not match HxW");
  Spectrum2D out = transform(spec.data(), h, w, FFTW_BACKWARD);
  const double inv = 1.0 / static_cast<double>(h * w);
  for (auto& v : out) v *= inv;
  return out;
}

Mat fftshift(const Mat& m) {
  const std::size_t h = m.rows(), w = m.cols();
  Mat out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out(i, j) = m(centered_to_unshifted(i, h), centered_to_unshifted(j, w));
  return out;
}

Mat ifftshift(const Mat& m) {
  const std::size_t h = m.rows(), w = m.cols();
  Mat out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out(centered_to_unshifted(i, h), centered_to_unshifted(j, w)) = m(i, j);
  return out;
}

Mat sigma_field(std::size_t h, std::size_t w, const AmpAugParams& params) {
  params.validate();
  Mat s(h, w);
  const double denom = static_cast<double>(h * h + w * w);
  for (std::size_t i = 0; i < h; ++i) {
    const double p = static_cast<double>(i) - static_cast<double>(h / 2);
    for (std::size_t j = 0; j < w; ++j) {
      const double q = static_cast<double>(j) - static_cast<double>(w / 2);
      s(i, j) = std::pow(2.0 * params.alpha * std::sqrt((p * p + q * q) / denom), params.k) +
                params.beta;
    }
  }
  return s;
}

Mat sample_lambda(std::size_t h, std::size_t w, const AmpAugParams& params) {
  const Mat sigma = sigma_field(h, w, params);
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Mat lambda(h, w);
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    double v = 1.0 + sigma[i] * unit(rng);
    if (params.clamp_nonneg) v = std::max(v, 0.0);
    lambda[i] = v;
  }
  return lambda;
}

ImageBuffer amp_perturb_unclipped(const ImageBuffer& image, const Mat& lambda_centered) {
  const std::size_t h = image.height(), w = image.width();
  if (h < 2 || w < 2) throw std::invalid_argument("amp_augment: image must be at least 2x2");
  if (lambda_centered.rows() != h || lambda_centered.cols() != w)
    throw std::invalid_argument("amp_augment: lambda field is " + lambda_centered.shape_string() +
                                " for a " + std::to_string(h) + "x" + std::to_string(w) + " image");
  // Scaling the complex coefficient by a real λ ≥ 0 multiplies the amplitude and keeps the
  // phase, which is the amplitude/phase split and recombination done in one step.
  const Mat lambda = ifftshift(lambda_centered);
  ImageBuffer out(h, w, image.channels());
  for (std::size_t ch = 0; ch < image.channels(); ++ch) {
    Spectrum2D spec = fft2(image.plane(ch), h, w);
    simd::kernels().scale_complex(spec.size(), lambda.data(), reinterpret_cast<double*>(spec.data()));
    const Spectrum2D back = ifft2(spec, h, w);
    auto dst = out.plane(ch);
    for (std::size_t i = 0; i < back.size(); ++i) dst[i] = back[i].real();
  }
  return out;
}

ImageBuffer amp_augment_with_lambda(const ImageBuffer& image, const Mat& lambda_centered) {
  ImageBuffer out = amp_perturb_unclipped(image, lambda_centered);
  for (auto& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

ImageBuffer amp_augment(const ImageBuffer& image, const AmpAugParams& params) {
  return amp_augment_with_lambda(image, sample_lambda(image.height(), image.width(), params));
}

std::vector<double> band_log_amplitude(const ImageBuffer& image, std::size_t bands) {
  if (bands == 0) throw std::invalid_argument("band_variance: need at least one band");
  const std::size_t h = image.height(), w = image.width();
  std::vector<double> gray(h * w, 0.0);
  for (std::size_t ch = 0; ch < image.channels(); ++ch) {
    auto plane = image.plane(ch);
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] += plane[i];
  }
  for (auto& v : gray) v /= static_cast<double>(image.channels());
  const Spectrum2D spec = fft2(gray, h, w);

  const double rmax = 0.5 * std::sqrt(2.0);
  std::vector<double> sum(bands, 0.0);
  std::vector<std::size_t> n(bands, 0);
  for (std::size_t u = 0; u < h; ++u) {
    const double p = static_cast<double>(u) - (u >= (h + 1) / 2 ? static_cast<double>(h) : 0.0);
    for (std::size_t v = 0; v < w; ++v) {
      const double q = static_cast<double>(v) - (v >= (w + 1) / 2 ? static_cast<double>(w) : 0.0);
      const double r = std::sqrt((p / h) * (p / h) + (q / w) * (q / w));
      const auto b = std::min<std::size_t>(bands - 1, static_cast<std::size_t>(r / rmax * bands));
      sum[b] += std::log10(1.0 + std::abs(spec[u * w + v]));
      ++n[b];
    }
  }
  for (std::size_t b = 0; b < bands; ++b) sum[b] = n[b] ? sum[b] / static_cast<double>(n[b]) : 0.0;
  return sum;
}

SpectrumProfile band_variance(std::size_t count, const std::function<ImageBuffer(std::size_t)>& load,
                              std::size_t bands, std::size_t threads) {
  if (count == 0) throw std::invalid_argument("band_variance: empty image set");
  std::vector<std::vector<double>> per_image(count);
  std::vector<std::pair<std::size_t, std::size_t>> sizes(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        const ImageBuffer img = load(i);
        sizes[i] = {img.height(), img.width()};
        per_image[i] = band_log_amplitude(img, bands);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t nt = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 1; i < count; ++i)
    if (sizes[i] != sizes[0])
      throw std::invalid_argument("band_variance: image " + std::to_string(i) + " is " +
                                  std::to_string(sizes[i].first) + "x" +
                                  std::to_string(sizes[i].second) + ", expected " +
                                  std::to_string(sizes[0].first) + "x" +
                                  std::to_string(sizes[0].second));

  SpectrumProfile prof;
  prof.image_count = count;
  const double rmax = 0.5 * std::sqrt(2.0);
  for (std::size_t b = 0; b <= bands; ++b)
    prof.band_edges.push_back(rmax * static_cast<double>(b) / static_cast<double>(bands));
  prof.mean_amplitude.assign(bands, 0.0);
  prof.variance.assign(bands, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    double mean = 0.0;
    for (std::size_t i = 0; i < count; ++i) mean += per_image[i][b];
    mean /= static_cast<double>(count);
    prof.mean_amplitude[b] = mean;
    if (count > 1) {
      double ss = 0.0;
      for (std::size_t i = 0; i < count; ++i) ss += (per_image[i][b] - mean) * (per_image[i][b] - mean);
      prof.variance[b] = ss / static_cast<double>(count - 1);
    }
  }
  prof.single_image_warning = count == 1;
  return prof;
}

SpectrumProfile band_variance(const std::vector<ImageBuffer>& images, std::size_t bands,
                              std::size_t threads) {
  return band_variance(images.size(), [&](std::size_t i) { return images[i]; }, bands, threads);
}

}  // namespace handsyn
