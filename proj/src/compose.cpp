#include "handsyn/compose.hpp"

#include <random>
#include <stdexcept>
#include <string>

#include "handsyn/simd.hpp"

namespace handsyn {

namespace {

void check_job(const CompositionJob& job) {
  const auto& s = job.syn;
  auto size_str = [](std::size_t h, std::size_t w) {
    return std::to_string(h) + "x" + std::to_string(w);
  };
  if (s.channels() != 3 || job.real.channels() != 3)
    throw std::invalid_argument("compose: images must have 3 channels");
  if (!s.same_size(job.real))
    throw std::invalid_argument("compose: real image is " +
                                size_str(job.real.height(), job.real.width()) +
                                ", synthetic image is " + size_str(s.height(), s.width()));
  auto check_mask = [&](const MaskBuffer& m, const char* name) {
    if (m.height() != s.height() || m.width() != s.width())
      throw std::invalid_argument(std::string("compose: ") + name + " is " +
                                  size_str(m.height(), m.width()) + ", images are " +
                                  size_str(s.height(), s.width()));
  };
  check_mask(job.object_mask, "object mask");
  check_mask(job.arm_mask, "arm mask");
  if (job.hand_mask) check_mask(*job.hand_mask, "hand mask");
}

std::vector<double> as_weights(const MaskBuffer& m) {
  std::vector<double> w(m.pixels());
  auto v = m.values();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = v[i];
  return w;
}

}  // namespace

MaskBuffer resolve_arm_mask(const MaskBuffer& object_mask, const MaskBuffer& arm_mask) {
  MaskBuffer out(arm_mask.height(), arm_mask.width());
  for (std::size_t r = 0; r < out.height(); ++r)
    for (std::size_t c = 0; c < out.width(); ++c)
      out.set(r, c, arm_mask.at(r, c) && !object_mask.at(r, c));
  return out;
}

ImageBuffer compose(const CompositionJob& job) {
  check_job(job);
  const auto mo = as_weights(job.object_mask);
  const auto ma = as_weights(resolve_arm_mask(job.object_mask, job.arm_mask));
  ImageBuffer out(job.syn.height(), job.syn.width(), 3);
  const auto& k = simd::kernels();
  for (std::size_t ch = 0; ch < 3; ++ch)
    k.mask_blend(out.pixels(), job.syn.plane(ch).data(), job.real.plane(ch).data(), mo.data(),
                 ma.data(), out.plane(ch).data());
  return out;
}

std::array<double, 3> mean_color(const ImageBuffer& image, const MaskBuffer& mask) {
  const std::size_t n = mask.count();
  if (n == 0) throw std::invalid_argument("random_fill: hand mask is empty, cannot compute its mean color");
  std::array<double, 3> mean{};
  auto v = mask.values();
  for (std::size_t ch = 0; ch < 3; ++ch) {
    auto plane = image.plane(ch);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i]) acc += plane[i];
    mean[ch] = acc / static_cast<double>(n);
  }
  return mean;
}

std::array<double, 3> random_color(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 3> c{};
  for (auto& v : c) v = u(rng);
  return c;
}

ImageBuffer random_fill(const CompositionJob& job) {
  check_job(job);
  std::array<double, 3> arm_color{};
  if (job.fill_arm) {
    if (!job.hand_mask) throw std::invalid_argument("random_fill: arm fill requires a hand mask");
    arm_color = mean_color(job.syn, *job.hand_mask);
  }
  const auto obj_color = random_color(job.seed);
  const MaskBuffer arm = resolve_arm_mask(job.object_mask, job.arm_mask);
  ImageBuffer out = job.syn;
  for (std::size_t r = 0; r < out.height(); ++r)
    for (std::size_t c = 0; c < out.width(); ++c) {
      const bool obj = job.object_mask.at(r, c);
      const bool a = arm.at(r, c);
      if (!obj && !a) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        if (obj)
          out.at(ch, r, c) = job.fill_object ? obj_color[ch] : job.real.at(ch, r, c);
        else
          out.at(ch, r, c) = job.fill_arm ? arm_color[ch] : job.real.at(ch, r, c);
      }
    }
  return out;
}

ImageBuffer run_composition(const CompositionJob& job) {
  return job.mode == ComposeMode::Segmented ? compose(job) : random_fill(job);
}

std::uint64_t synth_index(std::uint64_t k, std::uint64_t i, std::uint64_t n) {
  if (n == 0 || i < 1 || i > n)
    throw std::out_of_range("synth_index: pose index " + std::to_string(i) + " outside [1, " +
                            std::to_string(n) + "]");
  return k * n + i;
}

}  // namespace handsyn
