#include <doctest.h>

#include <cmath>
#include <numbers>

#include "handsyn/spectrum.hpp"
#include "oracles/image_oracles.hpp"

using namespace handsyn;
using handsyn::testing::Cplx;
using handsyn::testing::naive_dft2;
using handsyn::testing::random_image;

TEST_CASE("sigma field: DC, corner radius, degenerate severity, radial monotonicity") {
  const AmpAugParams d;
  const Mat s = sigma_field(64, 64, d);
  CHECK(s(32, 32) == 0.25);
  CHECK(s(0, 0) == doctest::Approx(9.25).epsilon(1e-14));

  AmpAugParams flat = d;
  flat.alpha = 0.0;
  for (double v : sigma_field(17, 9, flat).storage()) CHECK(v == 0.25);

  for (double k : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    AmpAugParams p = d;
    p.k = k;
    const Mat f = sigma_field(31, 40, p);
    for (std::size_t i = 0; i < f.rows(); ++i)
      for (std::size_t j = 0; j + 1 < f.cols(); ++j)
        for (std::size_t i2 = 0; i2 < f.rows(); ++i2)
          for (std::size_t j2 = 0; j2 < f.cols(); j2 += 7) {
            const double p1 = double(i) - 15, q1 = double(j) - 20, p2 = double(i2) - 15, q2 = double(j2) - 20;
            if (p1 * p1 + q1 * q1 <= p2 * p2 + q2 * q2) CHECK(f(i, j) <= f(i2, j2));
          }
  }

  AmpAugParams bad = d;
  bad.beta = -1;
  CHECK_THROWS_AS(sigma_field(4, 4, bad), std::invalid_argument);
}

TEST_CASE("fftshift and ifftshift are an inverse pair and center DC") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 6}, {5, 7}, {1, 3}, {8, 1}}) {
    Mat m(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(i);
    CHECK(ifftshift(fftshift(m)) == m);
    CHECK(fftshift(ifftshift(m)) == m);
    CHECK(fftshift(m)(h / 2, w / 2) == m(0, 0));
  }
}

TEST_CASE("FFT round trip reconstructs to 1e-10 RMS") {
  const ImageBuffer img = random_image(48, 40, 3);
  const auto spec = fft2(img.plane(0), 48, 40);
  const auto back = ifft2(spec, 48, 40);
  double ss = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) ss += std::norm(back[i] - img.plane(0)[i]);
  CHECK(std::sqrt(ss / back.size()) < 1e-10);
}

TEST_CASE("fft2 matches the direct DFT") {
  const ImageBuffer img = random_image(6, 5, 4);
  std::vector<Cplx> x(img.plane(1).begin(), img.plane(1).end());
  const auto ref = naive_dft2(x, 6, 5, -1);
  const auto got = fft2(img.plane(1), 6, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - got[i]) < 1e-12);
}

TEST_CASE("forced unit lambda is an identity round trip") {
  const ImageBuffer img = random_image(64, 64, 11);
  const ImageBuffer out = amp_augment_with_lambda(img, Mat(64, 64, 1.0));
  double worst = 0.0;
  for (std::size_t i = 0; i < img.storage().size(); ++i)
    worst = std::max(worst, std::abs(out.storage()[i] - img.storage()[i]));
  CHECK(worst <= 1e-6);
  CHECK(worst < 1e-12);
}

namespace {

// The augmentation evaluated with direct DFTs: forward transform, amplitude/phase split,
// centered λ scaling, recombination, inverse transform, real part, clip.
ImageBuffer oracle_augment(const ImageBuffer& img, const Mat& lambda_centered) {
  const std::size_t h = img.height(), w = img.width();
  ImageBuffer out(h, w, img.channels());
  for (std::size_t ch = 0; ch < img.channels(); ++ch) {
    std::vector<Cplx> x(img.plane(ch).begin(), img.plane(ch).end());
    auto f = naive_dft2(x, h, w, -1);
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        // Unshifted bin (u, v) is signed frequency (p, q) with p ≡ u mod h, in the
        // centered range [-floor(h/2), ceil(h/2) - 1].
        long p = static_cast<long>(u), q = static_cast<long>(v);
        if (p >= static_cast<long>((h + 1) / 2)) p -= static_cast<long>(h);
        if (q >= static_cast<long>((w + 1) / 2)) q -= static_cast<long>(w);
        const double lam = lambda_centered(p + h / 2, q + w / 2);
        const double amp = std::abs(f[u * w + v]), phase = std::arg(f[u * w + v]);
        f[u * w + v] = std::polar(amp * lam, phase);
      }
    const auto back = naive_dft2(f, h, w, +1);
    for (std::size_t i = 0; i < back.size(); ++i)
      out.plane(ch)[i] = std::clamp(back[i].real() / static_cast<double>(h * w), 0.0, 1.0);
  }
  return out;
}

}  // namespace

TEST_CASE("augmentation matches the direct-DFT oracle") {
  for (auto [h, w, seed] : {std::tuple<std::size_t, std::size_t, std::uint64_t>{2, 2, 5}, {3, 5, 6}, {4, 6, 7}, {2, 2, 99}}) {
    AmpAugParams p;
    p.seed = seed;
    const ImageBuffer img = random_image(h, w, seed + 100);
    const ImageBuffer got = amp_augment(img, p);
    const ImageBuffer ref = oracle_augment(img, sample_lambda(h, w, p));
    for (std::size_t i = 0; i < got.storage().size(); ++i)
      CHECK(std::abs(got.storage()[i] - ref.storage()[i]) < 1e-9);
  }
}

TEST_CASE("clamped augmentation preserves phase at every nonzero frequency") {
  const ImageBuffer img = random_image(16, 12, 21);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AmpAugParams p;
    p.seed = seed;
    const ImageBuffer out = amp_perturb_unclipped(img, sample_lambda(16, 12, p));
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto fin = fft2(img.plane(ch), 16, 12);
      const auto fout = fft2(out.plane(ch), 16, 12);
      for (std::size_t i = 0; i < fin.size(); ++i) {
        if (std::abs(fin[i]) <= 1e-9 || std::abs(fout[i]) <= 1e-9) continue;
        double d = std::arg(fout[i]) - std::arg(fin[i]);
        d = std::remainder(d, 2 * std::numbers::pi);
        CHECK(std::abs(d) < 1e-6);
      }
    }
  }
}

TEST_CASE("unclamped augmentation is unbiased: projected amplitude mean within 3 sigma/sqrt(n)") {
  const std::size_t h = 8, w = 8, n = 400;
  const ImageBuffer img = random_image(h, w, 31);
  AmpAugParams p;
  p.clamp_nonneg = false;
  const Mat sigma_u = ifftshift(sigma_field(h, w, p));
  const auto fin = fft2(img.plane(0), h, w);
  std::vector<double> acc(h * w, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    p.seed = 1000 + s;
    const ImageBuffer out = amp_perturb_unclipped(img, sample_lambda(h, w, p));
    const auto fout = fft2(out.plane(0), h, w);
    for (std::size_t i = 0; i < acc.size(); ++i)
      if (std::abs(fin[i]) > 1e-9) acc[i] += std::real(fout[i] * std::conj(fin[i])) / std::abs(fin[i]);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double amp = std::abs(fin[i]);
    if (amp <= 1e-9) continue;
    CHECK(std::abs(acc[i] / n - amp) <= 3.0 * sigma_u[i] * amp / std::sqrt(double(n)));
  }
}

TEST_CASE("augmentation output is clipped and deterministic per seed") {
  const ImageBuffer img = random_image(32, 32, 8);
  AmpAugParams p;
  p.seed = 7;
  const ImageBuffer a = amp_augment(img, p), b = amp_augment(img, p);
  CHECK(a == b);
  for (double v : a.storage()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  p.seed = 8;
  CHECK(!(amp_augment(img, p) == a));
  CHECK_THROWS_AS(amp_augment(ImageBuffer(1, 5, 3), p), std::invalid_argument);
}

TEST_CASE("band variance: constant dataset, brightness offsets, blur attenuation") {
  const ImageBuffer base = random_image(32, 32, 1);
  {
    const auto prof = band_variance(std::vector<ImageBuffer>(5, base));
    REQUIRE(prof.variance.size() == 32);
    REQUIRE(prof.band_edges.size() == 33);
    CHECK(prof.band_edges.back() == doctest::Approx(0.5 * std::sqrt(2.0)));
    for (double v : prof.variance) CHECK(v < 1e-28);
    CHECK(prof.image_count == 5);
    CHECK_FALSE(prof.single_image_warning);
  }
  {
    ImageBuffer brighter = base;
    for (auto& v : brighter.storage()) v += 0.2;
    const auto prof = band_variance({base, brighter});
    CHECK(prof.variance[0] > 1e-4);
    for (std::size_t b = 1; b < 32; ++b) CHECK(prof.variance[b] < 1e-20);
  }
  {
    std::vector<ImageBuffer> noise, blurred;
    for (std::uint64_t s = 0; s < 20; ++s) {
      noise.push_back(random_image(32, 32, 500 + s));
      blurred.push_back(handsyn::testing::gaussian_blur(noise.back(), 1.5));
    }
    const auto pn = band_variance(noise), pb = band_variance(blurred);
    CHECK(pb.mean_amplitude.back() < pn.mean_amplitude.back());
  }
}

TEST_CASE("band variance: size checks, single image, threaded reduction") {
  CHECK_THROWS_AS(band_variance({random_image(8, 8, 1), random_image(8, 9, 2)}), std::invalid_argument);
  const auto one = band_variance({random_image(8, 8, 1)});
  CHECK(one.single_image_warning);
  for (double v : one.variance) CHECK(v == 0.0);

  std::vector<ImageBuffer> imgs;
  for (std::uint64_t s = 0; s < 9; ++s) imgs.push_back(random_image(16, 20, s));
  const auto a = band_variance(imgs, 16, 1), b = band_variance(imgs, 16, 4);
  CHECK(a.mean_amplitude == b.mean_amplitude);
  CHECK(a.variance == b.variance);
}
