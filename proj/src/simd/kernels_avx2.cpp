// AVX2+FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// -ffp-contract=off; it is only entered after a CPUID check. Elementwise
// kernels keep the scalar operation order so results are bit-identical.

#include "handsyn/simd.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace handsyn::simd {
namespace {

constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;

// B panels are packed into a contiguous kc×8 buffer so the micro-kernel streams
// one cache line per k regardless of ldb.
template <int Mr>
inline void micro_kernel(std::size_t kc, const double* a, std::size_t lda, const double* bpack,
                         double* c, std::size_t ldc) {
  __m256d acc[Mr][2];
  for (int r = 0; r < Mr; ++r) {
    acc[r][0] = _mm256_loadu_pd(c + r * ldc);
    acc[r][1] = _mm256_loadu_pd(c + r * ldc + 4);
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_load_pd(bpack + p * kNr);
    const __m256d b1 = _mm256_load_pd(bpack + p * kNr + 4);
    for (int r = 0; r < Mr; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < Mr; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
              const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  alignas(32) double bpack[kKc * kNr];
  const std::size_t n_main = n - n % kNr;
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = std::min(kKc, k - p0);
    const double* ap = a + p0;
    const double* bp = b + p0 * ldb;
    for (std::size_t j = 0; j < n_main; j += kNr) {
      for (std::size_t p = 0; p < kc; ++p) {
        _mm256_store_pd(bpack + p * kNr, _mm256_loadu_pd(bp + p * ldb + j));
        _mm256_store_pd(bpack + p * kNr + 4, _mm256_loadu_pd(bp + p * ldb + j + 4));
      }
      std::size_t i = 0;
      for (; i + 6 <= m; i += 6) micro_kernel<6>(kc, ap + i * lda, lda, bpack, c + i * ldc + j, ldc);
      double* ci = c + i * ldc + j;
      const double* ai = ap + i * lda;
      switch (m - i) {
        case 5: micro_kernel<5>(kc, ai, lda, bpack, ci, ldc); break;
        case 4: micro_kernel<4>(kc, ai, lda, bpack, ci, ldc); break;
        case 3: micro_kernel<3>(kc, ai, lda, bpack, ci, ldc); break;
        case 2: micro_kernel<2>(kc, ai, lda, bpack, ci, ldc); break;
        case 1: micro_kernel<1>(kc, ai, lda, bpack, ci, ldc); break;
        default: break;
      }
    }
    if (n_main < n) {
      for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = 0; p < kc; ++p) {
          const double aip = ap[i * lda + p];
          const double* brow = bp + p * ldb;
          for (std::size_t j = n_main; j < n; ++j) crow[j] += aip * brow[j];
        }
      }
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void hadamard(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void hadamard_acc(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), prod));
  }
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

double dot(std::size_t n, const double* a, const double* b) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void relu(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* grad_out, double* grad_in) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d gi = _mm256_loadu_pd(grad_in + i);
    const __m256d sum = _mm256_add_pd(gi, _mm256_loadu_pd(grad_out + i));
    _mm256_storeu_pd(grad_in + i, _mm256_blendv_pd(gi, sum, mask));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) grad_in[i] += grad_out[i];
}

void affine_rows(std::size_t n, const double* m, const double* x, double* out) {
  const __m256i m_idx = _mm256_setr_epi64x(0, 12, 24, 36);
  const __m256i x_idx = _mm256_setr_epi64x(0, 3, 6, 9);
  std::size_t i = 0;
  alignas(32) double res[3][4];
  for (; i + 4 <= n; i += 4) {
    const double* mi = m + 12 * i;
    const double* xi = x + 3 * i;
    const __m256d x0 = _mm256_i64gather_pd(xi, x_idx, 8);
    const __m256d x1 = _mm256_i64gather_pd(xi + 1, x_idx, 8);
    const __m256d x2 = _mm256_i64gather_pd(xi + 2, x_idx, 8);
    for (int r = 0; r < 3; ++r) {
      const __m256d c0 = _mm256_i64gather_pd(mi + 3 * r, m_idx, 8);
      const __m256d c1 = _mm256_i64gather_pd(mi + 3 * r + 1, m_idx, 8);
      const __m256d c2 = _mm256_i64gather_pd(mi + 3 * r + 2, m_idx, 8);
      const __m256d bias = _mm256_i64gather_pd(mi + 9 + r, m_idx, 8);
      __m256d acc = _mm256_add_pd(_mm256_mul_pd(c0, x0), _mm256_mul_pd(c1, x1));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(c2, x2));
      _mm256_store_pd(res[r], _mm256_add_pd(acc, bias));
    }
    double* oi = out + 3 * i;
    for (int lane = 0; lane < 4; ++lane)
      for (int r = 0; r < 3; ++r) oi[3 * lane + r] = res[r][lane];
  }
  for (; i < n; ++i) {
    const double* mi = m + 12 * i;
    const double* xi = x + 3 * i;
    double* oi = out + 3 * i;
    for (int r = 0; r < 3; ++r)
      oi[r] = mi[3 * r] * xi[0] + mi[3 * r + 1] * xi[1] + mi[3 * r + 2] * xi[2] + mi[9 + r];
  }
}

void adam_update(std::size_t n, double* param, const double* grad, double* m, double* v,
                 double lr, double beta1, double beta2, double eps, double bias_c1,
                 double bias_c2) {
  const __m256d b1 = _mm256_set1_pd(beta1), omb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2), omb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d c1 = _mm256_set1_pd(bias_c1), c2 = _mm256_set1_pd(bias_c2);
  const __m256d lrv = _mm256_set1_pd(lr), epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi =
        _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, c1);
    const __m256d vhat = _mm256_div_pd(vi, c2);
    const __m256d step =
        _mm256_div_pd(_mm256_mul_pd(lrv, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g);
    const double mhat = m[i] / bias_c1;
    const double vhat = v[i] / bias_c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void scale_complex(std::size_t n, const double* scale, double* spectrum) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const __m128d s = _mm_loadu_pd(scale + i);
    const __m256d sd = _mm256_permute4x64_pd(_mm256_castpd128_pd256(s), 0b01010000);
    _mm256_storeu_pd(spectrum + 2 * i, _mm256_mul_pd(_mm256_loadu_pd(spectrum + 2 * i), sd));
  }
  for (; i < n; ++i) {
    spectrum[2 * i] *= scale[i];
    spectrum[2 * i + 1] *= scale[i];
  }
}

void mask_blend(std::size_t n, const double* syn, const double* real, const double* mask_obj,
                const double* mask_arm, double* out) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mo = _mm256_loadu_pd(mask_obj + i);
    const __m256d ma = _mm256_loadu_pd(mask_arm + i);
    const __m256d s = _mm256_loadu_pd(syn + i);
    const __m256d r = _mm256_loadu_pd(real + i);
    const __m256d keep = _mm256_sub_pd(_mm256_sub_pd(one, mo), ma);
    __m256d acc = _mm256_add_pd(_mm256_mul_pd(keep, s), _mm256_mul_pd(mo, r));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(ma, r));
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < n; ++i) {
    const double keep = 1.0 - mask_obj[i] - mask_arm[i];
    out[i] = keep * syn[i] + mask_obj[i] * real[i] + mask_arm[i] * real[i];
  }
}

constexpr KernelTable kAvx2{
    Isa::Avx2,     gemm_acc,    axpy,        hadamard,      hadamard_acc, dot,       relu,
    relu_backward, affine_rows, adam_update, scale_complex, mask_blend,
};

}  // namespace

namespace detail {
const KernelTable* avx2_table() noexcept { return &kAvx2; }
}  // namespace detail

}  // namespace handsyn::simd

#else

namespace handsyn::simd::detail {
const KernelTable* avx2_table() noexcept { return nullptr; }
}  // namespace handsyn::simd::detail

#endif
