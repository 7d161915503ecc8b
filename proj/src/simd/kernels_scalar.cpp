#include "handsyn/simd.hpp"

#include <cmath>

namespace handsyn::simd {
namespace {

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
              const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void hadamard(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void hadamard_acc(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

double dot(std::size_t n, const double* a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void relu(std::size_t n, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* grad_out, double* grad_in) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) grad_in[i] += grad_out[i];
}

void affine_rows(std::size_t n, const double* m, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
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
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g);
    const double mhat = m[i] / bias_c1;
    const double vhat = v[i] / bias_c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void scale_complex(std::size_t n, const double* scale, double* spectrum) {
  for (std::size_t i = 0; i < n; ++i) {
    spectrum[2 * i] *= scale[i];
    spectrum[2 * i + 1] *= scale[i];
  }
}

void mask_blend(std::size_t n, const double* syn, const double* real, const double* mask_obj,
                const double* mask_arm, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = 1.0 - mask_obj[i] - mask_arm[i];
    out[i] = keep * syn[i] + mask_obj[i] * real[i] + mask_arm[i] * real[i];
  }
}

constexpr KernelTable kScalar{
    Isa::Scalar, gemm_acc, axpy,        hadamard,    hadamard_acc,  dot,       relu,
    relu_backward, affine_rows, adam_update, scale_complex, mask_blend,
};

}  // namespace

namespace detail {
const KernelTable& scalar_table() noexcept { return kScalar; }
}  // namespace detail

}  // namespace handsyn::simd
