#pragma once
// Data-parallel inner loops used across the library.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The variant is chosen once at startup from CPUID and can be
// pinned with HANDSYN_SIMD=scalar|avx2 or force_isa() (tests use the latter to
// compare both paths). Elementwise kernels are bit-identical across variants;
// reductions and GEMM differ only by summation order.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace handsyn::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;

  /// C[M×N] += A[M×K] · B[K×N]; all row-major with the given leading dimensions.
  void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                   const double* b, std::size_t ldb, double* c, std::size_t ldc);

  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// out = a ⊙ b
  void (*hadamard)(std::size_t n, const double* a, const double* b, double* out);
  /// out += a ⊙ b
  void (*hadamard_acc)(std::size_t n, const double* a, const double* b, double* out);
  double (*dot)(std::size_t n, const double* a, const double* b);

  void (*relu)(std::size_t n, const double* x, double* out);
  /// grad_in += grad_out where x > 0
  void (*relu_backward)(std::size_t n, const double* x, const double* grad_out, double* grad_in);

  /// out_i = A_i · x_i + b_i with M_i = [A_i (3×3 row-major) | b_i] packed as 12 doubles per row.
  void (*affine_rows)(std::size_t n, const double* m, const double* x, double* out);

  /// Bias-corrected Adam update over a contiguous parameter block.
  void (*adam_update)(std::size_t n, double* param, const double* grad, double* m, double* v,
                      double lr, double beta1, double beta2, double eps, double bias_c1,
                      double bias_c2);

  /// Interleaved complex spectrum (re, im pairs) scaled by a real per-bin factor.
  void (*scale_complex)(std::size_t n, const double* scale, double* spectrum);

  /// out = (1 - mo - ma) ⊙ syn + mo ⊙ real + ma ⊙ real, evaluated literally.
  void (*mask_blend)(std::size_t n, const double* syn, const double* real, const double* mask_obj,
                     const double* mask_arm, double* out);
};

bool isa_available(Isa isa) noexcept;
std::string_view isa_name(Isa isa) noexcept;
std::optional<Isa> parse_isa(std::string_view name) noexcept;

/// Active ISA: the override if set, else HANDSYN_SIMD, else the best detected one.
Isa active_isa() noexcept;
/// Pins (or with nullopt releases) the active ISA. Throws if the ISA is unavailable.
void force_isa(std::optional<Isa> isa);

const KernelTable& kernels() noexcept;
const KernelTable& kernels_for(Isa isa);

namespace detail {
const KernelTable& scalar_table() noexcept;
const KernelTable* avx2_table() noexcept;
}  // namespace detail

}  // namespace handsyn::simd
