#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "handsyn/simd.hpp"

namespace handsyn::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() noexcept {
  if (const char* env = std::getenv("HANDSYN_SIMD")) {
    if (auto parsed = parse_isa(env); parsed && isa_available(*parsed)) return *parsed;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

// -1 = no override, otherwise static_cast<int>(Isa)
std::atomic<int> g_override{-1};

}  // namespace

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2: return detail::avx2_table() != nullptr && cpu_has_avx2();
  }
  return false;
}

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

std::optional<Isa> parse_isa(std::string_view name) noexcept {
  if (name == "scalar") return Isa::Scalar;
  if (name == "avx2") return Isa::Avx2;
  return std::nullopt;
}

Isa active_isa() noexcept {
  static const Isa detected = detect();
  const int o = g_override.load(std::memory_order_relaxed);
  return o < 0 ? detected : static_cast<Isa>(o);
}

void force_isa(std::optional<Isa> isa) {
  if (isa && !isa_available(*isa))
    throw std::runtime_error("SIMD variant '" + std::string(isa_name(*isa)) +
                             "' is not available on this CPU");
  g_override.store(isa ? static_cast<int>(*isa) : -1, std::memory_order_relaxed);
}

const KernelTable& kernels_for(Isa isa) {
  if (!isa_available(isa))
    throw std::runtime_error("SIMD variant '" + std::string(isa_name(isa)) + "' is not available");
  return isa == Isa::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

const KernelTable& kernels() noexcept {
  return active_isa() == Isa::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

}  // namespace handsyn::simd
