#include <atomic>
#include <cstdlib>
#include <string>

#include "hsps/error.hpp"
#include "hsps/simd.hpp"

namespace hsps::simd {
namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("HSPS_SIMD")) {
    const std::string want(env);
    for (const Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
      if (want == isa_name(isa) && isa_supported(isa)) return isa;
    }
  }
  return detected_isa();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() {
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw ConfigError("SIMD variant '" + std::string(isa_name(isa)) + "' not supported on this CPU");
  current().store(isa, std::memory_order_relaxed);
}

#if defined(__x86_64__) || defined(_M_X64)
#define HSPS_DISPATCH(fn, ...)                               \
  switch (active_isa()) {                                    \
    case Isa::avx2: return avx2::fn(__VA_ARGS__);            \
    default: return scalar::fn(__VA_ARGS__);                 \
  }
#elif defined(__aarch64__)
#define HSPS_DISPATCH(fn, ...)                               \
  switch (active_isa()) {                                    \
    case Isa::neon: return neon::fn(__VA_ARGS__);            \
    default: return scalar::fn(__VA_ARGS__);                 \
  }
#else
#define HSPS_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__);
#endif

void fold_bins(std::span<const Picos> times, Picos origin, Picos period, Picos bin_width,
               std::span<std::int32_t> bins) {
  HSPS_DISPATCH(fold_bins, times, origin, period, bin_width, bins)
}

std::size_t accumulate_deltas(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                              std::span<std::uint64_t> counts) {
  HSPS_DISPATCH(accumulate_deltas, anchor, others, lo, bin_width, counts)
}

std::size_t accumulate_deltas_mirrored(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                                       std::span<std::uint64_t> counts) {
  HSPS_DISPATCH(accumulate_deltas_mirrored, anchor, others, lo, bin_width, counts)
}

std::uint64_t sum_u64(std::span<const std::uint64_t> values) { HSPS_DISPATCH(sum_u64, values) }

void scale_counts(std::span<const std::uint64_t> in, double factor, std::span<double> out) {
  HSPS_DISPATCH(scale_counts, in, factor, out)
}

std::size_t mask_below(std::span<const double> u, double p, std::span<std::uint8_t> mask) {
  HSPS_DISPATCH(mask_below, u, p, mask)
}

#undef HSPS_DISPATCH

}  // namespace hsps::simd
