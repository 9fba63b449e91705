#pragma once

// Data-parallel inner loops used by the histogram and correlation code.
//
// Every kernel has a scalar reference implementation and vector variants
// (AVX2 on x86-64, NEON on aarch64). The variant is chosen once at runtime
// from CPU features; HSPS_SIMD=scalar|avx2|neon in the environment or
// force_isa() overrides it. All variants produce bit-identical results.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "hsps/types.hpp"

namespace hsps::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
// Best ISA the running CPU supports.
Isa detected_isa();
// ISA currently used by the dispatching entry points.
Isa active_isa();
// Throws ConfigError if the CPU cannot run `isa`.
void force_isa(Isa isa);

// Exact integer arithmetic is carried in binary64 inside the vector paths, so
// time offsets handed to the kernels must satisfy |t - origin| < kMaxExactSpan.
inline constexpr Picos kMaxExactSpan = Picos{1} << 50;

// bins[i] = floor(((times[i] - origin) mod period) / bin_width), mod taken in
// [0, period). Requires period % bin_width == 0 is NOT assumed; the last bin may
// be partial.
void fold_bins(std::span<const Picos> times, Picos origin, Picos period, Picos bin_width,
               std::span<std::int32_t> bins);

// For each t in `others`: k = floor((t - anchor - lo) / bin_width); if
// 0 <= k < counts.size(), ++counts[k]. Returns the number of increments.
std::size_t accumulate_deltas(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                              std::span<std::uint64_t> counts);

// Mirrored variant: k = floor((anchor - t - lo) / bin_width); if in range,
// ++counts[counts.size() - 1 - k]. Used for the negative-delay half of a
// histogram so that both halves round away from zero identically.
std::size_t accumulate_deltas_mirrored(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                                       std::span<std::uint64_t> counts);

std::uint64_t sum_u64(std::span<const std::uint64_t> values);

// out[i] = in[i] * factor
void scale_counts(std::span<const std::uint64_t> in, double factor, std::span<double> out);

// mask[i] = u[i] < p; returns the number of set entries.
std::size_t mask_below(std::span<const double> u, double p, std::span<std::uint8_t> mask);

// Per-ISA entry points, exposed for equivalence testing.
namespace scalar {
void fold_bins(std::span<const Picos>, Picos, Picos, Picos, std::span<std::int32_t>);
std::size_t accumulate_deltas(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::size_t accumulate_deltas_mirrored(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::uint64_t sum_u64(std::span<const std::uint64_t>);
void scale_counts(std::span<const std::uint64_t>, double, std::span<double>);
std::size_t mask_below(std::span<const double>, double, std::span<std::uint8_t>);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void fold_bins(std::span<const Picos>, Picos, Picos, Picos, std::span<std::int32_t>);
std::size_t accumulate_deltas(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::size_t accumulate_deltas_mirrored(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::uint64_t sum_u64(std::span<const std::uint64_t>);
void scale_counts(std::span<const std::uint64_t>, double, std::span<double>);
std::size_t mask_below(std::span<const double>, double, std::span<std::uint8_t>);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
void fold_bins(std::span<const Picos>, Picos, Picos, Picos, std::span<std::int32_t>);
std::size_t accumulate_deltas(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::size_t accumulate_deltas_mirrored(Picos, std::span<const Picos>, Picos, Picos, std::span<std::uint64_t>);
std::uint64_t sum_u64(std::span<const std::uint64_t>);
void scale_counts(std::span<const std::uint64_t>, double, std::span<double>);
std::size_t mask_below(std::span<const double>, double, std::span<std::uint8_t>);
}  // namespace neon
#endif

}  // namespace hsps::simd
