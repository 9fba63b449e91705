#include "hsps/simd.hpp"

namespace hsps::simd::scalar {

void fold_bins(std::span<const Picos> times, Picos origin, Picos period, Picos bin_width,
               std::span<std::int32_t> bins) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    Picos r = (times[i] - origin) % period;
    if (r < 0) r += period;
    bins[i] = static_cast<std::int32_t>(r / bin_width);
  }
}

std::size_t accumulate_deltas(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                              std::span<std::uint64_t> counts) {
  const auto n = static_cast<Picos>(counts.size());
  std::size_t hits = 0;
  for (const Picos t : others) {
    const Picos d = t - anchor - lo;
    if (d < 0) continue;
    const Picos k = d / bin_width;
    if (k < n) {
      ++counts[static_cast<std::size_t>(k)];
      ++hits;
    }
  }
  return hits;
}

std::size_t accumulate_deltas_mirrored(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                                       std::span<std::uint64_t> counts) {
  const auto n = static_cast<Picos>(counts.size());
  std::size_t hits = 0;
  for (const Picos t : others) {
    const Picos d = anchor - t - lo;
    if (d < 0) continue;
    const Picos k = d / bin_width;
    if (k < n) {
      ++counts[static_cast<std::size_t>(n - 1 - k)];
      ++hits;
    }
  }
  return hits;
}

std::uint64_t sum_u64(std::span<const std::uint64_t> values) {
  std::uint64_t s = 0;
  for (const auto v : values) s += v;
  return s;
}

void scale_counts(std::span<const std::uint64_t> in, double factor, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<double>(in[i]) * factor;
}

std::size_t mask_below(std::span<const double> u, double p, std::span<std::uint8_t> mask) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mask[i] = u[i] < p ? 1 : 0;
    n += mask[i];
  }
  return n;
}

}  // namespace hsps::simd::scalar
