#if defined(__aarch64__)
#include <arm_neon.h>

#include "hsps/simd.hpp"

namespace hsps::simd::neon {
namespace {

inline float64x2_t floor_div(float64x2_t d, float64x2_t w, float64x2_t inv_w) {
  float64x2_t q = vrndmq_f64(vmulq_f64(d, inv_w));
  const float64x2_t r = vsubq_f64(d, vmulq_f64(q, w));
  const float64x2_t one = vdupq_n_f64(1.0);
  const float64x2_t zero = vdupq_n_f64(0.0);
  q = vbslq_f64(vcltq_f64(r, zero), vsubq_f64(q, one), q);
  q = vbslq_f64(vcgeq_f64(r, w), vaddq_f64(q, one), q);
  return q;
}

}  // namespace

void fold_bins(std::span<const Picos> times, Picos origin, Picos period, Picos bin_width,
               std::span<std::int32_t> bins) {
  const std::size_t n = times.size();
  const int64x2_t org = vdupq_n_s64(origin);
  const float64x2_t p = vdupq_n_f64(static_cast<double>(period));
  const float64x2_t inv_p = vdupq_n_f64(1.0 / static_cast<double>(period));
  const float64x2_t w = vdupq_n_f64(static_cast<double>(bin_width));
  const float64x2_t inv_w = vdupq_n_f64(1.0 / static_cast<double>(bin_width));
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vcvtq_f64_s64(vsubq_s64(vld1q_s64(times.data() + i), org));
    const float64x2_t q = floor_div(d, p, inv_p);
    const float64x2_t r = vsubq_f64(d, vmulq_f64(q, p));
    const int64x2_t b = vcvtq_s64_f64(floor_div(r, w, inv_w));
    bins[i] = static_cast<std::int32_t>(vgetq_lane_s64(b, 0));
    bins[i + 1] = static_cast<std::int32_t>(vgetq_lane_s64(b, 1));
  }
  scalar::fold_bins(times.subspan(i), origin, period, bin_width, bins.subspan(i));
}

std::size_t accumulate_deltas(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                              std::span<std::uint64_t> counts) {
  const std::size_t n = others.size();
  const auto nbins = static_cast<std::int64_t>(counts.size());
  const int64x2_t base = vdupq_n_s64(anchor + lo);
  const float64x2_t w = vdupq_n_f64(static_cast<double>(bin_width));
  const float64x2_t inv_w = vdupq_n_f64(1.0 / static_cast<double>(bin_width));
  std::size_t hits = 0;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vcvtq_f64_s64(vsubq_s64(vld1q_s64(others.data() + i), base));
    const int64x2_t k = vcvtq_s64_f64(floor_div(d, w, inv_w));
    for (const std::int64_t b : {vgetq_lane_s64(k, 0), vgetq_lane_s64(k, 1)}) {
      if (b >= 0 && b < nbins) {
        ++counts[static_cast<std::size_t>(b)];
        ++hits;
      }
    }
  }
  return hits + scalar::accumulate_deltas(anchor, others.subspan(i), lo, bin_width, counts);
}

std::size_t accumulate_deltas_mirrored(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                                       std::span<std::uint64_t> counts) {
  const std::size_t n = others.size();
  const auto nbins = static_cast<std::int64_t>(counts.size());
  const int64x2_t base = vdupq_n_s64(anchor - lo);
  const float64x2_t w = vdupq_n_f64(static_cast<double>(bin_width));
  const float64x2_t inv_w = vdupq_n_f64(1.0 / static_cast<double>(bin_width));
  std::size_t hits = 0;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vcvtq_f64_s64(vsubq_s64(base, vld1q_s64(others.data() + i)));
    const int64x2_t k = vcvtq_s64_f64(floor_div(d, w, inv_w));
    for (const std::int64_t b : {vgetq_lane_s64(k, 0), vgetq_lane_s64(k, 1)}) {
      if (b >= 0 && b < nbins) {
        ++counts[static_cast<std::size_t>(nbins - 1 - b)];
        ++hits;
      }
    }
  }
  return hits + scalar::accumulate_deltas_mirrored(anchor, others.subspan(i), lo, bin_width, counts);
}

std::uint64_t sum_u64(std::span<const std::uint64_t> values) {
  uint64x2_t acc = vdupq_n_u64(0);
  std::size_t i = 0;
  for (; i + 2 <= values.size(); i += 2) acc = vaddq_u64(acc, vld1q_u64(values.data() + i));
  return vgetq_lane_u64(acc, 0) + vgetq_lane_u64(acc, 1) + scalar::sum_u64(values.subspan(i));
}

void scale_counts(std::span<const std::uint64_t> in, double factor, std::span<double> out) {
  const float64x2_t f = vdupq_n_f64(factor);
  std::size_t i = 0;
  for (; i + 2 <= in.size(); i += 2) vst1q_f64(out.data() + i, vmulq_f64(vcvtq_f64_u64(vld1q_u64(in.data() + i)), f));
  scalar::scale_counts(in.subspan(i), factor, out.subspan(i));
}

std::size_t mask_below(std::span<const double> u, double p, std::span<std::uint8_t> mask) {
  const float64x2_t pv = vdupq_n_f64(p);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 2 <= u.size(); i += 2) {
    const uint64x2_t lt = vcltq_f64(vld1q_f64(u.data() + i), pv);
    mask[i] = static_cast<std::uint8_t>(vgetq_lane_u64(lt, 0) & 1);
    mask[i + 1] = static_cast<std::uint8_t>(vgetq_lane_u64(lt, 1) & 1);
    count += mask[i] + mask[i + 1];
  }
  return count + scalar::mask_below(u.subspan(i), p, mask.subspan(i));
}

}  // namespace hsps::simd::neon
#endif
