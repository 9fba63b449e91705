// Compiled with -mavx2; only reached through the dispatcher after a CPUID check.
#include <immintrin.h>

#include <array>

#include "hsps/simd.hpp"

namespace hsps::simd::avx2 {
namespace {

// Exact int64 -> double for |v| < 2^51 (AVX2 has no cvtepi64_pd).
inline __m256d to_double(__m256i v) {
  const __m256i magic_i = _mm256_set1_epi64x(0x4338000000000000LL);
  const __m256d magic_d = _mm256_set1_pd(0x1.8p52);
  return _mm256_sub_pd(_mm256_castsi256_pd(_mm256_add_epi64(v, magic_i)), magic_d);
}

// floor(d / w) for integral d, w > 0, corrected to be exact.
inline __m256d floor_div(__m256d d, __m256d w, __m256d inv_w) {
  __m256d q = _mm256_floor_pd(_mm256_mul_pd(d, inv_w));
  const __m256d r = _mm256_sub_pd(d, _mm256_mul_pd(q, w));
  const __m256d one = _mm256_set1_pd(1.0);
  q = _mm256_sub_pd(q, _mm256_and_pd(_mm256_cmp_pd(r, _mm256_setzero_pd(), _CMP_LT_OQ), one));
  q = _mm256_add_pd(q, _mm256_and_pd(_mm256_cmp_pd(r, w, _CMP_GE_OQ), one));
  return q;
}

}  // namespace

void fold_bins(std::span<const Picos> times, Picos origin, Picos period, Picos bin_width,
               std::span<std::int32_t> bins) {
  const std::size_t n = times.size();
  const __m256i org = _mm256_set1_epi64x(origin);
  const __m256d p = _mm256_set1_pd(static_cast<double>(period));
  const __m256d inv_p = _mm256_set1_pd(1.0 / static_cast<double>(period));
  const __m256d w = _mm256_set1_pd(static_cast<double>(bin_width));
  const __m256d inv_w = _mm256_set1_pd(1.0 / static_cast<double>(bin_width));
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256i t = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(times.data() + i));
    const __m256d d = to_double(_mm256_sub_epi64(t, org));
    const __m256d q = floor_div(d, p, inv_p);
    const __m256d r = _mm256_sub_pd(d, _mm256_mul_pd(q, p));
    const __m256d b = floor_div(r, w, inv_w);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(bins.data() + i), _mm256_cvttpd_epi32(b));
  }
  scalar::fold_bins(times.subspan(i), origin, period, bin_width, bins.subspan(i));
}

std::size_t accumulate_deltas(Picos anchor, std::span<const Picos> others, Picos lo, Picos bin_width,
                              std::span<std::uint64_t> counts) {
  const std::size_t n = others.size();
  const auto nbins = static_cast<std::int64_t>(counts.size());
  const __m256i base = _mm256_set1_epi64x(anchor + lo);
  const __m256d w = _mm256_set1_pd(static_cast<double>(bin_width));
  const __m256d inv_w = _mm256_set1_pd(1.0 / static_cast<double>(bin_width));
  alignas(16) std::array<std::int32_t, 4> k{};
  std::size_t hits = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256i t = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(others.data() + i));
    const __m256d d = to_double(_mm256_sub_epi64(t, base));
    const __m256d q = floor_div(d, w, inv_w);
    _mm_store_si128(reinterpret_cast<__m128i*>(k.data()), _mm256_cvttpd_epi32(q));
    for (const std::int32_t b : k) {
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
  const __m256i base = _mm256_set1_epi64x(anchor - lo);
  const __m256d w = _mm256_set1_pd(static_cast<double>(bin_width));
  const __m256d inv_w = _mm256_set1_pd(1.0 / static_cast<double>(bin_width));
  alignas(16) std::array<std::int32_t, 4> k{};
  std::size_t hits = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256i t = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(others.data() + i));
    const __m256d d = to_double(_mm256_sub_epi64(base, t));
    const __m256d q = floor_div(d, w, inv_w);
    _mm_store_si128(reinterpret_cast<__m128i*>(k.data()), _mm256_cvttpd_epi32(q));
    for (const std::int32_t b : k) {
      if (b >= 0 && b < nbins) {
        ++counts[static_cast<std::size_t>(nbins - 1 - b)];
        ++hits;
      }
    }
  }
  return hits + scalar::accumulate_deltas_mirrored(anchor, others.subspan(i), lo, bin_width, counts);
}

std::uint64_t sum_u64(std::span<const std::uint64_t> values) {
  const std::size_t n = values.size();
  __m256i acc = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_epi64(acc, _mm256_loadu_si256(reinterpret_cast<const __m256i*>(values.data() + i)));
  }
  alignas(32) std::array<std::uint64_t, 4> lanes{};
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes.data()), acc);
  return lanes[0] + lanes[1] + lanes[2] + lanes[3] + scalar::sum_u64(values.subspan(i));
}

void scale_counts(std::span<const std::uint64_t> in, double factor, std::span<double> out) {
  const std::size_t n = in.size();
  const __m256d f = _mm256_set1_pd(factor);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(in.data() + i));
    _mm256_storeu_pd(out.data() + i, _mm256_mul_pd(to_double(v), f));
  }
  scalar::scale_counts(in.subspan(i), factor, out.subspan(i));
}

std::size_t mask_below(std::span<const double> u, double p, std::span<std::uint8_t> mask) {
  const std::size_t n = u.size();
  const __m256d pv = _mm256_set1_pd(p);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const int bits = _mm256_movemask_pd(_mm256_cmp_pd(_mm256_loadu_pd(u.data() + i), pv, _CMP_LT_OQ));
    mask[i] = bits & 1;
    mask[i + 1] = (bits >> 1) & 1;
    mask[i + 2] = (bits >> 2) & 1;
    mask[i + 3] = (bits >> 3) & 1;
    count += static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(bits)));
  }
  return count + scalar::mask_below(u.subspan(i), p, mask.subspan(i));
}

}  // namespace hsps::simd::avx2
