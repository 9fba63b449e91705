#include <doctest.h>

#include <vector>

#include "hsps/error.hpp"
#include "hsps/rng.hpp"
#include "hsps/simd.hpp"

using namespace hsps;

namespace {

std::vector<Picos> random_times(std::uint64_t seed, std::size_t n, Picos lo, Picos hi) {
  Rng rng(seed);
  std::vector<Picos> v(n);
  for (auto& t : v) t = lo + static_cast<Picos>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo));
  return v;
}

// Reference definitions written directly from the kernel contracts.
Picos floor_div(Picos a, Picos b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

}  // namespace

TEST_CASE("fold_bins matches the modular definition on every ISA") {
  const auto times = random_times(1, 1003, -5'000'000, 50'000'000);
  for (const Picos period : {Picos{10'000'000}, Picos{1000}, Picos{7777}}) {
    for (const Picos bw : {Picos{1000}, Picos{333}}) {
      std::vector<std::int32_t> ref(times.size()), got(times.size());
      for (std::size_t i = 0; i < times.size(); ++i) {
        Picos r = (times[i] - 12345) % period;
        if (r < 0) r += period;
        ref[i] = static_cast<std::int32_t>(r / bw);
      }
      simd::scalar::fold_bins(times, 12345, period, bw, got);
      CHECK(got == ref);
#if defined(__x86_64__)
      if (simd::isa_supported(simd::Isa::avx2)) {
        std::fill(got.begin(), got.end(), -1);
        simd::avx2::fold_bins(times, 12345, period, bw, got);
        CHECK(got == ref);
      }
#endif
#if defined(__aarch64__)
      std::fill(got.begin(), got.end(), -1);
      simd::neon::fold_bins(times, 12345, period, bw, got);
      CHECK(got == ref);
#endif
    }
  }
}

TEST_CASE("accumulate_deltas variants agree with a scalar loop") {
  const auto others = random_times(2, 517, 0, 200'000);
  const Picos anchor = 100'000;
  for (const Picos bw : {Picos{100}, Picos{101}, Picos{1}}) {
    const Picos lo = -50;
    std::vector<std::uint64_t> ref(300, 0), ref_m(300, 0);
    std::size_t n_ref = 0, n_ref_m = 0;
    for (const Picos t : others) {
      const Picos k = floor_div(t - anchor - lo, bw);
      if (k >= 0 && k < 300) ++ref[static_cast<std::size_t>(k)], ++n_ref;
      const Picos km = floor_div(anchor - t - lo, bw);
      if (km >= 0 && km < 300) ++ref_m[299 - static_cast<std::size_t>(km)], ++n_ref_m;
    }
    std::vector<std::uint64_t> got(300, 0), got_m(300, 0);
    CHECK(simd::scalar::accumulate_deltas(anchor, others, lo, bw, got) == n_ref);
    CHECK(simd::scalar::accumulate_deltas_mirrored(anchor, others, lo, bw, got_m) == n_ref_m);
    CHECK(got == ref);
    CHECK(got_m == ref_m);
#if defined(__x86_64__)
    if (simd::isa_supported(simd::Isa::avx2)) {
      std::vector<std::uint64_t> v(300, 0), vm(300, 0);
      CHECK(simd::avx2::accumulate_deltas(anchor, others, lo, bw, v) == n_ref);
      CHECK(simd::avx2::accumulate_deltas_mirrored(anchor, others, lo, bw, vm) == n_ref_m);
      CHECK(v == ref);
      CHECK(vm == ref_m);
    }
#endif
#if defined(__aarch64__)
    std::vector<std::uint64_t> v(300, 0), vm(300, 0);
    CHECK(simd::neon::accumulate_deltas(anchor, others, lo, bw, v) == n_ref);
    CHECK(simd::neon::accumulate_deltas_mirrored(anchor, others, lo, bw, vm) == n_ref_m);
    CHECK(v == ref);
    CHECK(vm == ref_m);
#endif
  }
}

TEST_CASE("reductions and masks are bit-identical across ISAs") {
  Rng rng(3);
  std::vector<std::uint64_t> counts(1029);
  for (auto& c : counts) c = rng.next_u64() >> 20;
  std::vector<double> u(1031);
  for (auto& x : u) x = rng.uniform();

  std::uint64_t ref_sum = 0;
  for (auto c : counts) ref_sum += c;
  std::vector<double> ref_scaled(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) ref_scaled[i] = static_cast<double>(counts[i]) * 0.37;
  std::vector<std::uint8_t> ref_mask(u.size());
  std::size_t ref_n = 0;
  for (std::size_t i = 0; i < u.size(); ++i) ref_n += (ref_mask[i] = u[i] < 0.42);

  auto check = [&](auto sum, auto scale, auto mask) {
    CHECK(sum(std::span<const std::uint64_t>(counts)) == ref_sum);
    std::vector<double> out(counts.size());
    scale(std::span<const std::uint64_t>(counts), 0.37, std::span<double>(out));
    CHECK(out == ref_scaled);
    std::vector<std::uint8_t> m(u.size());
    CHECK(mask(std::span<const double>(u), 0.42, std::span<std::uint8_t>(m)) == ref_n);
    CHECK(m == ref_mask);
  };
  check(simd::scalar::sum_u64, simd::scalar::scale_counts, simd::scalar::mask_below);
#if defined(__x86_64__)
  if (simd::isa_supported(simd::Isa::avx2)) check(simd::avx2::sum_u64, simd::avx2::scale_counts, simd::avx2::mask_below);
#endif
#if defined(__aarch64__)
  check(simd::neon::sum_u64, simd::neon::scale_counts, simd::neon::mask_below);
#endif
}

TEST_CASE("dispatch honours force_isa") {
  const auto before = simd::active_isa();
  simd::force_isa(simd::Isa::scalar);
  CHECK(simd::active_isa() == simd::Isa::scalar);
  CHECK(simd::isa_name(simd::Isa::scalar) == "scalar");
#if defined(__x86_64__)
  CHECK_THROWS_AS(simd::force_isa(simd::Isa::neon), ConfigError);
#endif
  simd::force_isa(before);
  CHECK(simd::active_isa() == before);
}
