#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hsps/correlation.hpp"
#include "hsps/error.hpp"
#include "hsps/rng.hpp"

using namespace hsps;

namespace {

std::vector<Picos> poisson_stream(std::uint64_t seed, std::size_t n, double mean_gap) {
  Rng rng(seed);
  std::vector<Picos> v(n);
  double t = 0;
  for (auto& x : v) x = static_cast<Picos>(t += rng.exponential(mean_gap));
  return v;
}

// O(N^2) reference: every pair, binned by the documented geometry.
std::vector<std::uint64_t> brute_force(const std::vector<Picos>& a, const std::vector<Picos>& b,
                                       const CorrelationHistogram& shape) {
  std::vector<std::uint64_t> c(shape.size(), 0);
  for (const Picos ta : a)
    for (const Picos tb : b) {
      const Picos d = tb - ta;
      for (std::size_t k = 0; k < shape.size(); ++k)
        if (d >= shape.bin_lo(k) && d <= shape.bin_hi(k)) ++c[k];
    }
  return c;
}

}  // namespace

TEST_CASE("bin geometry tiles the delay axis symmetrically") {
  for (const Picos bw : {Picos{1}, Picos{2}, Picos{100}, Picos{101}, Picos{1000}}) {
    CrossCorrelator cc(bw, 10 * bw + 3);
    const auto h = cc.result(1.0);
    REQUIRE(h.size() % 2 == 1);
    CHECK(h.bin_lo(h.center()) == -h.bin_hi(h.center()));
    for (std::size_t k = 0; k + 1 < h.size(); ++k) CHECK(h.bin_hi(k) + 1 == h.bin_lo(k + 1));
    for (std::size_t k = 0; k < h.size(); ++k) {
      CHECK(h.bin_lo(k) == -h.bin_hi(h.size() - 1 - k));
      if (k != h.center()) CHECK(h.bin_span(k) == bw);
    }
    CHECK(h.reach() >= 10 * bw + 3);
  }
}

TEST_CASE("streaming correlator equals brute force") {
  const auto a = poisson_stream(1, 3000, 20'000);
  const auto b = poisson_stream(2, 3000, 20'000);
  for (const Picos bw : {Picos{100}, Picos{333}, Picos{1000}}) {
    const auto h = cross_correlation(a, b, bw, 40'000);
    CHECK(h.counts == brute_force(a, b, h));

    // Same result pushed in uneven batches with interleaved watermarks.
    CrossCorrelator cc(bw, 40'000);
    std::size_t ia = 0, ib = 0;
    Rng rng(bw);
    while (ia < a.size() || ib < b.size()) {
      const std::size_t ja = std::min(a.size(), ia + 1 + rng.next_u64() % 400);
      const std::size_t jb = std::min(b.size(), ib + 1 + rng.next_u64() % 400);
      cc.push_a(std::span(a).subspan(ia, ja - ia));
      cc.push_b(std::span(b).subspan(ib, jb - ib));
      ia = ja;
      ib = jb;
      const Picos wa = ia < a.size() ? a[ia] : a.back() + 1;
      const Picos wb = ib < b.size() ? b[ib] : b.back() + 1;
      cc.advance(std::min(wa, wb));
    }
    cc.finish();
    CHECK(cc.result(1.0).counts == h.counts);
  }
}

TEST_CASE("swapping streams mirrors the histogram exactly") {
  const auto a = poisson_stream(3, 5000, 5000);
  const auto b = poisson_stream(4, 5000, 5000);
  for (const Picos bw : {Picos{100}, Picos{101}}) {
    auto ab = cross_correlation(a, b, bw, 20'000).counts;
    const auto ba = cross_correlation(b, a, bw, 20'000).counts;
    std::reverse(ab.begin(), ab.end());
    CHECK(ab == ba);
  }
}

TEST_CASE("independent Poisson streams normalize to g2 = 1") {
  const auto a = poisson_stream(5, 200'000, 10'000);
  const auto b = poisson_stream(6, 200'000, 10'000);
  const auto h = g2_normalize(cross_correlation(a, b, 1000, 100'000));
  double s = 0;
  for (double g : h.g2) s += g;
  CHECK(s / static_cast<double>(h.size()) == doctest::Approx(1.0).epsilon(0.01));
  const auto z = g2_at_zero(h, 5000);
  CHECK(std::abs(z.value - 1.0) < 4 * z.error);
}

TEST_CASE("g2_at_zero averages bins wholly inside the window") {
  CorrelationHistogram h;
  h.bin_width = 100;
  h.half_bins = 3;
  h.counts = {10, 10, 30, 50, 30, 10, 10};
  h.g2 = {1, 1, 3, 5, 3, 1, 1};
  h.integration_time_s = 1;
  // Central bin [-50, 50]; neighbours end at +-150.
  CHECK(g2_at_zero(h, 10).value == 5.0);
  CHECK(g2_at_zero(h, 150).value == doctest::Approx(11.0 / 3.0));
  CorrelationHistogram raw = h;
  raw.g2.clear();
  CHECK_THROWS_AS(g2_at_zero(raw, 100), PreconditionError);
}

TEST_CASE("peak fit recovers asymmetric decay constants") {
  CorrelationHistogram h;
  h.bin_width = 100;
  h.half_bins = 400;
  h.counts.resize(801);
  h.integration_time_s = 1;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double tau = h.bin_center(k);
    const double side = tau < 0 ? 3014.0 : 2661.0;
    h.counts[k] = static_cast<std::uint64_t>(std::llround(200.0 + 1e5 * std::exp(-std::abs(tau) / side)));
  }
  const auto fit = fit_g2_peak(h);
  CHECK(fit.tau_c_signal_ps == doctest::Approx(3014.0).epsilon(2e-3));
  CHECK(fit.tau_c_idler_ps == doctest::Approx(2661.0).epsilon(2e-3));
  CHECK(fit.baseline == doctest::Approx(200.0).epsilon(0.01));
  CHECK(fit.g2_0 == doctest::Approx(1e5 + 200).epsilon(2e-3));

  CorrelationHistogram flat = h;
  std::fill(flat.counts.begin(), flat.counts.end(), 0);
  CHECK_THROWS_AS(fit_g2_peak(flat), FitError);
}

TEST_CASE("coincidence rate sums the coherence window") {
  CorrelationHistogram h;
  h.bin_width = 100;
  h.half_bins = 50;
  h.counts.assign(101, 0);
  h.counts[50] = 700;
  h.counts[49] = 200;
  h.counts[52] = 100;
  CoherenceFit f;
  f.tau_c_signal_ps = 1000;
  f.tau_c_idler_ps = 1000;
  const auto r = coincidence_rate(h, f, 2.0);
  CHECK(r.value == doctest::Approx(500.0));
  CHECK(r.error == doctest::Approx(std::sqrt(1000.0) / 2.0));
  f.tau_c_idler_ps = 1e6;
  CHECK_THROWS_AS(coincidence_rate(h, f, 2.0), ConfigError);
}

TEST_CASE("heralding efficiency and rate") {
  CHECK(heralding_efficiency(1700, 51'000, 0.85) == doctest::Approx(1700.0 / (51'000.0 * 0.85)));
  CHECK(heralded_rate(0.039, 51'000) == doctest::Approx(1989.0));
  CHECK_THROWS_AS(heralding_efficiency(1, 0, 0.85), DomainError);
  CHECK_THROWS_AS(heralding_efficiency(1, 10, 0), DomainError);
}

TEST_CASE("heralded triple counting equals brute force") {
  const auto h = poisson_stream(7, 4000, 10'000);
  const auto a = poisson_stream(8, 4000, 10'000);
  const auto b = poisson_stream(9, 4000, 10'000);
  for (const Picos w : {Picos{3000}, Picos{3001}, Picos{20'000}}) {
    HeraldedCounts ref;
    const Picos half = w / 2;
    for (const Picos th : h) {
      std::uint64_t na = 0, nb = 0;
      for (const Picos t : a) na += std::abs(t - th) <= half;
      for (const Picos t : b) nb += std::abs(t - th) <= half;
      ++ref.n_h;
      ref.n_ha += na;
      ref.n_hb += nb;
      ref.n_hab += na * nb;
    }
    const auto got = heralded_counts(h, a, b, w);
    CHECK(got.n_h == ref.n_h);
    CHECK(got.n_ha == ref.n_ha);
    CHECK(got.n_hb == ref.n_hb);
    CHECK(got.n_hab == ref.n_hab);

    HeraldedG2Counter c(w);
    for (std::size_t i = 0; i < h.size(); i += 500) {
      const std::size_t n = std::min<std::size_t>(500, h.size() - i);
      c.push_herald(std::span(h).subspan(i, n));
      c.push_a(std::span(a).subspan(i, n));
      c.push_b(std::span(b).subspan(i, n));
      const std::size_t j = i + n;
      if (j < h.size()) c.advance(std::min({h[j], a[j], b[j]}));
    }
    c.finish();
    CHECK(c.counts().n_hab == ref.n_hab);
    CHECK(c.counts().n_ha == ref.n_ha);
  }
}

TEST_CASE("heralded g2 estimator") {
  HeraldedCounts c{1000, 100, 50, 1};
  CHECK(c.g2().value == doctest::Approx(0.2));
  HeraldedCounts none{1000, 0, 50, 0};
  CHECK_THROWS_AS(none.g2(), EstimationError);
  // Uncorrelated Poisson arms around Poisson heralds: g2_h = 1.
  const auto h = poisson_stream(10, 100'000, 50'000);
  const auto a = poisson_stream(11, 200'000, 25'000);
  const auto b = poisson_stream(12, 200'000, 25'000);
  const auto g = heralded_g2(h, a, b, 20'000);
  CHECK(std::abs(g.value - 1.0) < 4 * g.error);
}

TEST_CASE("unsorted input is rejected") {
  CrossCorrelator cc(100, 1000);
  const std::vector<Picos> bad = {5, 3};
  CHECK_THROWS_AS(cc.push_a(bad), PreconditionError);
  CHECK_THROWS_AS(HeraldedG2Counter(0), ConfigError);
}
