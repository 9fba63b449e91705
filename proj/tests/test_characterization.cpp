#include <doctest.h>

#include <cmath>
#include <map>

#include "hsps/characterization.hpp"
#include "hsps/detector.hpp"
#include "hsps/error.hpp"
#include "hsps/rng.hpp"

using namespace hsps;

namespace {

// 10 us period at 1 ns bins, one gate per bin, 8e6 pulses.
Histogram synthetic(double pde, double mu, double p_dc, std::size_t pulse_bin = 0) {
  Histogram h;
  h.bin_width = 1000;
  h.counts.assign(10'000, 0);
  h.n_trigger = 8'000'000;
  h.integration_time_s = 80.0;
  const double n = static_cast<double>(h.n_trigger);
  for (auto& c : h.counts) c = static_cast<std::uint64_t>(std::llround(p_dc * n));
  h.counts[pulse_bin] = static_cast<std::uint64_t>(std::llround((1.0 - std::exp(-mu)) * n * pde + p_dc * n));
  return h;
}

// Laser-illuminated SPAD run folded into a period histogram.
Histogram pulsed_run(const SpadParams& p, double mu, double seconds, std::uint64_t seed, double rep = 100e3,
                     Picos offset = 100) {
  const Picos period = static_cast<Picos>(std::llround(1e12 / rep));
  std::vector<PhotonArrival> photons;
  Rng rng(seed);
  for (Picos t = offset; t < seconds_to_ps(seconds); t += period)
    for (std::uint64_t k = rng.poisson(mu); k > 0; --k) photons.push_back({t, Arm::signal, kNoPair});
  const auto tags = detect_spad(photons, p, seconds, seed + 1);
  return build_period_histogram(tags, period, 1000, seconds, 1e9);
}

}  // namespace

TEST_CASE("corrected mean photon number") {
  CHECK(mu_corrected(0.5) == doctest::Approx(1.0 - std::exp(-0.5)).epsilon(1e-12));
  CHECK(std::abs(mu_corrected(0.5) - 0.39347) < 1e-5);
  CHECK(mu_corrected(0.0) == 0.0);
  CHECK_THROWS_AS(mu_corrected(-1), DomainError);
}

TEST_CASE("Poissonian PDE formula") {
  CHECK(pde_poissonian(1.25e-5, 1.25e-5, 0.5) == 0.0);
  // ln((1 - pd)/(1 - pt)) / mu written out.
  CHECK(pde_poissonian(0.01, 0.06, 0.5) == doctest::Approx(std::log(0.99 / 0.94) / 0.5));
  CHECK_THROWS_AS(pde_poissonian(0.1, 0.05, 0.5), DomainError);
  CHECK_THROWS_AS(pde_poissonian(0.0, 1.0, 0.5), DomainError);
  CHECK_THROWS_AS(pde_poissonian(0.0, 0.1, 0.0), DomainError);
}

TEST_CASE("direct PDE round trip on a constructed histogram") {
  const auto h = synthetic(0.155, 0.5, 1.25e-5);
  const auto e = pde_direct(h, {100e3, 0.5, 0}, 1.25e-5);
  CHECK(e.value == doctest::Approx(0.155).epsilon(1e-4));
  CHECK(e.warning.empty());
  const auto neg = pde_direct(h, {100e3, 0.5, 0}, 1.0);
  CHECK(neg.value < 0);
  CHECK_FALSE(neg.warning.empty());
}

TEST_CASE("dark count estimate and far window") {
  const auto h = synthetic(0.155, 0.5, 1.25e-5);
  const auto w = default_far_window(h, 0.4);
  CHECK(w.first == 6000);
  CHECK(w.last == 10'000);
  const auto d = estimate_dcr(h, w);
  CHECK(d.per_gate.value / 1.25e-5 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d.hz.value == doctest::Approx(12'500).epsilon(1e-3));
  CHECK(d.bins == 4000);
  CHECK_THROWS_AS(estimate_dcr(h, {5, 5}), ConfigError);
}

TEST_CASE("afterpulse post-processing on a constructed histogram") {
  auto h = synthetic(0.155, 0.5, 1e-5);
  const double c_l = static_cast<double>(h.counts[0]) - 80.0;
  // Afterpulses: 2% of illuminated counts, spread as exp(-t/1us).
  double injected = 0;
  for (std::size_t k = 1; k < h.counts.size(); ++k) {
    const double x = 0.02 * c_l * (std::exp(-static_cast<double>(k - 1) / 1000.0) - std::exp(-static_cast<double>(k) / 1000.0));
    const auto add = static_cast<std::uint64_t>(std::llround(x));
    h.counts[k] += add;
    injected += static_cast<double>(add);
  }
  const PulsedSourceSpec spec{100e3, 0.5, 0};
  const auto a0 = app_postprocess(h, 0, spec, 1e-5);
  CHECK(a0.p_ap.value == doctest::Approx(injected / c_l).epsilon(1e-6));
  CHECK(a0.retained_bins == 9999);
  // Hold-off of 1000 bins removes the first e-fold.
  const auto a1 = app_postprocess(h, 1000, spec, 1e-5);
  CHECK(a1.p_ap.value == doctest::Approx(0.02 * std::exp(-1.0)).epsilon(0.01));
  CHECK(a1.retained_bins == 8999);
  CHECK_THROWS_AS(app_postprocess(h, 9999, spec, 1e-5), ConfigError);

  // Afterpulse-free histogram reads zero.
  const auto clean = synthetic(0.155, 0.5, 1e-5);
  CHECK(app_postprocess(clean, 100, spec, 1e-5).p_ap.value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("period histogrammer") {
  CHECK_THROWS_AS(PeriodHistogrammer(10'000, 3000), ConfigError);
  std::vector<Picos> times;
  Rng rng(3);
  for (int i = 0; i < 20'000; ++i) times.push_back(static_cast<Picos>(rng.next_u64() % 1'000'000'000'000ULL));
  PeriodHistogrammer whole(10'000'000, 1000);
  whole.push(times);
  PeriodHistogrammer parts(10'000'000, 1000);
  std::vector<Picos> rev(times.rbegin(), times.rend());
  for (std::size_t i = 0; i < rev.size(); i += 777) parts.push(std::span(rev).subspan(i, std::min<std::size_t>(777, rev.size() - i)));
  CHECK(whole.counts() == parts.counts());
  std::vector<std::uint64_t> ref(10'000, 0);
  for (Picos t : times) ++ref[static_cast<std::size_t>((t % 10'000'000) / 1000)];
  CHECK(whole.counts() == ref);
  const auto h = whole.finish(2.0, 1e9);
  CHECK(h.n_trigger == 200'000);
  CHECK(h.total() == 20'000);
}

TEST_CASE("software deadtime equals the reference greedy pass") {
  Rng rng(5);
  std::vector<TimeTag> tags;
  Picos t = 0;
  for (int i = 0; i < 10'000; ++i) {
    t += static_cast<Picos>(rng.exponential(800));
    tags.push_back({t, static_cast<std::uint8_t>(rng.next_u64() % 3), Origin::unknown, 0, kNoPair});
  }
  const Picos dt = 5000;
  // Per channel: keep a tag iff no kept tag lies within dt before it.
  std::map<int, std::vector<Picos>> kept;
  std::vector<TimeTag> ref;
  for (const auto& x : tags) {
    auto& k = kept[x.channel];
    bool ok = true;
    for (auto it = k.rbegin(); it != k.rend() && x.time - *it < dt; ++it) ok = false;
    if (ok) {
      k.push_back(x.time);
      ref.push_back(x);
    }
  }
  CHECK(apply_software_deadtime(tags, dt) == ref);
  CHECK(apply_software_deadtime(tags, 0) == tags);
  std::swap(tags[10], tags[11]);
  tags[10].time = tags[11].time + 1;
  CHECK_THROWS_AS(apply_software_deadtime(tags, dt), PreconditionError);
}

TEST_CASE("closed loop: simulated pulsed SPAD recovers its parameters") {
  SpadParams p;
  p.pde = 0.155;
  p.dark_prob_per_gate = 1.25e-5;
  p.afterpulse_total_prob = 0.0;
  const auto h = pulsed_run(p, 0.5, 2.0, 31);
  const PulsedSourceSpec spec{100e3, 0.5, 0};
  const Picos holdoffs[] = {0, 100'000, 1'000'000};
  const auto r = characterize(h, spec, default_far_window(h), holdoffs);
  CHECK(std::abs(r.pde_direct.value - 0.155) < 3 * r.pde_direct.error);
  CHECK(std::abs(r.dcr.per_gate.value - 1.25e-5) < 5 * r.dcr.per_gate.error);
  for (const auto& pt : r.app_curve) CHECK(std::abs(pt.p_ap.value) < 3 * pt.p_ap.error);
  // Under the per-gate model the Poissonian formula reads -ln(1 - pde mu')/mu.
  const double expect = -std::log(1.0 - 0.155 * mu_corrected(0.5)) / 0.5;
  CHECK(std::abs(r.pde_poissonian.value - expect) < 3 * r.pde_poissonian.error);

  // Laser off: the whole-period dark estimate agrees with the far window.
  const auto dark = pulsed_run(p, 0.0, 2.0, 32);
  const auto all = estimate_dcr(dark, {0, dark.counts.size()});
  const auto far = estimate_dcr(dark, default_far_window(dark));
  CHECK(std::abs(all.per_gate.value - far.per_gate.value) < 3 * std::hypot(all.per_gate.error, far.per_gate.error));
}

TEST_CASE("both PDE formulas agree at small mu without afterpulsing") {
  SpadParams p;
  p.pde = 0.155;
  p.dark_prob_per_gate = 1.25e-5;
  p.afterpulse_total_prob = 0.0;
  const double mu = 0.01;
  const auto h = pulsed_run(p, mu, 20.0, 41, 1e6);
  const PulsedSourceSpec spec{1e6, mu, 0};
  const auto r = characterize(h, spec, default_far_window(h), {});
  CHECK(std::abs(r.pde_poissonian.value / r.pde_direct.value - 1.0) < 0.01);
}

TEST_CASE("afterpulse curve is non-increasing in the hold-off") {
  SpadParams p;
  p.afterpulse_total_prob = 0.08;
  p.trap_lifetime_ps = 400'000;
  p.extra_traps = {{0.02, 2'000'000}};
  const auto h = pulsed_run(p, 0.5, 2.0, 51);
  const PulsedSourceSpec spec{100e3, 0.5, 0};
  const Picos holdoffs[] = {0, 10'000, 100'000, 1'000'000, 5'000'000};
  const auto r = characterize(h, spec, default_far_window(h), holdoffs);
  for (std::size_t i = 1; i < r.app_curve.size(); ++i) {
    const auto& a = r.app_curve[i - 1].p_ap;
    const auto& b = r.app_curve[i].p_ap;
    CHECK(b.value <= a.value + 3 * std::hypot(a.error, b.error));
  }
  CHECK(r.app_curve.front().p_ap.value > 0.05);
  CHECK(r.app_curve.back().p_ap.value < 0.01);
}
