#include "hsps/characterization.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hsps/error.hpp"
#include "hsps/simd.hpp"

namespace hsps {

std::uint64_t Histogram::total() const { return simd::sum_u64(counts); }

double Histogram::gates_per_bin() const {
  return static_cast<double>(bin_width) * gate_frequency_hz / kPicosPerSecond;
}

PeriodHistogrammer::PeriodHistogrammer(Picos period, Picos bin_width, Picos origin)
    : period_(period), bin_width_(bin_width), origin_(origin) {
  if (bin_width <= 0 || period <= 0) throw ConfigError("period and bin width must be > 0");
  if (period % bin_width != 0) throw ConfigError("period is not a whole number of bins");
  counts_.assign(static_cast<std::size_t>(period / bin_width), 0);
}

void PeriodHistogrammer::push(std::span<const Picos> times) {
  constexpr std::size_t kBlock = 4096;
  scratch_.resize(std::min(kBlock, times.size()));
  for (std::size_t i = 0; i < times.size(); i += kBlock) {
    const std::size_t n = std::min(kBlock, times.size() - i);
    const auto block = times.subspan(i, n);
    // Vector kernels need small offsets: fold against a congruent origin near the block.
    const Picos base = block.front() - (block.front() - origin_) % period_;
    simd::fold_bins(block, base, period_, bin_width_, std::span(scratch_).first(n));
    for (std::size_t j = 0; j < n; ++j) ++counts_[static_cast<std::size_t>(scratch_[j])];
  }
}

void PeriodHistogrammer::push(std::span<const TimeTag> tags) {
  std::vector<Picos> times(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) times[i] = tags[i].time;
  push(times);
}

Histogram PeriodHistogrammer::finish(double integration_time_s, double gate_frequency_hz) const {
  Histogram h;
  h.bin_width = bin_width_;
  h.origin = origin_;
  h.counts = counts_;
  h.integration_time_s = integration_time_s;
  h.n_trigger = static_cast<std::uint64_t>(std::llround(integration_time_s * kPicosPerSecond / static_cast<double>(period_)));
  h.gate_frequency_hz = gate_frequency_hz;
  return h;
}

Histogram build_period_histogram(std::span<const TimeTag> tags, Picos period, Picos bin_width, double integration_time_s,
                                 double gate_frequency_hz, Picos origin) {
  PeriodHistogrammer hist(period, bin_width, origin);
  hist.push(tags);
  return hist.finish(integration_time_s, gate_frequency_hz);
}

double mu_corrected(double mu) {
  if (!(mu >= 0.0)) throw DomainError("mean photon number must be >= 0");
  return -std::expm1(-mu);
}

double pulse_count_probability(const Histogram& hist, const PulsedSourceSpec& spec) {
  if (hist.n_trigger == 0) throw DomainError("histogram has no triggers");
  if (spec.pulse_bin >= hist.counts.size()) throw ConfigError("pulse bin outside histogram");
  return static_cast<double>(hist.counts[spec.pulse_bin]) / static_cast<double>(hist.n_trigger);
}

Estimate pde_direct(const Histogram& hist, const PulsedSourceSpec& spec, double dcr_per_gate) {
  if (hist.n_trigger == 0) throw DomainError("histogram has no triggers");
  if (spec.pulse_bin >= hist.counts.size()) throw ConfigError("pulse bin outside histogram");
  const double mu_p = mu_corrected(spec.mu);
  if (mu_p <= 0.0) throw DomainError("mean photon number must be > 0");
  const double n = static_cast<double>(hist.n_trigger);
  const double c_l = static_cast<double>(hist.counts[spec.pulse_bin]);
  const double dark = dcr_per_gate * hist.gates_per_bin() * n;
  Estimate e;
  e.value = (c_l - dark) / (mu_p * n);
  e.error = std::sqrt(c_l) / (mu_p * n);
  if (e.value < 0.0) e.warning = "negative efficiency: pulse-bin counts below the expected dark level";
  return e;
}

double pde_poissonian(double p_d, double p_t, double mu) {
  if (!(mu > 0.0)) throw DomainError("mean photon number must be > 0");
  if (!(p_d >= 0.0) || !(p_t < 1.0) || p_t < p_d) throw DomainError("need 0 <= p_d <= p_t < 1");
  return std::log((1.0 - p_d) / (1.0 - p_t)) / mu;
}

BinRange default_far_window(const Histogram& hist, double fraction) {
  const std::size_t n = hist.counts.size();
  const auto width = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  return {n - width, n};
}

DcrEstimate estimate_dcr(const Histogram& hist, BinRange far_window) {
  if (far_window.last <= far_window.first || far_window.last > hist.counts.size()) {
    throw ConfigError("dark-count window is empty or outside the histogram");
  }
  if (hist.n_trigger == 0) throw DomainError("histogram has no triggers");
  const std::size_t bins = far_window.last - far_window.first;
  const double sum = static_cast<double>(
      simd::sum_u64(std::span(hist.counts).subspan(far_window.first, bins)));
  const double exposure = static_cast<double>(bins) * static_cast<double>(hist.n_trigger) * hist.gates_per_bin();
  DcrEstimate d;
  d.bins = bins;
  d.per_gate.value = sum / exposure;
  d.per_gate.error = std::sqrt(sum) / exposure;
  d.hz.value = d.per_gate.value * hist.gate_frequency_hz;
  d.hz.error = d.per_gate.error * hist.gate_frequency_hz;
  return d;
}

AfterpulseEstimate app_postprocess(const Histogram& hist, std::size_t holdoff_bins, const PulsedSourceSpec& spec,
                                   double dcr_per_gate) {
  const std::size_t n = hist.counts.size();
  if (spec.pulse_bin >= n) throw ConfigError("pulse bin outside histogram");
  if (n < 2 || holdoff_bins >= n - 1) throw ConfigError("hold-off must leave at least one retained bin");
  const double triggers = static_cast<double>(hist.n_trigger);
  const double dark_per_bin = dcr_per_gate * hist.gates_per_bin() * triggers;

  const std::uint64_t total = hist.total();
  std::uint64_t discarded = 0;
  for (std::size_t k = 1; k <= holdoff_bins; ++k) discarded += hist.counts[(spec.pulse_bin + k) % n];
  const double c_l = static_cast<double>(hist.counts[spec.pulse_bin]);
  const double c_t = static_cast<double>(total - discarded);

  AfterpulseEstimate out;
  out.retained_bins = n - 1 - holdoff_bins;
  const double numerator = c_t - c_l - dark_per_bin * static_cast<double>(out.retained_bins);
  const double denominator = c_l - dark_per_bin;
  if (!(denominator > 0.0)) throw EstimationError("pulse bin holds no signal above the dark level");
  out.p_ap.value = numerator / denominator;
  const double var_num = c_t - c_l;
  const double var_den = c_l;
  out.p_ap.error = std::sqrt(var_num / (denominator * denominator) +
                             numerator * numerator * var_den / std::pow(denominator, 4));
  if (out.p_ap.value < 0.0) out.p_ap.warning = "negative afterpulse probability";
  return out;
}

bool DeadtimeFilter::accept(Picos t) {
  if (has_last_ && t - last_ < deadtime_) return false;
  has_last_ = true;
  last_ = t;
  return true;
}

std::vector<TimeTag> apply_software_deadtime(std::span<const TimeTag> tags, Picos deadtime) {
  if (deadtime < 0) throw ConfigError("deadtime must be >= 0");
  std::map<std::uint8_t, DeadtimeFilter> filters;
  std::vector<TimeTag> out;
  out.reserve(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i > 0 && tags[i].time < tags[i - 1].time) throw PreconditionError("tags must be sorted by time");
    auto it = filters.try_emplace(tags[i].channel, deadtime).first;
    if (it->second.accept(tags[i].time)) out.push_back(tags[i]);
  }
  return out;
}

CharacterizationResult characterize(const Histogram& hist, const PulsedSourceSpec& spec, BinRange far_window,
                                    std::span<const Picos> holdoffs_ps) {
  CharacterizationResult r;
  r.dcr = estimate_dcr(hist, far_window);
  const double p_d = r.dcr.per_gate.value * hist.gates_per_bin();
  r.pde_direct = pde_direct(hist, spec, r.dcr.per_gate.value);
  const double p_t = pulse_count_probability(hist, spec);
  r.pde_poissonian.value = pde_poissonian(std::min(p_d, p_t), p_t, spec.mu);
  r.pde_poissonian.error =
      std::sqrt(static_cast<double>(hist.counts[spec.pulse_bin])) / static_cast<double>(hist.n_trigger) /
      (spec.mu * (1.0 - p_t));
  for (const Picos h : holdoffs_ps) {
    if (h < 0) throw ConfigError("hold-off must be >= 0");
    const auto bins = static_cast<std::size_t>((h + hist.bin_width - 1) / hist.bin_width);
    r.app_curve.push_back({h, app_postprocess(hist, bins, spec, r.dcr.per_gate.value).p_ap});
  }
  return r;
}

}  // namespace hsps
