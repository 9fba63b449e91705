#include "hsps/analysis.hpp"

#include <cmath>

#include "hsps/error.hpp"

namespace hsps {

struct Analyzer::State {
  RunConfig config;
  double integration_time_s;
  std::map<std::uint8_t, DeadtimeFilter> filters;
  std::map<std::uint8_t, std::uint64_t> singles;
  std::map<std::uint8_t, std::uint64_t> raw_singles;
  std::map<std::uint8_t, std::vector<Picos>> batch;
  // One correlator per signal channel against the herald.
  std::vector<std::pair<std::uint8_t, CrossCorrelator>> cross;
  std::optional<CrossCorrelator> autocorr;
  std::optional<HeraldedG2Counter> heralded;
  std::optional<PeriodHistogrammer> period;
  std::optional<std::uint8_t> period_channel;
  std::vector<Picos> period_batch;
  double gate_frequency_hz = 1e9;
  bool finished = false;
};

Analyzer::Analyzer(const RunConfig& config, double integration_time_s) : s_(std::make_unique<State>()) {
  s_->config = config;
  s_->integration_time_s = integration_time_s;
  const AnalysisConfig& a = config.analysis;
  for (const auto& [ch, dt] : a.software_deadtime_ps) s_->filters.emplace(ch, DeadtimeFilter(dt));
  if (a.herald_channel) {
    for (const auto ch : a.signal_channels) {
      s_->cross.emplace_back(ch, CrossCorrelator(a.cross_bin_width_ps, a.cross_tau_range_ps));
    }
  }
  if (a.auto_channels) s_->autocorr.emplace(a.auto_bin_width_ps, a.auto_tau_range_ps);
  if (a.heralded_window_ps) s_->heralded.emplace(*a.heralded_window_ps);
  if (a.characterization.channel) {
    if (!config.laser) throw ConfigError("characterization needs the laser block for the histogram period");
    s_->period_channel = a.characterization.channel;
    s_->period.emplace(config.laser->period_ps(), a.characterization.bin_width_ps, 0);
    const auto it = config.detectors.find(*a.characterization.channel);
    if (it != config.detectors.end() && it->second.kind == DetectorConfig::Kind::spad) {
      s_->gate_frequency_hz = it->second.spad.gate.frequency_hz;
    }
  }
}

Analyzer::~Analyzer() = default;

void Analyzer::consume(std::span<const TimeTag> tags, Picos watermark) {
  State& s = *s_;
  for (auto& [ch, v] : s.batch) v.clear();
  for (const auto& t : tags) {
    ++s.raw_singles[t.channel];
    // The characterization histogram always sees the raw stream.
    if (s.period && t.channel == *s.period_channel) s.period_batch.push_back(t.time);
    auto f = s.filters.find(t.channel);
    if (f != s.filters.end() && !f->second.accept(t.time)) continue;
    ++s.singles[t.channel];
    s.batch[t.channel].push_back(t.time);
  }
  if (s.period) {
    s.period->push(s.period_batch);
    s.period_batch.clear();
  }
  const AnalysisConfig& a = s.config.analysis;
  auto times = [&](std::uint8_t ch) -> std::span<const Picos> { return s.batch[ch]; };
  for (auto& [ch, corr] : s.cross) {
    corr.push_a(times(*a.herald_channel));
    corr.push_b(times(ch));
    corr.advance(watermark);
  }
  if (s.autocorr) {
    s.autocorr->push_a(times((*a.auto_channels)[0]));
    s.autocorr->push_b(times((*a.auto_channels)[1]));
    s.autocorr->advance(watermark);
  }
  if (s.heralded) {
    s.heralded->push_herald(times(*a.herald_channel));
    s.heralded->push_a(times(a.signal_channels[0]));
    s.heralded->push_b(times(a.signal_channels[1]));
    s.heralded->advance(watermark);
  }
}

void Analyzer::finish(Picos) {
  State& s = *s_;
  for (auto& [ch, corr] : s.cross) corr.finish();
  if (s.autocorr) s.autocorr->finish();
  if (s.heralded) s.heralded->finish();
  s.finished = true;
}

AnalysisReport Analyzer::report() const {
  const State& s = *s_;
  if (!s.finished) throw PreconditionError("analysis report requested before finish()");
  const AnalysisConfig& a = s.config.analysis;
  const double t = s.integration_time_s;
  AnalysisReport r;
  r.integration_time_s = t;
  r.singles = s.singles;
  r.raw_singles = s.raw_singles;
  auto singles = [&](std::uint8_t ch) {
    const auto it = s.singles.find(ch);
    return it == s.singles.end() ? std::uint64_t{0} : it->second;
  };

  if (!s.cross.empty()) {
    CorrelationHistogram sum;
    for (const auto& [ch, corr] : s.cross) {
      auto h = corr.result(t, *a.herald_channel, ch);
      if (sum.counts.empty()) {
        sum = h;
        sum.n_b = 0;
        sum.counts.assign(h.counts.size(), 0);
      }
      for (std::size_t k = 0; k < h.counts.size(); ++k) sum.counts[k] += h.counts[k];
      sum.n_b += h.n_b;
    }
    sum.n_a = singles(*a.herald_channel);
    r.cross = sum;
    if (!(t > 0.0)) throw EstimationError("integration time must be > 0");
    const double r_i = static_cast<double>(singles(*a.herald_channel)) / t;
    if (!(r_i > 0.0)) throw EstimationError("no herald counts");
    r.metrics = heralding_metrics(sum, r_i, s.config.eta_d_s(), a.fit);
    r.has_heralding = true;
  }

  if (s.autocorr) {
    const auto ch = *a.auto_channels;
    auto raw = s.autocorr->result(t, ch[0], ch[1]);
    if (raw.n_a == 0 || raw.n_b == 0) throw EstimationError("autocorrelation channel has no counts");
    auto norm = g2_normalize(raw);
    r.metrics.g2_auto_0 = g2_at_zero(norm, a.auto_zero_half_width_ps);
    Estimate purity = *r.metrics.g2_auto_0;
    purity.value -= 1.0;
    r.metrics.purity = purity;
    try {
      FitOptions fo;
      r.auto_fit = fit_g2_peak(norm, fo);
    } catch (const FitError& e) {
      r.warnings.push_back(std::string("autocorrelation peak fit: ") + e.what());
    }
    r.autocorr = std::move(norm);
  }

  if (s.heralded) {
    r.heralded = s.heralded->counts();
    try {
      r.metrics.g2_h_0 = r.heralded->g2();
    } catch (const EstimationError& e) {
      r.warnings.push_back(std::string("heralded g2: ") + e.what());
    }
  }

  if (s.period) r.period_histogram = s.period->finish(t, s.gate_frequency_hz);
  return r;
}

AnalysisReport analyze_tags(const RunConfig& config, std::span<const TimeTag> tags, double integration_time_s) {
  Analyzer an(config, integration_time_s);
  an.consume(tags, tags.empty() ? 0 : tags.back().time);
  an.finish(seconds_to_ps(integration_time_s));
  return an.report();
}

AnalysisReport analyze_file(const RunConfig& config, const std::filesystem::path& tags, double integration_time_s) {
  Analyzer an(config, integration_time_s);
  TagSink* sinks[] = {&an};
  replay_tag_file(tags, sinks, seconds_to_ps(integration_time_s));
  return an.report();
}

nlohmann::json estimate_json(const Estimate& e) {
  nlohmann::json j = {{"value", e.value}, {"stderr", e.error}};
  if (!e.warning.empty()) j["warning"] = e.warning;
  return j;
}

nlohmann::json metrics_json(const AnalysisReport& r) {
  nlohmann::json j;
  j["integration_time_s"] = r.integration_time_s;
  for (const auto& [ch, n] : r.singles) {
    j["singles"][std::to_string(ch)] = {{"counts", n}, {"rate_hz", n / r.integration_time_s}};
  }
  const auto& m = r.metrics;
  if (r.has_heralding) {
    j["r_si_hz"] = estimate_json(m.r_si);
    j["r_i_hz"] = estimate_json(m.r_i);
    j["eta_h_s"] = estimate_json(m.eta_h_s);
    j["r_h_s_hz"] = estimate_json(m.r_h_s);
    j["coincidence_window_ps"] = m.coincidence_window_ps;
    j["cross_fit"] = {{"tau_c_signal_ps", m.cross_fit.tau_c_signal_ps},
                      {"tau_c_idler_ps", m.cross_fit.tau_c_idler_ps},
                      {"peak_amplitude", m.cross_fit.peak_amplitude},
                      {"baseline", m.cross_fit.baseline},
                      {"fit_residual", m.cross_fit.fit_residual},
                      {"points", m.cross_fit.points}};
  }
  if (m.g2_auto_0) j["g2_auto_0"] = estimate_json(*m.g2_auto_0);
  if (m.purity) j["purity"] = estimate_json(*m.purity);
  if (r.auto_fit) {
    j["auto_fit"] = {{"g2_0", r.auto_fit->g2_0},
                     {"baseline", r.auto_fit->baseline},
                     {"tau_left_ps", r.auto_fit->tau_c_signal_ps},
                     {"tau_right_ps", r.auto_fit->tau_c_idler_ps},
                     {"fit_residual", r.auto_fit->fit_residual}};
  }
  if (m.g2_h_0) {
    j["g2_h_0"] = estimate_json(*m.g2_h_0);
    j["heralded_counts"] = {{"n_h", r.heralded->n_h}, {"n_ha", r.heralded->n_ha}, {"n_hb", r.heralded->n_hb},
                            {"n_hab", r.heralded->n_hab}};
  }
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

}  // namespace hsps
