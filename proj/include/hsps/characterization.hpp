#pragma once

// Single-histogram SPAD characterization: the detector is illuminated by a
// weak pulsed laser and every tag is folded modulo the laser period into one
// histogram, from which efficiency, dark counts and afterpulsing are read off.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsps/types.hpp"

namespace hsps {

// A point estimate with its Poisson-propagated standard error. `warning` is
// non-empty when the value is outside its physical range but is reported raw.
struct Estimate {
  double value = 0.0;
  double error = 0.0;
  std::string warning;
};

struct Histogram {
  Picos bin_width = 1000;
  Picos origin = 0;
  std::vector<std::uint64_t> counts;
  double integration_time_s = 0.0;
  // Laser pulses (or herald events) the histogram was accumulated over.
  std::uint64_t n_trigger = 0;
  // Detector gate frequency, used to convert per-bin counts to per-gate
  // probabilities and to Hz.
  double gate_frequency_hz = 1e9;

  std::uint64_t total() const;
  Picos span_ps() const { return bin_width * static_cast<Picos>(counts.size()); }
  double gates_per_bin() const;
};

struct PulsedSourceSpec {
  double rep_rate_hz = 100e3;
  double mu = 0.5;
  std::size_t pulse_bin = 0;
};

// Streaming fold of tag times into a period histogram. Tags may be pushed in
// any order and in any number of batches.
class PeriodHistogrammer {
 public:
  PeriodHistogrammer(Picos period, Picos bin_width, Picos origin = 0);

  void push(std::span<const Picos> times);
  void push(std::span<const TimeTag> tags);
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  // n_trigger = round(integration_time * rep_rate), rep_rate = 1/period.
  Histogram finish(double integration_time_s, double gate_frequency_hz) const;

 private:
  Picos period_;
  Picos bin_width_;
  Picos origin_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::int32_t> scratch_;
};

// Throws ConfigError unless period is a whole number of bins.
Histogram build_period_histogram(std::span<const TimeTag> tags, Picos period, Picos bin_width, double integration_time_s,
                                 double gate_frequency_hz = 1e9, Picos origin = 0);

// mu' = 1 - exp(-mu), the probability that a pulse carries at least one photon.
double mu_corrected(double mu);

// (C_L - expected dark counts in the pulse bin) / (mu' N_L)
Estimate pde_direct(const Histogram& hist, const PulsedSourceSpec& spec, double dcr_per_gate);

// (1/mu) ln((1 - p_d) / (1 - p_t))
double pde_poissonian(double p_d, double p_t, double mu);

// Total count probability per pulse in the illuminated bin, C_L / N_L.
double pulse_count_probability(const Histogram& hist, const PulsedSourceSpec& spec);

struct BinRange {
  std::size_t first = 0;
  std::size_t last = 0;  // exclusive
};

struct DcrEstimate {
  Estimate per_gate;
  Estimate hz;
  std::size_t bins = 0;
};

DcrEstimate estimate_dcr(const Histogram& hist, BinRange far_window);
// Default far window: the last `fraction` of the period.
BinRange default_far_window(const Histogram& hist, double fraction = 0.4);

struct AfterpulseEstimate {
  Estimate p_ap;
  // Bins contributing to C_T besides the pulse bin.
  std::size_t retained_bins = 0;
};

// Afterpulse probability with a software hold-off: the `holdoff_bins` bins
// following the pulse bin are discarded, the dark subtraction uses the
// retained bins' exposure only.
AfterpulseEstimate app_postprocess(const Histogram& hist, std::size_t holdoff_bins, const PulsedSourceSpec& spec,
                                   double dcr_per_gate);

// Greedy per-channel pass keeping a tag iff it is at least `deadtime` after
// the last kept tag on the same channel.
std::vector<TimeTag> apply_software_deadtime(std::span<const TimeTag> tags, Picos deadtime);

// Streaming form of apply_software_deadtime for a single ordered stream.
class DeadtimeFilter {
 public:
  explicit DeadtimeFilter(Picos deadtime) : deadtime_(deadtime) {}
  bool accept(Picos t);

 private:
  Picos deadtime_;
  bool has_last_ = false;
  Picos last_ = 0;
};

struct HoldoffPoint {
  Picos holdoff_ps = 0;
  Estimate p_ap;
};

struct CharacterizationResult {
  Estimate pde_direct;
  Estimate pde_poissonian;
  DcrEstimate dcr;
  std::vector<HoldoffPoint> app_curve;
};

CharacterizationResult characterize(const Histogram& hist, const PulsedSourceSpec& spec, BinRange far_window,
                                    std::span<const Picos> holdoffs_ps);

}  // namespace hsps
