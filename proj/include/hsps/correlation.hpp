#pragma once

// Coincidence correlators over timetag streams and the source figures of
// merit derived from them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsps/characterization.hpp"
#include "hsps/types.hpp"

namespace hsps {

// Histogram of delays tau = t_b - t_a. There are 2m+1 bins, bin m is centred
// on zero. With h = (bin_width - 1) / 2 the central bin covers
// [-(bin_width - h - 1), bin_width - h - 1] and the others tile outwards in
// steps of bin_width, mirror-symmetrically, so swapping a and b reverses the
// histogram exactly.
struct CorrelationHistogram {
  Picos bin_width = 1000;
  std::size_t half_bins = 0;  // m
  std::vector<std::uint64_t> counts;
  // Filled by g2_normalize; empty for raw histograms.
  std::vector<double> g2;
  int channel_a = 0;
  int channel_b = 1;
  double integration_time_s = 0.0;
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;

  std::size_t size() const { return counts.size(); }
  std::size_t center() const { return half_bins; }
  bool normalized() const { return !g2.empty(); }
  // Inclusive delay bounds of bin k.
  Picos bin_lo(std::size_t k) const;
  Picos bin_hi(std::size_t k) const;
  Picos bin_span(std::size_t k) const { return bin_hi(k) - bin_lo(k) + 1; }
  double bin_center(std::size_t k) const { return 0.5 * static_cast<double>(bin_lo(k) + bin_hi(k)); }
  // Largest |tau| covered.
  Picos reach() const { return bin_hi(counts.size() - 1); }
};

// Single-pass streaming correlator. Streams are pushed in sorted batches;
// advance(w) declares that every tag earlier than w has been pushed on both
// streams. Memory is bounded by the tags within one reach of the watermark.
class CrossCorrelator {
 public:
  // The histogram covers at least [-tau_range, tau_range].
  CrossCorrelator(Picos bin_width, Picos tau_range);

  void push_a(std::span<const Picos> times);
  void push_b(std::span<const Picos> times);
  void advance(Picos watermark);
  void finish();
  CorrelationHistogram result(double integration_time_s, int channel_a = 0, int channel_b = 1) const;

 private:
  void process_anchor(Picos t);

  CorrelationHistogram hist_;
  Picos reach_;
  Picos lo_;
  std::vector<Picos> a_;
  std::size_t a_head_ = 0;
  std::vector<Picos> b_;
  std::size_t b_lo_ = 0;
  std::size_t b_mid_ = 0;
  std::size_t b_hi_ = 0;
  Picos last_a_;
  Picos last_b_;
  std::uint64_t n_a_ = 0;
  std::uint64_t n_b_ = 0;
};

CorrelationHistogram cross_correlation(std::span<const Picos> a, std::span<const Picos> b, Picos bin_width,
                                       Picos tau_range);

// Divides each bin by the accidental level rate_a * rate_b * span * T.
CorrelationHistogram g2_normalize(const CorrelationHistogram& hist, double rate_a_hz, double rate_b_hz);
// Rates from the stored singles counts.
CorrelationHistogram g2_normalize(const CorrelationHistogram& hist);

// g2 averaged over the bins lying entirely within |tau| <= half_width
// (at least the central bin).
Estimate g2_at_zero(const CorrelationHistogram& normalized, Picos half_width);

struct CoherenceFit {
  // Decay constants on the negative / positive delay side. For a histogram of
  // t_signal - t_idler these are tau_c,s and tau_c,i.
  double tau_c_signal_ps = 0.0;
  double tau_c_idler_ps = 0.0;
  double peak_amplitude = 0.0;
  double baseline = 0.0;
  double fit_residual = 0.0;  // RMS over fitted bins
  double g2_0 = 0.0;          // baseline + amplitude
  std::size_t points = 0;
  int iterations = 0;
};

struct FitOptions {
  std::uint64_t min_counts = 10;
  int max_iterations = 200;
  // Restricts the fit to |tau| <= this when > 0.
  Picos fit_range_ps = 0;
};

// Unweighted least squares of baseline + A exp(-|tau| / tau_side) with
// independent sides. Fits the g2 values when normalized, raw counts otherwise.
CoherenceFit fit_g2_peak(const CorrelationHistogram& hist, const FitOptions& options = {});

// Eq. 5 style: raw counts summed over bins centred in (-tau_c,s, +tau_c,i),
// divided by the integration time.
Estimate coincidence_rate(const CorrelationHistogram& raw, const CoherenceFit& fit, double integration_time_s);

double heralding_efficiency(double r_si_hz, double r_i_hz, double eta_d_s);
double heralded_rate(double eta_h_s, double r_i_hz);

struct HeraldedCounts {
  std::uint64_t n_h = 0;
  std::uint64_t n_ha = 0;
  std::uint64_t n_hb = 0;
  std::uint64_t n_hab = 0;

  // (N_hab N_h) / (N_ha N_hb); EstimationError when a pair count is zero.
  Estimate g2() const;
};

// Streaming heralded-HBT counter. A tag on arm a (or b) is coincident with a
// herald when |t - t_h| <= window / 2; N_ha, N_hb count herald-arm pairs and
// N_hab herald-a-b triples.
class HeraldedG2Counter {
 public:
  explicit HeraldedG2Counter(Picos window);

  void push_herald(std::span<const Picos> times);
  void push_a(std::span<const Picos> times);
  void push_b(std::span<const Picos> times);
  void advance(Picos watermark);
  void finish();
  const HeraldedCounts& counts() const { return counts_; }

 private:
  struct Arm {
    std::vector<Picos> times;
    std::size_t lo = 0;
    Picos last;
    std::size_t count_near(Picos t, Picos window);
    void compact();
  };
  void process(Picos t_h);

  Picos window_;
  std::vector<Picos> heralds_;
  std::size_t herald_head_ = 0;
  Picos last_herald_;
  Arm a_;
  Arm b_;
  HeraldedCounts counts_;
};

Estimate heralded_g2(std::span<const Picos> heralds, std::span<const Picos> arm_a, std::span<const Picos> arm_b,
                     Picos window);
HeraldedCounts heralded_counts(std::span<const Picos> heralds, std::span<const Picos> arm_a,
                               std::span<const Picos> arm_b, Picos window);

struct HspsMetrics {
  Estimate r_si;
  Estimate r_i;
  Estimate eta_h_s;
  Estimate r_h_s;
  std::optional<Estimate> g2_auto_0;
  std::optional<Estimate> purity;
  std::optional<Estimate> g2_h_0;
  Picos coincidence_window_ps = 0;
  CoherenceFit cross_fit;
};

// Fills r_si / eta_h_s / r_h_s from a herald(a) x signal(b) histogram.
HspsMetrics heralding_metrics(const CorrelationHistogram& cross_raw, double r_i_hz, double eta_d_s,
                              const FitOptions& options = {});

}  // namespace hsps
