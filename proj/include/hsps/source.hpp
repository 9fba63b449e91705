#pragma once

// Photon-pair emission for a CW-pumped narrowband SFWM source and the lossy
// channels between source and detectors.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsps/types.hpp"

namespace hsps {

enum class PairStatistics {
  thermal,  // Bose-Einstein pair number per temporal mode (physical)
  poisson,  // test hook: yields an unbunched marginal
};

struct SourceParams {
  double pair_generation_rate_hz = 7.5e6;
  double bandwidth_signal_hz = 52.8e6;
  double bandwidth_idler_hz = 59.8e6;
  // Mean spacing of temporal-mode epochs; 0 selects default_mode_duration_s().
  double mode_duration_s = 0.0;
  double coupling_signal = 0.44;
  double coupling_idler = 0.44;
  PairStatistics statistics = PairStatistics::thermal;

  // Throws ConfigError on invalid values.
  void validate() const;
  // Non-fatal issues (bunching peak away from 2).
  std::vector<std::string> warnings() const;

  double tau_c_signal_s() const;
  double tau_c_idler_s() const;
  double effective_mode_duration_s() const;
};

// tau_c = 1 / (2 pi bandwidth), the one-sided exponential decay constant.
double coherence_time_from_bandwidth(double bandwidth_hz);

// Temporal modes are epochs of a Poisson process; each carries a thermal
// number of pairs, and every pair is placed about the epoch with the
// signal-idler delay split evenly between the two photons. Within-mode
// signal photons then differ by (D1 - D2) / 2 with D the signal-idler delay,
// and the unheralded autocorrelation is
//   g2(tau) = 1 + 2 M f(tau),  f = density of (D1 - D2) / 2,
// so g2(0) = 1 + 2 M / (tau_s + tau_i) on both arms. The default
// M = (tau_s + tau_i) / 2 makes the source a single thermal mode, g2(0) = 2.
double default_mode_duration_s(const SourceParams& params);
// Ideal-detector g2_auto(0) implied by the parameters.
double ideal_g2_auto_zero(const SourceParams& params);

// SFWM pair rate is quadratic in pump power.
double pair_rate_for_power(double reference_rate_hz, double reference_power, double power);

// Emission delays are drawn from exponentials truncated at this many decay
// constants (mass removed ~ e^-60), which bounds how far a photon can stray
// from its pair epoch and so lets streams be released chunk by chunk.
inline constexpr double kMaxOffsetInTauC = 60.0;
// Bound on |signal_offset| and |idler_offset|.
Picos max_emission_advance_ps(const SourceParams& params);

// Chunked, seed-deterministic pair generator. Chunks are fixed time slices
// drawing from independent derived seeds, so any chunk can be produced in
// isolation and the concatenation is independent of scheduling.
class PairGenerator {
 public:
  PairGenerator(const SourceParams& params, double duration_s, std::uint64_t seed,
                double chunk_duration_s = 0.01);

  std::size_t chunk_count() const { return chunk_count_; }
  Picos chunk_begin(std::size_t chunk) const;
  Picos chunk_end(std::size_t chunk) const;
  Picos duration_ps() const { return duration_ps_; }

  // Pairs whose epoch lies in the chunk, sorted by pair_time. Pair ids are
  // (chunk << 32) | index.
  std::vector<PairEvent> generate_chunk(std::size_t chunk) const;

 private:
  SourceParams params_;
  Picos duration_ps_;
  Picos chunk_ps_;
  std::uint64_t seed_;
  double mode_ps_;
  std::size_t chunk_count_;
  double tau_s_ps_;
  double tau_i_ps_;
};

std::vector<PairEvent> generate_pair_stream(const SourceParams& params, double duration_s, std::uint64_t seed);

// Independent Bernoulli thinning of one arm; survivors are time-sorted.
// Arrivals falling outside [0, end_ps) are dropped when end_ps > 0.
std::vector<PhotonArrival> apply_channel(std::span<const PairEvent> pairs, Arm arm, double transmission,
                                         std::uint64_t seed, Picos end_ps = 0);

}  // namespace hsps
