#pragma once

// Stochastic detector models turning photon-arrival streams into timetags.
//
// Both detectors are single-pass state machines. Input may be fed in any
// number of sorted batches; as long as advance() is only called with a bound
// below which every arrival has already been fed, the output is bit-identical
// to processing the whole stream at once.

#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <vector>

#include "hsps/rng.hpp"
#include "hsps/types.hpp"

namespace hsps {

struct GateClock {
  double frequency_hz = 1e9;
  Picos phase_offset_ps = 0;
  Picos gate_width_ps = 280;

  Picos period_ps() const;
  void validate() const;
};

struct GatePosition {
  std::int64_t gate_index;
  Picos offset;

  friend bool operator==(const GatePosition&, const GatePosition&) = default;
};

// gate_index = floor((t - phase) / period), offset in [0, period).
GatePosition gate_of(Picos t, const GateClock& gate);

struct Trap {
  double probability = 0.0;
  Picos lifetime_ps = 0;
};

struct SpadParams {
  double pde = 0.155;
  double dark_prob_per_gate = 1.25e-5;
  double afterpulse_total_prob = 0.0;
  Picos trap_lifetime_ps = 1'000'000;
  // Additional (probability, lifetime) trap species beyond the primary one.
  std::vector<Trap> extra_traps;
  // Afterpulses of generation > this depth are not scheduled.
  int max_afterpulse_generation = 3;
  Picos discriminator_deadtime_ps = 10'000;
  Picos holdoff_ps = 0;
  Picos jitter_fwhm_ps = 30;
  GateClock gate;

  void validate() const;
  std::vector<Trap> traps() const;
};

struct SnspdParams {
  double efficiency = 0.85;
  double dark_rate_hz = 100.0;
  Picos deadtime_ps = 50'000;
  Picos jitter_fwhm_ps = 40;

  void validate() const;
};

inline constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)
inline constexpr double kJitterTruncationSigmas = 8.0;

class SpadDetector {
 public:
  SpadDetector(const SpadParams& params, std::uint64_t seed, std::uint8_t channel = 0, Picos start_ps = 0);

  // Sorted arrivals, none earlier than previously fed ones.
  void feed(std::span<const PhotonArrival> arrivals);
  // Processes every gate that closes before `until` and appends the tags
  // that can no longer be reordered by jitter.
  void advance(Picos until, std::vector<TimeTag>& out);
  // Processes all gates starting before `end` and flushes; tags at or beyond
  // `end` are dropped.
  void finish(Picos end, std::vector<TimeTag>& out);

 private:
  struct Release {
    std::int64_t gate;
    Picos time;  // -1: fires at a uniformly drawn time inside the gate
    std::uint8_t generation;
    bool operator>(const Release& o) const { return gate != o.gate ? gate > o.gate : time > o.time; }
  };
  struct PendingPhoton {
    std::int64_t gate;
    Picos time;
    std::uint64_t pair_id;
  };

  Picos gate_start(std::int64_t g) const { return params_.gate.phase_offset_ps + g * period_; }
  Picos draw_in_gate(std::int64_t g);
  void process_until_gate(std::int64_t limit_gate);

  SpadParams params_;
  std::vector<Trap> traps_;
  Rng rng_;
  std::uint8_t channel_;
  Picos period_;
  Picos dead_ps_;
  double jitter_sigma_;
  std::int64_t next_gate_;
  std::int64_t next_dark_gate_;
  std::vector<PendingPhoton> photons_;
  std::size_t photon_head_ = 0;
  Picos last_fed_ = std::numeric_limits<Picos>::min();
  std::priority_queue<Release, std::vector<Release>, std::greater<>> releases_;
  bool has_last_tag_ = false;
  Picos last_tag_ = 0;
  std::vector<TimeTag> pending_out_;
};

class SnspdDetector {
 public:
  SnspdDetector(const SnspdParams& params, std::uint64_t seed, std::uint8_t channel = 0, Picos start_ps = 0);

  void feed(std::span<const PhotonArrival> arrivals);
  void advance(Picos until, std::vector<TimeTag>& out);
  void finish(Picos end, std::vector<TimeTag>& out);

 private:
  void process_until(Picos until);
  void candidate(Picos t, Origin origin, std::uint64_t pair_id);

  SnspdParams params_;
  Rng rng_;
  std::uint8_t channel_;
  double jitter_sigma_;
  double dark_mean_gap_ps_;
  double next_dark_;
  std::vector<PhotonArrival> photons_;
  std::size_t photon_head_ = 0;
  Picos last_fed_ = std::numeric_limits<Picos>::min();
  bool has_last_tag_ = false;
  Picos last_tag_ = 0;
  std::vector<TimeTag> pending_out_;
};

std::vector<TimeTag> detect_spad(std::span<const PhotonArrival> arrivals, const SpadParams& params, double duration_s,
                                 std::uint64_t seed, std::uint8_t channel = 0);

std::vector<TimeTag> detect_snspd(std::span<const PhotonArrival> arrivals, const SnspdParams& params,
                                  double duration_s, std::uint64_t seed, std::uint8_t channel = 0);

}  // namespace hsps
