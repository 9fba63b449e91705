#include "hsps/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hsps/error.hpp"

namespace hsps {
namespace {

constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

Picos floor_div(Picos a, Picos b) {
  Picos q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

double truncated_normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  double z = rng.normal();
  while (std::abs(z) > kJitterTruncationSigmas) z = rng.normal();
  return z * sigma;
}

Picos jitter_guard(double sigma) { return static_cast<Picos>(std::ceil(kJitterTruncationSigmas * sigma)) + 1; }

void flush_sorted(std::vector<TimeTag>& pending, Picos bound, Picos end, std::vector<TimeTag>& out) {
  std::stable_sort(pending.begin(), pending.end(), [](const TimeTag& a, const TimeTag& b) { return a.time < b.time; });
  auto split = std::lower_bound(pending.begin(), pending.end(), bound,
                                [](const TimeTag& t, Picos v) { return t.time < v; });
  for (auto it = pending.begin(); it != split; ++it) {
    if (it->time >= 0 && it->time < end) out.push_back(*it);
  }
  pending.erase(pending.begin(), split);
}

}  // namespace

Picos GateClock::period_ps() const { return static_cast<Picos>(std::llround(kPicosPerSecond / frequency_hz)); }

void GateClock::validate() const {
  if (!(frequency_hz > 0.0)) throw ConfigError("gate frequency must be > 0");
  const double exact = kPicosPerSecond / frequency_hz;
  if (std::abs(exact - std::round(exact)) > 1e-6) throw ConfigError("gate period must be a whole number of picoseconds");
  if (gate_width_ps <= 0 || gate_width_ps >= period_ps()) throw ConfigError("gate width must be in (0, period)");
}

GatePosition gate_of(Picos t, const GateClock& gate) {
  const Picos period = gate.period_ps();
  const Picos rel = t - gate.phase_offset_ps;
  const Picos idx = floor_div(rel, period);
  return {idx, rel - idx * period};
}

void SpadParams::validate() const {
  gate.validate();
  if (!(pde >= 0.0 && pde <= 1.0)) throw ConfigError("pde must be in [0,1]");
  if (!(dark_prob_per_gate >= 0.0 && dark_prob_per_gate <= 1.0)) throw ConfigError("dark_prob_per_gate must be in [0,1]");
  if (!(afterpulse_total_prob >= 0.0 && afterpulse_total_prob <= 1.0)) throw ConfigError("afterpulse probability must be in [0,1]");
  if (trap_lifetime_ps <= 0) throw ConfigError("trap lifetime must be > 0");
  for (const auto& t : extra_traps) {
    if (!(t.probability >= 0.0 && t.probability <= 1.0) || t.lifetime_ps <= 0) throw ConfigError("invalid trap species");
  }
  if (max_afterpulse_generation < 0 || max_afterpulse_generation > 255) throw ConfigError("afterpulse generation depth out of range");
  if (jitter_fwhm_ps < 0 || discriminator_deadtime_ps < 0 || holdoff_ps < 0) throw ConfigError("negative time parameter");
}

std::vector<Trap> SpadParams::traps() const {
  std::vector<Trap> out;
  if (afterpulse_total_prob > 0.0) out.push_back({afterpulse_total_prob, trap_lifetime_ps});
  for (const auto& t : extra_traps) {
    if (t.probability > 0.0) out.push_back(t);
  }
  return out;
}

void SnspdParams::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw ConfigError("efficiency must be in [0,1]");
  if (!(dark_rate_hz >= 0.0)) throw ConfigError("dark rate must be >= 0");
  if (deadtime_ps < 0 || jitter_fwhm_ps < 0) throw ConfigError("negative time parameter");
}

// ---------------------------------------------------------------------------

SpadDetector::SpadDetector(const SpadParams& params, std::uint64_t seed, std::uint8_t channel, Picos start_ps)
    : params_(params), rng_(seed), channel_(channel) {
  params_.validate();
  traps_ = params_.traps();
  period_ = params_.gate.period_ps();
  dead_ps_ = std::max(params_.discriminator_deadtime_ps, params_.holdoff_ps);
  jitter_sigma_ = static_cast<double>(params_.jitter_fwhm_ps) / kFwhmPerSigma;
  const GatePosition pos = gate_of(start_ps, params_.gate);
  next_gate_ = pos.gate_index + (pos.offset > 0 ? 1 : 0);
  if (params_.dark_prob_per_gate > 0.0) {
    const std::uint64_t gap = rng_.geometric(params_.dark_prob_per_gate);
    next_dark_gate_ = gap > static_cast<std::uint64_t>(kNever / 2) ? kNever : next_gate_ + static_cast<std::int64_t>(gap);
  } else {
    next_dark_gate_ = kNever;
  }
}

void SpadDetector::feed(std::span<const PhotonArrival> arrivals) {
  for (const auto& a : arrivals) {
    if (a.time < last_fed_) throw PreconditionError("photon arrivals must be sorted by time");
    last_fed_ = a.time;
    const GatePosition pos = gate_of(a.time, params_.gate);
    if (pos.offset >= params_.gate.gate_width_ps) continue;  // outside the gate: never fires
    if (pos.gate_index < next_gate_) throw PreconditionError("arrival fed after its gate was processed");
    photons_.push_back({pos.gate_index, a.time, a.pair_id});
  }
}

Picos SpadDetector::draw_in_gate(std::int64_t g) {
  return gate_start(g) + static_cast<Picos>(rng_.uniform() * static_cast<double>(params_.gate.gate_width_ps));
}

void SpadDetector::process_until_gate(std::int64_t limit_gate) {
  const Picos width = params_.gate.gate_width_ps;
  while (true) {
    const std::int64_t g_ph = photon_head_ < photons_.size() ? photons_[photon_head_].gate : kNever;
    const std::int64_t g_ap = releases_.empty() ? kNever : releases_.top().gate;
    const std::int64_t g = std::min({g_ph, next_dark_gate_, g_ap});
    if (g >= limit_gate) break;

    bool fired = false;
    Picos t_event = 0;
    Origin origin = Origin::unknown;
    std::uint8_t generation = 0;
    std::uint64_t pair_id = kNoPair;
    auto offer = [&](Picos t, Origin o, std::uint8_t gen, std::uint64_t pid) {
      if (!fired || t < t_event) {
        fired = true;
        t_event = t;
        origin = o;
        generation = gen;
        pair_id = pid;
      }
    };

    if (g == next_dark_gate_) {
      const Picos t = draw_in_gate(g);
      const std::uint64_t gap = rng_.geometric(params_.dark_prob_per_gate);
      next_dark_gate_ = gap > static_cast<std::uint64_t>(kNever / 2) ? kNever : g + 1 + static_cast<std::int64_t>(gap);
      offer(t, Origin::dark, 0, kNoPair);
    }
    if (g == g_ph) {
      const PendingPhoton first = photons_[photon_head_];
      while (photon_head_ < photons_.size() && photons_[photon_head_].gate == g) ++photon_head_;
      // One avalanche per gate: any number of photons in the window fires
      // it with probability pde.
      if (rng_.bernoulli(params_.pde)) offer(first.time, Origin::photon, 0, first.pair_id);
    }
    while (!releases_.empty() && releases_.top().gate == g) {
      const Release r = releases_.top();
      releases_.pop();
      offer(r.time >= 0 ? r.time : draw_in_gate(g), Origin::afterpulse, r.generation, kNoPair);
    }
    next_gate_ = g + 1;
    if (!fired) continue;

    const Picos t_tag = t_event + static_cast<Picos>(std::llround(truncated_normal(rng_, jitter_sigma_)));
    if (has_last_tag_ && t_tag - last_tag_ < dead_ps_) continue;  // suppressed: no tag, no trap charge
    has_last_tag_ = true;
    last_tag_ = t_tag;
    pending_out_.push_back({t_tag, channel_, origin, generation, pair_id});

    if (generation < params_.max_afterpulse_generation) {
      for (const Trap& trap : traps_) {
        if (!rng_.bernoulli(trap.probability)) continue;
        const Picos release = t_event + static_cast<Picos>(std::llround(rng_.exponential(static_cast<double>(trap.lifetime_ps))));
        const GatePosition pos = gate_of(release, params_.gate);
        Release r{pos.gate_index, release, static_cast<std::uint8_t>(generation + 1)};
        if (r.gate <= g) {
          r.gate = g + 1;
          r.time = -1;
        } else if (pos.offset >= width) {
          r.gate += 1;
          r.time = -1;
        }
        releases_.push(r);
      }
    }
  }
  next_gate_ = std::max(next_gate_, limit_gate);
  if (photon_head_ > 4096 && photon_head_ * 2 > photons_.size()) {
    photons_.erase(photons_.begin(), photons_.begin() + static_cast<std::ptrdiff_t>(photon_head_));
    photon_head_ = 0;
  }
}

void SpadDetector::advance(Picos until, std::vector<TimeTag>& out) {
  const std::int64_t limit = gate_of(until, params_.gate).gate_index;
  process_until_gate(limit);
  flush_sorted(pending_out_, gate_start(limit) - jitter_guard(jitter_sigma_), std::numeric_limits<Picos>::max(), out);
}

void SpadDetector::finish(Picos end, std::vector<TimeTag>& out) {
  const GatePosition pos = gate_of(end, params_.gate);
  const std::int64_t limit = pos.gate_index + (pos.offset > 0 ? 1 : 0);
  process_until_gate(limit);
  flush_sorted(pending_out_, std::numeric_limits<Picos>::max(), end, out);
}

// ---------------------------------------------------------------------------

SnspdDetector::SnspdDetector(const SnspdParams& params, std::uint64_t seed, std::uint8_t channel, Picos start_ps)
    : params_(params), rng_(seed), channel_(channel) {
  params_.validate();
  jitter_sigma_ = static_cast<double>(params_.jitter_fwhm_ps) / kFwhmPerSigma;
  dark_mean_gap_ps_ = params_.dark_rate_hz > 0.0 ? kPicosPerSecond / params_.dark_rate_hz : 0.0;
  next_dark_ = dark_mean_gap_ps_ > 0.0 ? static_cast<double>(start_ps) + rng_.exponential(dark_mean_gap_ps_)
                                       : std::numeric_limits<double>::infinity();
}

void SnspdDetector::feed(std::span<const PhotonArrival> arrivals) {
  for (const auto& a : arrivals) {
    if (a.time < last_fed_) throw PreconditionError("photon arrivals must be sorted by time");
    last_fed_ = a.time;
    photons_.push_back(a);
  }
}

void SnspdDetector::candidate(Picos t, Origin origin, std::uint64_t pair_id) {
  const Picos t_tag = t + static_cast<Picos>(std::llround(truncated_normal(rng_, jitter_sigma_)));
  if (has_last_tag_ && t_tag - last_tag_ < params_.deadtime_ps) return;
  has_last_tag_ = true;
  last_tag_ = t_tag;
  pending_out_.push_back({t_tag, channel_, origin, 0, pair_id});
}

void SnspdDetector::process_until(Picos until) {
  const double until_d = static_cast<double>(until);
  while (true) {
    const bool have_photon = photon_head_ < photons_.size() && photons_[photon_head_].time < until;
    const bool have_dark = next_dark_ < until_d;
    if (!have_photon && !have_dark) break;
    if (have_photon && (!have_dark || static_cast<double>(photons_[photon_head_].time) <= next_dark_)) {
      const PhotonArrival& a = photons_[photon_head_++];
      if (rng_.bernoulli(params_.efficiency)) candidate(a.time, Origin::photon, a.pair_id);
    } else {
      const auto t = static_cast<Picos>(std::floor(next_dark_));
      next_dark_ += rng_.exponential(dark_mean_gap_ps_);
      candidate(t, Origin::dark, kNoPair);
    }
  }
  if (photon_head_ > 4096 && photon_head_ * 2 > photons_.size()) {
    photons_.erase(photons_.begin(), photons_.begin() + static_cast<std::ptrdiff_t>(photon_head_));
    photon_head_ = 0;
  }
}

void SnspdDetector::advance(Picos until, std::vector<TimeTag>& out) {
  process_until(until);
  flush_sorted(pending_out_, until - jitter_guard(jitter_sigma_), std::numeric_limits<Picos>::max(), out);
}

void SnspdDetector::finish(Picos end, std::vector<TimeTag>& out) {
  process_until(end);
  flush_sorted(pending_out_, std::numeric_limits<Picos>::max(), end, out);
}

// ---------------------------------------------------------------------------

std::vector<TimeTag> detect_spad(std::span<const PhotonArrival> arrivals, const SpadParams& params, double duration_s,
                                 std::uint64_t seed, std::uint8_t channel) {
  SpadDetector det(params, seed, channel, 0);
  det.feed(arrivals);
  std::vector<TimeTag> out;
  det.finish(seconds_to_ps(duration_s), out);
  return out;
}

std::vector<TimeTag> detect_snspd(std::span<const PhotonArrival> arrivals, const SnspdParams& params,
                                  double duration_s, std::uint64_t seed, std::uint8_t channel) {
  SnspdDetector det(params, seed, channel, 0);
  det.feed(arrivals);
  std::vector<TimeTag> out;
  det.finish(seconds_to_ps(duration_s), out);
  return out;
}

}  // namespace hsps
