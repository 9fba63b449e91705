#include "hsps/source.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hsps/error.hpp"
#include "hsps/rng.hpp"
#include "hsps/simd.hpp"

namespace hsps {
namespace {

constexpr std::uint64_t kPairStream = 0x5041495253ULL;  // "PAIRS"
constexpr std::uint64_t kMaxPairsPerChunk = std::uint64_t{1} << 32;

double truncated_exponential(Rng& rng, double mean) {
  const double cap = kMaxOffsetInTauC * mean;
  double x = rng.exponential(mean);
  while (x > cap) x = rng.exponential(mean);
  return x;
}

}  // namespace

double coherence_time_from_bandwidth(double bandwidth_hz) {
  if (!(bandwidth_hz > 0.0)) throw DomainError("bandwidth must be positive");
  return 1.0 / (2.0 * std::numbers::pi * bandwidth_hz);
}

double SourceParams::tau_c_signal_s() const { return coherence_time_from_bandwidth(bandwidth_signal_hz); }
double SourceParams::tau_c_idler_s() const { return coherence_time_from_bandwidth(bandwidth_idler_hz); }

double default_mode_duration_s(const SourceParams& params) {
  return 0.5 * (params.tau_c_signal_s() + params.tau_c_idler_s());
}

double ideal_g2_auto_zero(const SourceParams& params) {
  if (params.statistics == PairStatistics::poisson) return 1.0;
  return 1.0 + 2.0 * params.effective_mode_duration_s() / (params.tau_c_signal_s() + params.tau_c_idler_s());
}

double SourceParams::effective_mode_duration_s() const {
  return mode_duration_s > 0.0 ? mode_duration_s : default_mode_duration_s(*this);
}

void SourceParams::validate() const {
  if (!(pair_generation_rate_hz > 0.0)) throw ConfigError("pair_generation_rate_hz must be > 0");
  if (!(bandwidth_signal_hz > 0.0) || !(bandwidth_idler_hz > 0.0)) throw ConfigError("bandwidths must be > 0");
  if (!(coupling_signal >= 0.0 && coupling_signal <= 1.0)) throw ConfigError("coupling_signal must be in [0,1]");
  if (!(coupling_idler >= 0.0 && coupling_idler <= 1.0)) throw ConfigError("coupling_idler must be in [0,1]");
  if (mode_duration_s < 0.0) throw ConfigError("mode_duration_s must be >= 0");
}

std::vector<std::string> SourceParams::warnings() const {
  std::vector<std::string> out;
  const double g2 = ideal_g2_auto_zero(*this);
  if (statistics == PairStatistics::thermal && std::abs(g2 - 2.0) > 0.05) {
    out.emplace_back("mode duration gives an ideal g2_auto(0) of " + std::to_string(g2) +
                     " instead of the single-mode thermal value 2");
  }
  return out;
}

double pair_rate_for_power(double reference_rate_hz, double reference_power, double power) {
  if (!(reference_power > 0.0) || power < 0.0) throw DomainError("pump powers must be positive");
  const double ratio = power / reference_power;
  return reference_rate_hz * ratio * ratio;
}

Picos max_emission_advance_ps(const SourceParams& params) {
  const double tau = std::max(params.tau_c_signal_s(), params.tau_c_idler_s());
  return static_cast<Picos>(std::ceil(0.5 * kMaxOffsetInTauC * tau * kPicosPerSecond)) + 2;
}

PairGenerator::PairGenerator(const SourceParams& params, double duration_s, std::uint64_t seed,
                             double chunk_duration_s)
    : params_(params), duration_ps_(seconds_to_ps(duration_s)), seed_(seed) {
  params_.validate();
  if (duration_s < 0.0) throw DomainError("duration must be >= 0");
  if (!(chunk_duration_s > 0.0)) throw ConfigError("chunk duration must be > 0");
  chunk_ps_ = std::max<Picos>(1, seconds_to_ps(chunk_duration_s));
  mode_ps_ = params_.effective_mode_duration_s() * kPicosPerSecond;
  const double mean_pairs_per_chunk = params_.pair_generation_rate_hz * ps_to_seconds(chunk_ps_);
  if (mean_pairs_per_chunk + 10.0 * std::sqrt(mean_pairs_per_chunk) > static_cast<double>(kMaxPairsPerChunk)) {
    throw ResourceError("too many pairs per chunk; reduce chunk_duration_s");
  }
  chunk_count_ = static_cast<std::size_t>((duration_ps_ + chunk_ps_ - 1) / chunk_ps_);
  if (static_cast<double>(chunk_count_) > 4e9) throw ResourceError("duration too long for the event-id space; split the run");
  tau_s_ps_ = params_.tau_c_signal_s() * kPicosPerSecond;
  tau_i_ps_ = params_.tau_c_idler_s() * kPicosPerSecond;
}

Picos PairGenerator::chunk_begin(std::size_t chunk) const {
  return std::min(duration_ps_, static_cast<Picos>(chunk) * chunk_ps_);
}

Picos PairGenerator::chunk_end(std::size_t chunk) const {
  return std::min(duration_ps_, static_cast<Picos>(chunk + 1) * chunk_ps_);
}

std::vector<PairEvent> PairGenerator::generate_chunk(std::size_t chunk) const {
  std::vector<PairEvent> out;
  if (chunk >= chunk_count_) return out;
  Rng rng(derive_seed(seed_, kPairStream, chunk));
  const double begin = static_cast<double>(chunk_begin(chunk));
  const double end = static_cast<double>(chunk_end(chunk));
  const double rate = params_.pair_generation_rate_hz * 1e-12;  // pairs per ps
  out.reserve(static_cast<std::size_t>(rate * (end - begin) * 1.1) + 16);

  // Only occupied epochs are visited. Thermal: epochs arrive at 1/M and hold
  // n >= 1 pairs with probability mu/(1+mu), n | n>=1 = 1 + geometric.
  // Poisson: every pair has its own epoch.
  const bool thermal = params_.statistics == PairStatistics::thermal;
  const double mu = rate * mode_ps_;
  const double occupied_gap_ps = thermal ? mode_ps_ * (1.0 + mu) / mu : 1.0 / rate;
  std::uint64_t local = 0;
  std::uint64_t mode = 0;
  double t = begin + rng.exponential(occupied_gap_ps);
  while (t < end) {
    const std::uint64_t n = thermal ? 1 + rng.geometric(1.0 / (1.0 + mu)) : 1;
    const auto epoch = static_cast<Picos>(std::floor(t));
    for (std::uint64_t k = 0; k < n; ++k) {
      // Delay D = e_i - e_s, split evenly about the epoch.
      const double e_s = truncated_exponential(rng, tau_s_ps_);
      const double e_i = truncated_exponential(rng, tau_i_ps_);
      PairEvent ev;
      ev.mode_index = (static_cast<std::uint64_t>(chunk) << 32) | mode;
      ev.pair_time = epoch;
      ev.signal_offset = static_cast<Picos>(std::llround(0.5 * (e_i - e_s)));
      ev.idler_offset = static_cast<Picos>(std::llround(0.5 * (e_s - e_i)));
      ev.id = (static_cast<std::uint64_t>(chunk) << 32) | local++;
      out.push_back(ev);
    }
    ++mode;
    t += rng.exponential(occupied_gap_ps);
  }
  return out;
}

std::vector<PairEvent> generate_pair_stream(const SourceParams& params, double duration_s, std::uint64_t seed) {
  PairGenerator gen(params, duration_s, seed);
  std::vector<PairEvent> out;
  for (std::size_t c = 0; c < gen.chunk_count(); ++c) {
    auto chunk = gen.generate_chunk(c);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

std::vector<PhotonArrival> apply_channel(std::span<const PairEvent> pairs, Arm arm, double transmission,
                                         std::uint64_t seed, Picos end_ps) {
  if (!(transmission >= 0.0 && transmission <= 1.0)) throw DomainError("transmission must be in [0,1]");
  Rng rng(seed);
  std::vector<double> u(pairs.size());
  for (auto& x : u) x = rng.uniform();
  std::vector<std::uint8_t> keep(pairs.size());
  const std::size_t survivors = simd::mask_below(u, transmission, keep);

  std::vector<PhotonArrival> out;
  out.reserve(survivors);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!keep[i]) continue;
    const auto& p = pairs[i];
    const Picos t = p.pair_time + (arm == Arm::signal ? p.signal_offset : p.idler_offset);
    if (t < 0 || (end_ps > 0 && t >= end_ps)) continue;
    out.push_back({t, arm, p.id});
  }
  std::stable_sort(out.begin(), out.end(), [](const PhotonArrival& a, const PhotonArrival& b) { return a.time < b.time; });
  return out;
}

}  // namespace hsps
