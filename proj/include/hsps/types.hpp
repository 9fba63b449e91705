#pragma once

#include <cstdint>
#include <limits>

namespace hsps {

// All timestamps are integer picoseconds. A 64-bit count covers ~106 days.
using Picos = std::int64_t;

inline constexpr double kPicosPerSecond = 1e12;

constexpr Picos seconds_to_ps(double s) { return static_cast<Picos>(s * kPicosPerSecond + (s >= 0 ? 0.5 : -0.5)); }
constexpr double ps_to_seconds(Picos t) { return static_cast<double>(t) / kPicosPerSecond; }

inline constexpr std::uint64_t kNoPair = std::numeric_limits<std::uint64_t>::max();

enum class Arm : std::uint8_t { signal = 0, idler = 1 };

// Simulation truth label for a detector tag. `unknown` is what an exported
// stream carries when truth is stripped.
enum class Origin : std::uint8_t { unknown = 0, photon = 1, dark = 2, afterpulse = 3 };

struct PairEvent {
  std::uint64_t mode_index = 0;
  Picos pair_time = 0;
  Picos signal_offset = 0;
  Picos idler_offset = 0;
  // Unique within a run; links detector tags back to their pair.
  std::uint64_t id = 0;

  friend bool operator==(const PairEvent&, const PairEvent&) = default;
};

struct PhotonArrival {
  Picos time = 0;
  Arm arm = Arm::signal;
  std::uint64_t pair_id = kNoPair;

  friend bool operator==(const PhotonArrival&, const PhotonArrival&) = default;
};

struct TimeTag {
  Picos time = 0;
  std::uint8_t channel = 0;
  Origin origin = Origin::unknown;
  // Afterpulse generation (0 for primary avalanches). Truth only.
  std::uint8_t generation = 0;
  std::uint64_t pair_id = kNoPair;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

inline bool time_less(const TimeTag& a, const TimeTag& b) { return a.time < b.time; }
inline bool time_less(const PhotonArrival& a, const PhotonArrival& b) { return a.time < b.time; }

}  // namespace hsps
