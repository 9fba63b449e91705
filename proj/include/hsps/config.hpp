#pragma once

// Run configuration: one JSON document describing the source, the optical
// routing, the detectors, outputs and analysis settings. Every physical
// quantity carries its unit in the key name; unknown keys are rejected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsps/correlation.hpp"
#include "hsps/detector.hpp"
#include "hsps/source.hpp"
#include "hsps/tag_io.hpp"

namespace hsps {

struct SplitTarget {
  std::uint8_t channel = 0;
  double ratio = 1.0;
};

// Extra transmission applied on top of the source coupling, then a
// photon-level splitter onto detector channels.
struct Route {
  double transmission = 1.0;
  std::vector<SplitTarget> splits;
};

struct LaserConfig {
  double rep_rate_hz = 100e3;
  double mean_photons = 0.5;
  std::uint8_t channel = 0;
  Picos pulse_offset_ps = 100;
  Picos period_ps() const;
};

struct DetectorConfig {
  enum class Kind { spad, snspd };
  Kind kind = Kind::snspd;
  SpadParams spad;
  SnspdParams snspd;
};

struct OutputConfig {
  std::string dir;  // empty: default output directory
  TagFormat format = TagFormat::binary;
  bool include_truth = false;
  std::string tag_file;  // default tags.bin / tags.csv
  std::string tag_file_name() const;
};

struct CharacterizationConfig {
  std::optional<std::uint8_t> channel;
  Picos bin_width_ps = 1000;
  std::optional<std::size_t> pulse_bin;
  double far_window_fraction = 0.4;
  std::vector<Picos> holdoffs_ps;
};

struct AnalysisConfig {
  std::optional<std::uint8_t> herald_channel;
  std::vector<std::uint8_t> signal_channels;
  // PDE of the heralded (signal) detector; defaults to the configured
  // efficiency of the first signal channel.
  std::optional<double> eta_d_s;
  std::map<std::uint8_t, Picos> software_deadtime_ps;
  Picos cross_bin_width_ps = 100;
  Picos cross_tau_range_ps = 50'000;
  FitOptions fit;
  std::optional<std::array<std::uint8_t, 2>> auto_channels;
  Picos auto_bin_width_ps = 1000;
  Picos auto_tau_range_ps = 1'000'000;
  Picos auto_zero_half_width_ps = 2000;
  std::optional<Picos> heralded_window_ps;
  CharacterizationConfig characterization;
};

struct RunConfig {
  std::string name;
  std::uint64_t seed = 0;
  double duration_s = 1.0;
  double chunk_s = 0.01;
  int threads = 1;
  std::optional<SourceParams> source;
  std::optional<double> reference_power_uw;
  std::optional<double> power_uw;
  std::array<Route, 2> routes;  // indexed by Arm
  std::optional<LaserConfig> laser;
  std::map<std::uint8_t, DetectorConfig> detectors;
  OutputConfig outputs;
  std::vector<double> sweep_power_uw;
  AnalysisConfig analysis;
  nlohmann::json document;

  void validate() const;
  // Copy with the pump set to `power_uw` (pair rate scaled quadratically).
  RunConfig at_power(double power_uw) const;
  double pair_rate_hz() const;
  double eta_d_s() const;
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

// SHA-256 over the canonical (sorted-key, compact) serialization.
std::string config_hash(const nlohmann::json& doc);
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace hsps
