#pragma once

// File formats for derived products: histogram CSV + JSON sidecar,
// correlation CSV, JSON reports and run manifests.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsps/characterization.hpp"
#include "hsps/correlation.hpp"

namespace hsps {

inline constexpr const char* kVersion = "0.1.0";

struct HistogramMeta {
  double mu = 0.0;
  double rep_rate_hz = 0.0;
  bool has_laser = false;
};

// <stem>.csv with bin_start_ps,count and <stem>.json with the metadata.
void write_histogram(const std::filesystem::path& csv_path, const Histogram& hist, const HistogramMeta& meta);
Histogram read_histogram(const std::filesystem::path& csv_path, HistogramMeta* meta = nullptr);

// tau_ps,counts,g2 (g2 empty when not normalized).
void write_correlation_csv(const std::filesystem::path& path, const CorrelationHistogram& hist);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

// Lists every file with size and SHA-256, plus run provenance.
void write_manifest(const std::filesystem::path& path, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const std::vector<std::filesystem::path>& files,
                    const nlohmann::json& extra = nlohmann::json::object());

}  // namespace hsps
