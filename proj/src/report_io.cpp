#include "hsps/report_io.hpp"

#include <fstream>
#include <sstream>

#include "hsps/config.hpp"
#include "hsps/error.hpp"
#include "hsps/simd.hpp"

namespace hsps {
namespace {

std::filesystem::path sidecar_for(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_histogram(const std::filesystem::path& csv_path, const Histogram& hist, const HistogramMeta& meta) {
  {
    auto out = open_out(csv_path);
    out << "bin_start_ps,count\n";
    for (std::size_t k = 0; k < hist.counts.size(); ++k) {
      out << hist.origin + static_cast<Picos>(k) * hist.bin_width << ',' << hist.counts[k] << '\n';
    }
    if (!out) throw IoError("write failed: " + csv_path.string());
  }
  nlohmann::json j = {{"bin_width_ps", hist.bin_width},
                      {"origin_ps", hist.origin},
                      {"bins", hist.counts.size()},
                      {"integration_time_s", hist.integration_time_s},
                      {"n_trigger", hist.n_trigger},
                      {"gate_frequency_hz", hist.gate_frequency_hz}};
  if (meta.has_laser) {
    j["mu"] = meta.mu;
    j["rep_rate_hz"] = meta.rep_rate_hz;
  }
  write_json(sidecar_for(csv_path), j);
}

Histogram read_histogram(const std::filesystem::path& csv_path, HistogramMeta* meta) {
  const auto j = read_json(sidecar_for(csv_path));
  Histogram h;
  try {
    h.bin_width = j.at("bin_width_ps").get<Picos>();
    h.origin = j.value("origin_ps", Picos{0});
    h.integration_time_s = j.at("integration_time_s").get<double>();
    h.n_trigger = j.at("n_trigger").get<std::uint64_t>();
    h.gate_frequency_hz = j.value("gate_frequency_hz", 1e9);
    if (meta) {
      meta->has_laser = j.contains("mu") && j.contains("rep_rate_hz");
      meta->mu = j.value("mu", 0.0);
      meta->rep_rate_hz = j.value("rep_rate_hz", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_for(csv_path).string() + ": " + e.what());
  }
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot read " + csv_path.string());
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line.starts_with("bin_start_ps")) continue;
    std::istringstream ss(line);
    long long start = 0;
    unsigned long long count = 0;
    char comma = 0;
    if (!(ss >> start >> comma >> count) || comma != ',') {
      throw DataError(csv_path.string() + ":" + std::to_string(n) + ": malformed histogram row");
    }
    const Picos expected = h.origin + static_cast<Picos>(h.counts.size()) * h.bin_width;
    if (start != expected) throw DataError(csv_path.string() + ":" + std::to_string(n) + ": bins are not contiguous");
    h.counts.push_back(count);
  }
  return h;
}

void write_correlation_csv(const std::filesystem::path& path, const CorrelationHistogram& hist) {
  auto out = open_out(path);
  out << "tau_ps,counts,g2\n";
  for (std::size_t k = 0; k < hist.size(); ++k) {
    out << hist.bin_center(k) << ',' << hist.counts[k] << ',';
    if (hist.normalized()) out << hist.g2[k];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const std::vector<std::filesystem::path>& files, const nlohmann::json& extra) {
  nlohmann::json j;
  j["command"] = command;
  j["tool_version"] = kVersion;
  j["compiler"] = __VERSION__;
  j["simd"] = std::string(simd::isa_name(simd::active_isa()));
  j["seed"] = seed;
  j["config_sha256"] = config_hash(config);
  j["config"] = config;
  j["files"] = nlohmann::json::array();
  const auto base = path.parent_path();
  for (const auto& f : files) {
    j["files"].push_back({{"path", std::filesystem::relative(f, base).generic_string()},
                          {"bytes", std::filesystem::file_size(f)},
                          {"sha256", sha256_file(f)}});
  }
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(path, j);
}

}  // namespace hsps
