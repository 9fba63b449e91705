#pragma once

// Streaming analysis of a merged tag stream: software deadtime, singles,
// cross/auto correlation, heralded HBT counts and the period histogram used
// for detector characterization. Runs as a pipeline sink or over a file.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsps/characterization.hpp"
#include "hsps/config.hpp"
#include "hsps/correlation.hpp"
#include "hsps/pipeline.hpp"

namespace hsps {

struct AnalysisReport {
  double integration_time_s = 0.0;
  std::map<std::uint8_t, std::uint64_t> singles;
  std::map<std::uint8_t, std::uint64_t> raw_singles;
  std::optional<CorrelationHistogram> cross;  // herald x signal channels, summed
  std::optional<CorrelationHistogram> autocorr;  // g2-normalized
  std::optional<CoherenceFit> auto_fit;
  std::optional<HeraldedCounts> heralded;
  std::optional<Histogram> period_histogram;
  HspsMetrics metrics;
  bool has_heralding = false;
  std::vector<std::string> warnings;
};

class Analyzer : public TagSink {
 public:
  // `config.analysis` selects what is computed; detector settings supply
  // defaults (eta_d_s, gate frequency), the laser block the histogram period.
  Analyzer(const RunConfig& config, double integration_time_s);
  ~Analyzer() override;

  void consume(std::span<const TimeTag> tags, Picos watermark) override;
  void finish(Picos end) override;
  // Throws EstimationError when a requested figure cannot be formed.
  AnalysisReport report() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

AnalysisReport analyze_tags(const RunConfig& config, std::span<const TimeTag> tags, double integration_time_s);
AnalysisReport analyze_file(const RunConfig& config, const std::filesystem::path& tags, double integration_time_s);

nlohmann::json estimate_json(const Estimate& e);
nlohmann::json metrics_json(const AnalysisReport& report);

}  // namespace hsps
