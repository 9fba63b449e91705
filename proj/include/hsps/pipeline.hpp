#pragma once

// Chunked end-to-end simulation: pair generation -> routing -> detectors ->
// time-merged tag stream handed to sinks in bounded batches.
//
// Output is independent of the thread count: every chunk and channel draws
// from its own derived seed, and merging is deterministic.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "hsps/config.hpp"
#include "hsps/tag_io.hpp"

namespace hsps {

class TagSink {
 public:
  virtual ~TagSink() = default;
  // `tags` are time-sorted; every later batch holds only times >= watermark.
  virtual void consume(std::span<const TimeTag> tags, Picos watermark) = 0;
  virtual void finish(Picos end) { (void)end; }
};

class VectorSink : public TagSink {
 public:
  void consume(std::span<const TimeTag> tags, Picos) override { tags_.insert(tags_.end(), tags.begin(), tags.end()); }
  const std::vector<TimeTag>& tags() const { return tags_; }
  std::vector<TimeTag>& tags() { return tags_; }

 private:
  std::vector<TimeTag> tags_;
};

class TagFileSink : public TagSink {
 public:
  TagFileSink(const std::filesystem::path& path, TagFormat format, bool keep_truth) : writer_(path, format, keep_truth) {}
  void consume(std::span<const TimeTag> tags, Picos) override { writer_.write(tags); }
  void finish(Picos) override { writer_.close(); }
  std::uint64_t records() const { return writer_.records(); }

 private:
  TagWriter writer_;
};

struct SimulationSummary {
  double duration_s = 0.0;
  double pair_rate_hz = 0.0;
  std::uint64_t pairs = 0;
  std::uint64_t chunks = 0;
  std::map<std::uint8_t, std::uint64_t> photons_per_channel;
  std::map<std::uint8_t, std::uint64_t> tags_per_channel;
};

SimulationSummary simulate_stream(const RunConfig& config, std::span<TagSink* const> sinks);

// Runs the simulation into memory.
std::vector<TimeTag> simulate_tags(const RunConfig& config, SimulationSummary* summary = nullptr);

// Feeds a tag file to the sinks in batches, with watermarks taken from the
// last time read.
void replay_tag_file(const std::filesystem::path& path, std::span<TagSink* const> sinks, Picos end_ps,
                     std::size_t batch = 1 << 16);

}  // namespace hsps
