#include "hsps/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <variant>

#include "hsps/error.hpp"
#include "hsps/rng.hpp"

namespace hsps {
namespace {

constexpr std::uint64_t kSourceStream = 0x534F55524345ULL;
constexpr std::uint64_t kRouteStream = 0x524F555445ULL;
constexpr std::uint64_t kSplitStream = 0x53504C4954ULL;
constexpr std::uint64_t kLaserStream = 0x4C41534552ULL;
constexpr std::uint64_t kDetectorStream = 0x444554ULL;

template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ChunkPhotons {
  std::vector<std::vector<PhotonArrival>> per_channel;  // indexed like Channel list
  std::uint64_t pairs = 0;
};

struct Channel {
  std::uint8_t id;
  std::variant<SpadDetector, SnspdDetector> detector;
  std::vector<PhotonArrival> pending;
  std::vector<TimeTag> out;
  std::size_t out_head = 0;
  Picos guard;
  std::uint64_t photons = 0;
  std::uint64_t tags = 0;
};

class Simulation {
 public:
  explicit Simulation(const RunConfig& config) : config_(config) {
    config_.validate();
    duration_ps_ = seconds_to_ps(config_.duration_s);
    if (config_.source) {
      source_ = *config_.source;
      source_.pair_generation_rate_hz = config_.pair_rate_hz();
      generator_.emplace(source_, config_.duration_s, derive_seed(config_.seed, kSourceStream), config_.chunk_s);
      chunk_count_ = generator_->chunk_count();
      advance_ps_ = max_emission_advance_ps(source_);
    } else {
      chunk_ps_ = std::max<Picos>(1, seconds_to_ps(config_.chunk_s));
      chunk_count_ = static_cast<std::size_t>((duration_ps_ + chunk_ps_ - 1) / chunk_ps_);
    }
    for (const auto& [id, det] : config_.detectors) {
      const std::uint64_t seed = derive_seed(config_.seed, kDetectorStream, id);
      if (det.kind == DetectorConfig::Kind::spad) {
        const Picos guard = det.spad.gate.period_ps() +
                            static_cast<Picos>(std::ceil(kJitterTruncationSigmas * static_cast<double>(det.spad.jitter_fwhm_ps) / kFwhmPerSigma)) + 2;
        channels_.push_back({id, SpadDetector(det.spad, seed, id, 0), {}, {}, 0, guard});
      } else {
        const Picos guard =
            static_cast<Picos>(std::ceil(kJitterTruncationSigmas * static_cast<double>(det.snspd.jitter_fwhm_ps) / kFwhmPerSigma)) + 2;
        channels_.push_back({id, SnspdDetector(det.snspd, seed, id, 0), {}, {}, 0, guard});
      }
      index_[id] = channels_.size() - 1;
    }
    for (const auto& c : channels_) max_guard_ = std::max(max_guard_, c.guard);
  }

  Picos chunk_begin(std::size_t c) const {
    return generator_ ? generator_->chunk_begin(c) : std::min(duration_ps_, static_cast<Picos>(c) * chunk_ps_);
  }
  Picos chunk_end(std::size_t c) const {
    return generator_ ? generator_->chunk_end(c) : std::min(duration_ps_, static_cast<Picos>(c + 1) * chunk_ps_);
  }

  ChunkPhotons make_chunk(std::size_t c) const {
    ChunkPhotons cp;
    cp.per_channel.resize(channels_.size());
    if (generator_) {
      const auto pairs = generator_->generate_chunk(c);
      cp.pairs = pairs.size();
      for (int arm = 0; arm < 2; ++arm) {
        const Route& route = config_.routes[static_cast<std::size_t>(arm)];
        if (route.splits.empty()) continue;
        const double coupling = arm == 0 ? source_.coupling_signal : source_.coupling_idler;
        const auto arrivals = apply_channel(pairs, static_cast<Arm>(arm), coupling * route.transmission,
                                            derive_seed(config_.seed, kRouteStream + static_cast<std::uint64_t>(arm), c),
                                            duration_ps_);
        if (route.splits.size() == 1) {
          auto& dst = cp.per_channel[index_.at(route.splits.front().channel)];
          dst.insert(dst.end(), arrivals.begin(), arrivals.end());
          continue;
        }
        Rng rng(derive_seed(config_.seed, kSplitStream + static_cast<std::uint64_t>(arm), c));
        for (const auto& a : arrivals) {
          const double u = rng.uniform();
          double acc = 0.0;
          std::size_t pick = route.splits.size() - 1;
          for (std::size_t k = 0; k < route.splits.size(); ++k) {
            acc += route.splits[k].ratio;
            if (u < acc) {
              pick = k;
              break;
            }
          }
          cp.per_channel[index_.at(route.splits[pick].channel)].push_back(a);
        }
      }
    }
    if (config_.laser && config_.laser->mean_photons > 0.0) {
      const LaserConfig& l = *config_.laser;
      const Picos period = l.period_ps();
      const Picos begin = chunk_begin(c);
      const Picos end = chunk_end(c);
      Rng rng(derive_seed(config_.seed, kLaserStream, c));
      auto& dst = cp.per_channel[index_.at(l.channel)];
      Picos k = (begin - l.pulse_offset_ps + period - 1) / period;
      if (begin - l.pulse_offset_ps < 0) k = 0;
      for (Picos t = k * period + l.pulse_offset_ps; t < end; t += period) {
        if (t < begin) continue;
        const std::uint64_t n = rng.poisson(l.mean_photons);
        for (std::uint64_t i = 0; i < n; ++i) dst.push_back({t, Arm::signal, kNoPair});
      }
    }
    for (auto& v : cp.per_channel) {
      std::stable_sort(v.begin(), v.end(), [](const PhotonArrival& a, const PhotonArrival& b) { return a.time < b.time; });
    }
    return cp;
  }

  // Feeds one chunk to a channel and advances its detector.
  void detect(Channel& ch, std::vector<PhotonArrival>& fresh, std::size_t c) {
    ch.photons += fresh.size();
    const std::size_t mid = ch.pending.size();
    ch.pending.insert(ch.pending.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
    std::inplace_merge(ch.pending.begin(), ch.pending.begin() + static_cast<std::ptrdiff_t>(mid), ch.pending.end(),
                       [](const PhotonArrival& a, const PhotonArrival& b) { return a.time < b.time; });
    const bool last = c + 1 == chunk_count_;
    const Picos watermark = last ? duration_ps_ : chunk_end(c) - advance_ps_;
    const auto split = last ? ch.pending.end()
                            : std::lower_bound(ch.pending.begin(), ch.pending.end(), watermark,
                                               [](const PhotonArrival& a, Picos w) { return a.time < w; });
    const std::span<const PhotonArrival> ready(ch.pending.data(), static_cast<std::size_t>(split - ch.pending.begin()));
    std::visit(
        [&](auto& det) {
          det.feed(ready);
          if (last) det.finish(duration_ps_, ch.out);
          else det.advance(watermark, ch.out);
        },
        ch.detector);
    ch.pending.erase(ch.pending.begin(), split);
  }

  void release(Picos bound, std::span<TagSink* const> sinks) {
    merged_.clear();
    for (auto& ch : channels_) {
      auto it = std::lower_bound(ch.out.begin() + static_cast<std::ptrdiff_t>(ch.out_head), ch.out.end(), bound,
                                 [](const TimeTag& t, Picos b) { return t.time < b; });
      merged_.insert(merged_.end(), ch.out.begin() + static_cast<std::ptrdiff_t>(ch.out_head), it);
      ch.tags += static_cast<std::uint64_t>(it - (ch.out.begin() + static_cast<std::ptrdiff_t>(ch.out_head)));
      ch.out.erase(ch.out.begin(), it);
      ch.out_head = 0;
    }
    std::stable_sort(merged_.begin(), merged_.end(), [](const TimeTag& a, const TimeTag& b) { return a.time < b.time; });
    for (TagSink* s : sinks) s->consume(merged_, bound);
  }

  SimulationSummary run(std::span<TagSink* const> sinks) {
    SimulationSummary summary;
    summary.duration_s = config_.duration_s;
    summary.pair_rate_hz = config_.pair_rate_hz();
    summary.chunks = chunk_count_;
    const std::size_t batch = static_cast<std::size_t>(std::max(config_.threads, 1)) * 4;
    for (std::size_t first = 0; first < chunk_count_; first += batch) {
      const std::size_t n = std::min(batch, chunk_count_ - first);
      std::vector<ChunkPhotons> chunks(n);
      parallel_for(n, config_.threads, [&](std::size_t i) { chunks[i] = make_chunk(first + i); });
      for (const auto& cp : chunks) summary.pairs += cp.pairs;
      parallel_for(channels_.size(), config_.threads, [&](std::size_t k) {
        for (std::size_t i = 0; i < n; ++i) detect(channels_[k], chunks[i].per_channel[k], first + i);
      });
      const std::size_t last = first + n - 1;
      if (last + 1 == chunk_count_) break;
      release(chunk_end(last) - advance_ps_ - max_guard_, sinks);
    }
    if (chunk_count_ == 0) {
      for (auto& ch : channels_) std::visit([&](auto& det) { det.finish(duration_ps_, ch.out); }, ch.detector);
    }
    release(std::numeric_limits<Picos>::max(), sinks);
    for (TagSink* s : sinks) s->finish(duration_ps_);
    for (const auto& ch : channels_) {
      summary.photons_per_channel[ch.id] = ch.photons;
      summary.tags_per_channel[ch.id] = ch.tags;
    }
    return summary;
  }

 private:
  RunConfig config_;
  SourceParams source_;
  std::optional<PairGenerator> generator_;
  Picos duration_ps_ = 0;
  Picos chunk_ps_ = 0;
  Picos advance_ps_ = 0;
  std::size_t chunk_count_ = 0;
  std::vector<Channel> channels_;
  std::map<std::uint8_t, std::size_t> index_;
  Picos max_guard_ = 0;
  std::vector<TimeTag> merged_;
};

}  // namespace

SimulationSummary simulate_stream(const RunConfig& config, std::span<TagSink* const> sinks) {
  Simulation sim(config);
  return sim.run(sinks);
}

std::vector<TimeTag> simulate_tags(const RunConfig& config, SimulationSummary* summary) {
  VectorSink sink;
  TagSink* sinks[] = {&sink};
  const auto s = simulate_stream(config, sinks);
  if (summary) *summary = s;
  return std::move(sink.tags());
}

void replay_tag_file(const std::filesystem::path& path, std::span<TagSink* const> sinks, Picos end_ps, std::size_t batch) {
  TagReader reader(path);
  std::vector<TimeTag> tags;
  Picos last = std::numeric_limits<Picos>::min();
  while (reader.read(batch, tags)) {
    for (const auto& t : tags) {
      if (t.time < last) throw DataError(path.string() + ": tags are not sorted by time");
      last = t.time;
    }
    for (TagSink* s : sinks) s->consume(tags, last);
  }
  for (TagSink* s : sinks) s->finish(end_ps);
}

}  // namespace hsps
