#include "hsps/config.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <set>

#include "hsps/error.hpp"

namespace hsps {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing " + where + "." + key);
  return get<T>(obj, key, where, T{});
}

std::uint8_t channel_id(long long v, const std::string& where) {
  if (v < 0 || v > kMaxChannel) throw ConfigError(where + ": channel ids must be in [0, 63]");
  return static_cast<std::uint8_t>(v);
}

std::uint8_t channel_key(const std::string& key, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(key, &used);
    if (used != key.size()) throw std::invalid_argument(key);
    return channel_id(v, where);
  } catch (const std::logic_error&) {
    throw ConfigError(where + ": '" + key + "' is not a channel id");
  }
}

SourceParams parse_source(const json& j) {
  const std::string w = "source";
  check_keys(j, w, {"pair_rate_hz", "bandwidth_signal_hz", "bandwidth_idler_hz", "mode_duration_ps", "coupling_signal",
                    "coupling_idler", "pair_statistics"});
  SourceParams s;
  s.pair_generation_rate_hz = get(j, "pair_rate_hz", w, s.pair_generation_rate_hz);
  s.bandwidth_signal_hz = get(j, "bandwidth_signal_hz", w, s.bandwidth_signal_hz);
  s.bandwidth_idler_hz = get(j, "bandwidth_idler_hz", w, s.bandwidth_idler_hz);
  s.mode_duration_s = get(j, "mode_duration_ps", w, 0.0) / kPicosPerSecond;
  s.coupling_signal = get(j, "coupling_signal", w, s.coupling_signal);
  s.coupling_idler = get(j, "coupling_idler", w, s.coupling_idler);
  const auto stats = get<std::string>(j, "pair_statistics", w, "thermal");
  if (stats == "thermal") s.statistics = PairStatistics::thermal;
  else if (stats == "poisson") s.statistics = PairStatistics::poisson;
  else throw ConfigError("source.pair_statistics must be thermal or poisson");
  s.validate();
  return s;
}

Route parse_route(const json& j, const std::string& w) {
  check_keys(j, w, {"transmission", "splits"});
  Route r;
  r.transmission = get(j, "transmission", w, 1.0);
  if (j.contains("splits")) {
    if (!j["splits"].is_array()) throw ConfigError(w + ".splits must be an array");
    for (const auto& s : j["splits"]) {
      check_keys(s, w + ".splits[]", {"channel", "ratio"});
      r.splits.push_back({channel_id(require<long long>(s, "channel", w + ".splits[]"), w),
                          get(s, "ratio", w + ".splits[]", 1.0)});
    }
  }
  return r;
}

DetectorConfig parse_detector(const json& j, const std::string& w) {
  const auto type = require<std::string>(j, "type", w);
  DetectorConfig d;
  if (type == "spad") {
    check_keys(j, w, {"type", "pde", "dark_prob_per_gate", "afterpulse_total_prob", "trap_lifetime_ps", "extra_traps",
                      "max_afterpulse_generation", "discriminator_deadtime_ps", "holdoff_ps", "jitter_fwhm_ps",
                      "gate_frequency_hz", "gate_phase_ps", "gate_width_ps"});
    d.kind = DetectorConfig::Kind::spad;
    auto& p = d.spad;
    p.pde = get(j, "pde", w, p.pde);
    p.dark_prob_per_gate = get(j, "dark_prob_per_gate", w, p.dark_prob_per_gate);
    p.afterpulse_total_prob = get(j, "afterpulse_total_prob", w, p.afterpulse_total_prob);
    p.trap_lifetime_ps = get(j, "trap_lifetime_ps", w, p.trap_lifetime_ps);
    if (j.contains("extra_traps")) {
      for (const auto& t : j["extra_traps"]) {
        check_keys(t, w + ".extra_traps[]", {"probability", "lifetime_ps"});
        p.extra_traps.push_back({require<double>(t, "probability", w), require<Picos>(t, "lifetime_ps", w)});
      }
    }
    p.max_afterpulse_generation = get(j, "max_afterpulse_generation", w, p.max_afterpulse_generation);
    p.discriminator_deadtime_ps = get(j, "discriminator_deadtime_ps", w, p.discriminator_deadtime_ps);
    p.holdoff_ps = get(j, "holdoff_ps", w, p.holdoff_ps);
    p.jitter_fwhm_ps = get(j, "jitter_fwhm_ps", w, p.jitter_fwhm_ps);
    p.gate.frequency_hz = get(j, "gate_frequency_hz", w, p.gate.frequency_hz);
    p.gate.phase_offset_ps = get(j, "gate_phase_ps", w, p.gate.phase_offset_ps);
    p.gate.gate_width_ps = get(j, "gate_width_ps", w, p.gate.gate_width_ps);
    p.validate();
  } else if (type == "snspd") {
    check_keys(j, w, {"type", "efficiency", "dark_rate_hz", "deadtime_ps", "jitter_fwhm_ps"});
    d.kind = DetectorConfig::Kind::snspd;
    auto& p = d.snspd;
    p.efficiency = get(j, "efficiency", w, p.efficiency);
    p.dark_rate_hz = get(j, "dark_rate_hz", w, p.dark_rate_hz);
    p.deadtime_ps = get(j, "deadtime_ps", w, p.deadtime_ps);
    p.jitter_fwhm_ps = get(j, "jitter_fwhm_ps", w, p.jitter_fwhm_ps);
    p.validate();
  } else {
    throw ConfigError(w + ".type must be spad or snspd");
  }
  return d;
}

AnalysisConfig parse_analysis(const json& j) {
  const std::string w = "analysis";
  check_keys(j, w, {"herald_channel", "signal_channels", "eta_d_s", "software_deadtime_ps", "cross", "auto", "heralded",
                    "characterization"});
  AnalysisConfig a;
  if (j.contains("herald_channel")) a.herald_channel = channel_id(require<long long>(j, "herald_channel", w), w);
  for (const auto v : get<std::vector<long long>>(j, "signal_channels", w, {})) a.signal_channels.push_back(channel_id(v, w));
  if (j.contains("eta_d_s")) a.eta_d_s = require<double>(j, "eta_d_s", w);
  if (j.contains("software_deadtime_ps")) {
    const auto& d = j["software_deadtime_ps"];
    if (!d.is_object()) throw ConfigError("analysis.software_deadtime_ps must map channel -> ps");
    for (const auto& [key, value] : d.items()) {
      if (!value.is_number_integer() || value.get<Picos>() < 0) throw ConfigError("software deadtime must be a non-negative integer");
      a.software_deadtime_ps[channel_key(key, w + ".software_deadtime_ps")] = value.get<Picos>();
    }
  }
  if (j.contains("cross")) {
    const auto& c = j["cross"];
    check_keys(c, "analysis.cross", {"bin_width_ps", "tau_range_ps", "fit_range_ps", "min_fit_counts"});
    a.cross_bin_width_ps = get(c, "bin_width_ps", "analysis.cross", a.cross_bin_width_ps);
    a.cross_tau_range_ps = get(c, "tau_range_ps", "analysis.cross", a.cross_tau_range_ps);
    a.fit.fit_range_ps = get(c, "fit_range_ps", "analysis.cross", a.fit.fit_range_ps);
    a.fit.min_counts = get(c, "min_fit_counts", "analysis.cross", a.fit.min_counts);
  }
  if (j.contains("auto")) {
    const auto& c = j["auto"];
    const std::string wa = "analysis.auto";
    check_keys(c, wa, {"channels", "bin_width_ps", "tau_range_ps", "zero_half_width_ps"});
    const auto ch = require<std::vector<long long>>(c, "channels", wa);
    if (ch.size() != 2 || ch[0] == ch[1]) throw ConfigError("analysis.auto.channels must name two distinct channels");
    a.auto_channels = std::array<std::uint8_t, 2>{channel_id(ch[0], wa), channel_id(ch[1], wa)};
    a.auto_bin_width_ps = get(c, "bin_width_ps", wa, a.auto_bin_width_ps);
    a.auto_tau_range_ps = get(c, "tau_range_ps", wa, a.auto_tau_range_ps);
    a.auto_zero_half_width_ps = get(c, "zero_half_width_ps", wa, a.auto_zero_half_width_ps);
  }
  if (j.contains("heralded")) {
    check_keys(j["heralded"], "analysis.heralded", {"window_ps"});
    a.heralded_window_ps = get<Picos>(j["heralded"], "window_ps", "analysis.heralded", 3000);
  }
  if (j.contains("characterization")) {
    const auto& c = j["characterization"];
    const std::string wc = "analysis.characterization";
    check_keys(c, wc, {"channel", "bin_width_ps", "pulse_bin", "far_window_fraction", "holdoffs_ps"});
    if (c.contains("channel")) a.characterization.channel = channel_id(require<long long>(c, "channel", wc), wc);
    a.characterization.bin_width_ps = get(c, "bin_width_ps", wc, a.characterization.bin_width_ps);
    if (c.contains("pulse_bin")) a.characterization.pulse_bin = require<std::size_t>(c, "pulse_bin", wc);
    a.characterization.far_window_fraction = get(c, "far_window_fraction", wc, a.characterization.far_window_fraction);
    a.characterization.holdoffs_ps = get<std::vector<Picos>>(c, "holdoffs_ps", wc, {});
  }
  return a;
}

}  // namespace

Picos LaserConfig::period_ps() const { return static_cast<Picos>(std::llround(kPicosPerSecond / rep_rate_hz)); }

std::string OutputConfig::tag_file_name() const {
  if (!tag_file.empty()) return tag_file;
  return format == TagFormat::csv ? "tags.csv" : "tags.bin";
}

double RunConfig::pair_rate_hz() const {
  if (!source) return 0.0;
  if (power_uw && reference_power_uw) return pair_rate_for_power(source->pair_generation_rate_hz, *reference_power_uw, *power_uw);
  return source->pair_generation_rate_hz;
}

double RunConfig::eta_d_s() const {
  if (analysis.eta_d_s) return *analysis.eta_d_s;
  if (analysis.signal_channels.empty()) throw ConfigError("analysis.signal_channels is empty");
  const auto it = detectors.find(analysis.signal_channels.front());
  if (it == detectors.end()) throw ConfigError("signal channel has no detector; set analysis.eta_d_s");
  return it->second.kind == DetectorConfig::Kind::snspd ? it->second.snspd.efficiency : it->second.spad.pde;
}

RunConfig RunConfig::at_power(double p) const {
  if (!reference_power_uw) throw ConfigError("pump.reference_power_uw is required for power sweeps");
  RunConfig c = *this;
  c.power_uw = p;
  c.sweep_power_uw.clear();
  c.document["pump"]["power_uw"] = p;
  c.document.erase("sweeps");
  return c;
}

void RunConfig::validate() const {
  if (!(duration_s >= 0.0)) throw ConfigError("duration_s must be >= 0");
  if (!(chunk_s > 0.0)) throw ConfigError("chunk_s must be > 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (detectors.empty()) throw ConfigError("no detectors declared");
  auto declared = [&](std::uint8_t ch, const std::string& where) {
    if (!detectors.contains(ch)) throw ConfigError(where + " references undeclared channel " + std::to_string(ch));
  };
  for (int arm = 0; arm < 2; ++arm) {
    const auto& r = routes[static_cast<std::size_t>(arm)];
    const std::string w = arm == 0 ? "routes.signal" : "routes.idler";
    if (!(r.transmission >= 0.0 && r.transmission <= 1.0)) throw ConfigError(w + ".transmission must be in [0,1]");
    double sum = 0.0;
    for (const auto& s : r.splits) {
      declared(s.channel, w);
      if (!(s.ratio >= 0.0)) throw ConfigError(w + ": split ratios must be >= 0");
      sum += s.ratio;
    }
    if (!r.splits.empty() && std::abs(sum - 1.0) > 1e-9) throw ConfigError(w + ": split ratios must sum to 1");
  }
  if (laser) {
    declared(laser->channel, "laser");
    if (!(laser->rep_rate_hz > 0.0)) throw ConfigError("laser.rep_rate_hz must be > 0");
    if (!(laser->mean_photons >= 0.0)) throw ConfigError("laser.mean_photons must be >= 0");
    const double period = kPicosPerSecond / laser->rep_rate_hz;
    if (std::abs(period - std::round(period)) > 1e-6) throw ConfigError("laser period must be a whole number of ps");
    const auto& det = detectors.at(laser->channel);
    if (det.kind == DetectorConfig::Kind::spad && laser->period_ps() % det.spad.gate.period_ps() != 0) {
      throw ConfigError("laser repetition rate is not commensurate with the gate frequency");
    }
  }
  if (power_uw && !reference_power_uw) throw ConfigError("pump.power_uw needs pump.reference_power_uw");
  const auto& a = analysis;
  if (a.herald_channel) declared(*a.herald_channel, "analysis.herald_channel");
  for (const auto ch : a.signal_channels) declared(ch, "analysis.signal_channels");
  if (a.auto_channels) {
    declared((*a.auto_channels)[0], "analysis.auto");
    declared((*a.auto_channels)[1], "analysis.auto");
  }
  if (a.heralded_window_ps) {
    if (*a.heralded_window_ps <= 0) throw ConfigError("analysis.heralded.window_ps must be > 0");
    if (!a.herald_channel || a.signal_channels.size() != 2) {
      throw ConfigError("heralded g2 needs a herald channel and exactly two signal channels");
    }
  }
  if (a.characterization.channel) declared(*a.characterization.channel, "analysis.characterization.channel");
}

RunConfig parse_config(const nlohmann::json& doc) {
  check_keys(doc, "config", {"name", "description", "seed", "duration_s", "chunk_s", "threads", "source", "pump", "routes",
                             "laser", "detectors", "outputs", "sweeps", "analysis"});
  RunConfig c;
  c.document = doc;
  c.name = get<std::string>(doc, "name", "config", "");
  if (!doc.contains("seed")) throw ConfigError("config.seed is required");
  c.seed = require<std::uint64_t>(doc, "seed", "config");
  c.duration_s = get(doc, "duration_s", "config", c.duration_s);
  c.chunk_s = get(doc, "chunk_s", "config", c.chunk_s);
  c.threads = get(doc, "threads", "config", c.threads);
  if (doc.contains("source")) c.source = parse_source(doc["source"]);
  if (doc.contains("pump")) {
    check_keys(doc["pump"], "pump", {"reference_power_uw", "power_uw"});
    c.reference_power_uw = require<double>(doc["pump"], "reference_power_uw", "pump");
    if (doc["pump"].contains("power_uw")) c.power_uw = require<double>(doc["pump"], "power_uw", "pump");
  }
  if (doc.contains("routes")) {
    check_keys(doc["routes"], "routes", {"signal", "idler"});
    if (doc["routes"].contains("signal")) c.routes[0] = parse_route(doc["routes"]["signal"], "routes.signal");
    if (doc["routes"].contains("idler")) c.routes[1] = parse_route(doc["routes"]["idler"], "routes.idler");
  }
  if (doc.contains("laser")) {
    const auto& l = doc["laser"];
    check_keys(l, "laser", {"rep_rate_hz", "mean_photons", "channel", "pulse_offset_ps", "enabled"});
    if (get(l, "enabled", "laser", true)) {
      LaserConfig lc;
      lc.rep_rate_hz = require<double>(l, "rep_rate_hz", "laser");
      lc.mean_photons = require<double>(l, "mean_photons", "laser");
      lc.channel = channel_id(get<long long>(l, "channel", "laser", 0), "laser");
      lc.pulse_offset_ps = get(l, "pulse_offset_ps", "laser", lc.pulse_offset_ps);
      c.laser = lc;
    }
  }
  if (doc.contains("detectors")) {
    const auto& d = doc["detectors"];
    if (!d.is_object()) throw ConfigError("detectors must map channel -> detector");
    for (const auto& [key, value] : d.items()) {
      const std::uint8_t ch = channel_key(key, "detectors");
      c.detectors[ch] = parse_detector(value, "detectors." + key);
    }
  }
  if (doc.contains("outputs")) {
    const auto& o = doc["outputs"];
    check_keys(o, "outputs", {"dir", "format", "include_truth", "tag_file"});
    c.outputs.dir = get<std::string>(o, "dir", "outputs", "");
    c.outputs.format = parse_tag_format(get<std::string>(o, "format", "outputs", "binary"));
    c.outputs.include_truth = get(o, "include_truth", "outputs", false);
    c.outputs.tag_file = get<std::string>(o, "tag_file", "outputs", "");
  }
  if (doc.contains("sweeps")) {
    check_keys(doc["sweeps"], "sweeps", {"pump_power_uw"});
    c.sweep_power_uw = get<std::vector<double>>(doc["sweeps"], "pump_power_uw", "sweeps", {});
    if (!c.sweep_power_uw.empty() && !c.reference_power_uw) throw ConfigError("sweeps.pump_power_uw needs a pump block");
  }
  if (doc.contains("analysis")) c.analysis = parse_analysis(doc["analysis"]);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<unsigned char> buf(1 << 20);
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), f)) > 0) EVP_DigestUpdate(ctx, buf.data(), n);
  std::fclose(f);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string config_hash(const nlohmann::json& doc) {
  const std::string canon = doc.dump();
  return sha256_hex(canon.data(), canon.size());
}

}  // namespace hsps
