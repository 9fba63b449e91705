// Command-line front end: simulate, characterize, analyze, report.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "hsps/analysis.hpp"
#include "hsps/characterization.hpp"
#include "hsps/config.hpp"
#include "hsps/error.hpp"
#include "hsps/pipeline.hpp"
#include "hsps/report_io.hpp"
#include "hsps/simd.hpp"

namespace fs = std::filesystem;
using namespace hsps;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitEstimation = 3;

constexpr const char* kOutputEnv = "HSPS_OUTPUT_DIR";

fs::path default_output_dir() {
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return "hsps_out";
}

fs::path resolve_output(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  return default_output_dir();
}

// Run directories written by `simulate` carry config.json next to the tags.
RunConfig config_for(const std::string& config_flag, const fs::path& tags) {
  if (!config_flag.empty()) return load_config(config_flag);
  const fs::path beside = tags.parent_path() / "config.json";
  if (fs::exists(beside)) return load_config(beside);
  throw ConfigError("no --config given and no config.json next to " + tags.string());
}

// Integration time: explicit flag, then run.json written by `simulate`, then
// the config's duration.
double integration_time(std::optional<double> flag, const fs::path& tags, const RunConfig* cfg) {
  if (flag) return *flag;
  const fs::path run = tags.parent_path() / "run.json";
  if (fs::exists(run)) {
    const auto j = read_json(run);
    if (j.contains("duration_s")) return j["duration_s"].get<double>();
  }
  return cfg ? cfg->duration_s : 0.0;
}

struct SimulateArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration_s;
  std::optional<int> threads;
  std::string format;
  bool truth = false;
};

void run_one_simulation(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path tags = dir / cfg.outputs.tag_file_name();
  TagFileSink sink(tags, cfg.outputs.format, cfg.outputs.include_truth);
  TagSink* sinks[] = {&sink};
  const auto summary = simulate_stream(cfg, sinks);

  const fs::path config_copy = dir / "config.json";
  write_json(config_copy, cfg.document);
  nlohmann::json run = {{"duration_s", summary.duration_s},
                        {"pair_rate_hz", summary.pair_rate_hz},
                        {"pairs", summary.pairs},
                        {"chunks", summary.chunks}};
  for (const auto& [ch, n] : summary.tags_per_channel) run["tags"][std::to_string(ch)] = n;
  for (const auto& [ch, n] : summary.photons_per_channel) run["photons"][std::to_string(ch)] = n;
  if (cfg.power_uw) run["pump_power_uw"] = *cfg.power_uw;
  const fs::path run_json = dir / "run.json";
  write_json(run_json, run);
  write_manifest(dir / "manifest.json", "simulate", cfg.document, cfg.seed, {tags, config_copy, run_json});
  std::cout << "simulated " << summary.duration_s << " s, " << summary.pairs << " pairs -> " << tags.string() << '\n';
}

int cmd_simulate(const SimulateArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.document["seed"] = *a.seed;
  if (a.duration_s) cfg.document["duration_s"] = *a.duration_s;
  if (a.threads) cfg.document["threads"] = *a.threads;
  if (!a.format.empty()) cfg.document["outputs"]["format"] = a.format;
  if (a.truth) cfg.document["outputs"]["include_truth"] = true;
  cfg = parse_config(cfg.document);
  const fs::path dir = resolve_output(a.output, cfg.outputs.dir);

  if (cfg.sweep_power_uw.empty()) {
    run_one_simulation(cfg, dir);
    return kExitOk;
  }
  nlohmann::json sweep = {{"runs", nlohmann::json::array()}};
  std::vector<fs::path> files;
  for (const double p : cfg.sweep_power_uw) {
    const RunConfig one = parse_config(cfg.at_power(p).document);
    std::ostringstream name;
    name << "power_" << p << "uw";
    run_one_simulation(one, dir / name.str());
    sweep["runs"].push_back({{"pump_power_uw", p}, {"pair_rate_hz", one.pair_rate_hz()}, {"dir", name.str()}});
    files.push_back(dir / name.str() / "manifest.json");
  }
  write_json(dir / "sweep.json", sweep);
  files.push_back(dir / "sweep.json");
  write_manifest(dir / "manifest.json", "simulate", cfg.document, cfg.seed, files);
  return kExitOk;
}

struct CharacterizeArgs {
  std::string tags;
  std::string histogram;
  std::string config;
  std::string output;
  std::optional<double> mu;
  std::optional<double> rep_rate_hz;
  std::optional<int> channel;
  std::optional<Picos> bin_width_ps;
  std::optional<std::size_t> pulse_bin;
  std::optional<double> far_fraction;
  std::vector<Picos> holdoffs_ps;
  std::optional<Picos> period_ps;
  std::optional<double> integration_s;
  bool laser_off = false;
};

int cmd_characterize(const CharacterizeArgs& a) {
  std::optional<RunConfig> cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  else if (!a.tags.empty() && fs::exists(fs::path(a.tags).parent_path() / "config.json")) {
    cfg = load_config(fs::path(a.tags).parent_path() / "config.json");
  }
  const CharacterizationConfig cc = cfg ? cfg->analysis.characterization : CharacterizationConfig{};
  const fs::path dir = resolve_output(a.output, cfg ? cfg->outputs.dir : "");

  Histogram hist;
  HistogramMeta meta;
  if (!a.histogram.empty()) {
    hist = read_histogram(a.histogram, &meta);
  } else {
    if (a.tags.empty()) throw ConfigError("characterize needs --tags or --histogram");
    std::optional<int> channel = a.channel;
    if (!channel && cc.channel) channel = *cc.channel;
    if (!channel && cfg && cfg->laser) channel = cfg->laser->channel;
    if (!channel) throw ConfigError("no detector channel given (--channel)");
    Picos period = 0;
    if (a.period_ps) period = *a.period_ps;
    else if (a.rep_rate_hz) period = static_cast<Picos>(std::llround(kPicosPerSecond / *a.rep_rate_hz));
    else if (cfg && cfg->laser) period = cfg->laser->period_ps();
    else throw ConfigError("histogram period unknown: give --rep-rate-hz or --period-ps");
    double gate_hz = 1e9;
    const double duration = integration_time(a.integration_s, a.tags, cfg ? &*cfg : nullptr);
    if (cfg) {
      const auto it = cfg->detectors.find(static_cast<std::uint8_t>(*channel));
      if (it != cfg->detectors.end() && it->second.kind == DetectorConfig::Kind::spad) gate_hz = it->second.spad.gate.frequency_hz;
    }
    if (!(duration > 0.0)) throw ConfigError("integration time unknown: characterize needs the run config");
    PeriodHistogrammer ph(period, a.bin_width_ps.value_or(cc.bin_width_ps));
    TagReader reader(a.tags);
    std::vector<TimeTag> batch;
    std::vector<Picos> times;
    while (reader.read(1 << 16, batch)) {
      times.clear();
      for (const auto& t : batch) {
        if (t.channel == *channel) times.push_back(t.time);
      }
      ph.push(times);
    }
    hist = ph.finish(duration, gate_hz);
    if (cfg && cfg->laser) {
      meta.has_laser = true;
      meta.mu = cfg->laser->mean_photons;
      meta.rep_rate_hz = cfg->laser->rep_rate_hz;
    }
    if (a.rep_rate_hz) meta.rep_rate_hz = *a.rep_rate_hz;
  }
  if (a.mu) {
    meta.mu = *a.mu;
    meta.has_laser = true;
  }

  nlohmann::json report;
  std::vector<fs::path> files;
  const fs::path hist_csv = dir / "histogram.csv";
  write_histogram(hist_csv, hist, meta);
  files.push_back(hist_csv);
  files.push_back(dir / "histogram.json");

  const double fraction = a.far_fraction.value_or(cc.far_window_fraction);
  if (a.laser_off) {
    const auto dcr = estimate_dcr(hist, BinRange{0, hist.counts.size()});
    report["mode"] = "laser_off";
    report["dcr_per_gate"] = estimate_json(dcr.per_gate);
    report["dcr_hz"] = estimate_json(dcr.hz);
  } else {
    if (!meta.has_laser) throw ConfigError("mean photon number unknown: give --mu or a laser block in the config");
    PulsedSourceSpec spec;
    spec.mu = meta.mu;
    spec.rep_rate_hz = meta.rep_rate_hz;
    if (a.pulse_bin) spec.pulse_bin = *a.pulse_bin;
    else if (cc.pulse_bin) spec.pulse_bin = *cc.pulse_bin;
    else if (cfg && cfg->laser) spec.pulse_bin = static_cast<std::size_t>(cfg->laser->pulse_offset_ps / hist.bin_width);
    else throw ConfigError("pulse bin unknown: give --pulse-bin");
    std::vector<Picos> holdoffs = a.holdoffs_ps.empty() ? cc.holdoffs_ps : a.holdoffs_ps;
    if (holdoffs.empty()) {
      for (Picos h : {0, 100'000, 1'000'000, 5'000'000}) {
        if (h + 2 * hist.bin_width <= hist.span_ps()) holdoffs.push_back(h);
      }
    }
    const auto r = characterize(hist, spec, default_far_window(hist, fraction), holdoffs);
    report["mode"] = "pulsed";
    report["mu"] = spec.mu;
    report["mu_corrected"] = mu_corrected(spec.mu);
    report["pulse_bin"] = spec.pulse_bin;
    report["n_trigger"] = hist.n_trigger;
    report["pde_direct"] = estimate_json(r.pde_direct);
    report["pde_poissonian"] = estimate_json(r.pde_poissonian);
    report["dcr_per_gate"] = estimate_json(r.dcr.per_gate);
    report["dcr_hz"] = estimate_json(r.dcr.hz);
    report["far_window_bins"] = r.dcr.bins;
    for (const auto& p : r.app_curve) {
      report["app_curve"].push_back({{"holdoff_ps", p.holdoff_ps}, {"p_ap", estimate_json(p.p_ap)}});
    }
    if (!r.pde_direct.warning.empty()) std::cerr << "warning: " << r.pde_direct.warning << '\n';
  }
  const fs::path report_path = dir / "characterization.json";
  write_json(report_path, report);
  files.push_back(report_path);
  write_manifest(dir / "characterization_manifest.json", "characterize",
                 cfg ? cfg->document : nlohmann::json::object(), cfg ? cfg->seed : 0, files);
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

struct AnalyzeArgs {
  std::string tags;
  std::string config;
  std::string output;
  std::string sweep;
  std::optional<Picos> window_ps;
  std::optional<double> window_ns;
  std::optional<double> integration_s;
};

void apply_window(RunConfig& cfg, const AnalyzeArgs& a) {
  if (a.window_ps && a.window_ns) throw CLI::ValidationError("--window-ps and --window-ns are mutually exclusive");
  std::optional<Picos> w = a.window_ps;
  if (a.window_ns) w = static_cast<Picos>(std::llround(*a.window_ns * 1000.0));
  if (w) {
    cfg.document["analysis"]["heralded"]["window_ps"] = *w;
    cfg = parse_config(cfg.document);
  }
}

std::vector<fs::path> write_analysis(const AnalysisReport& r, const fs::path& dir) {
  std::vector<fs::path> files;
  const fs::path metrics = dir / "metrics.json";
  write_json(metrics, metrics_json(r));
  files.push_back(metrics);
  if (r.cross) {
    const fs::path p = dir / "cross_correlation.csv";
    write_correlation_csv(p, r.cross->integration_time_s > 0 && r.cross->n_a > 0 && r.cross->n_b > 0 ? g2_normalize(*r.cross)
                                                                                                        : *r.cross);
    files.push_back(p);
  }
  if (r.autocorr) {
    const fs::path p = dir / "g2_auto.csv";
    write_correlation_csv(p, *r.autocorr);
    files.push_back(p);
  }
  return files;
}

int cmd_analyze(const AnalyzeArgs& a) {
  if (a.window_ps && a.window_ns) throw CLI::ValidationError("--window-ps and --window-ns are mutually exclusive");
  if (!a.sweep.empty()) {
    const fs::path root = a.sweep;
    const auto sweep = read_json(root / "sweep.json");
    const fs::path dir = a.output.empty() ? root : fs::path(a.output);
    fs::create_directories(dir);
    const fs::path table = dir / "sweep_metrics.csv";
    std::ofstream out(table);
    out.precision(10);
    out << "pump_power_uw,pair_rate_hz,r_i_hz,eta_h_s,eta_h_s_stderr,r_h_s_hz,r_h_s_stderr,g2_h_0,g2_h_0_stderr\n";
    nlohmann::json first_config;
    std::uint64_t seed = 0;
    int failed = 0;
    for (const auto& run : sweep.at("runs")) {
      const fs::path run_dir = root / run.at("dir").get<std::string>();
      RunConfig cfg = a.config.empty() ? load_config(run_dir / "config.json") : load_config(a.config).at_power(run.at("pump_power_uw").get<double>());
      cfg = parse_config(cfg.document);
      apply_window(cfg, a);
      if (first_config.is_null()) {
        first_config = cfg.document;
        seed = cfg.seed;
      }
      const double power = run.at("pump_power_uw").get<double>();
      AnalysisReport r;
      try {
        r = analyze_file(cfg, run_dir / cfg.outputs.tag_file_name(),
                         integration_time(std::nullopt, run_dir / cfg.outputs.tag_file_name(), &cfg));
      } catch (const EstimationError& e) {
        std::cerr << "warning: " << power << " uW: " << e.what() << '\n';
        out << power << ',' << cfg.pair_rate_hz() << ",,,,,,,\n";
        ++failed;
        continue;
      }
      write_analysis(r, dir / run.at("dir").get<std::string>());
      const auto& m = r.metrics;
      out << power << ',' << cfg.pair_rate_hz() << ',' << m.r_i.value << ','
          << m.eta_h_s.value << ',' << m.eta_h_s.error << ',' << m.r_h_s.value << ',' << m.r_h_s.error << ',';
      if (m.g2_h_0) out << m.g2_h_0->value << ',' << m.g2_h_0->error;
      else out << ',';
      out << '\n';
    }
    out.close();
    write_manifest(dir / "analysis_manifest.json", "analyze --sweep", first_config, seed, {table});
    std::cout << "wrote " << table.string() << '\n';
    return failed ? kExitEstimation : kExitOk;
  }
  if (a.tags.empty()) throw CLI::ValidationError("analyze needs --tags or --sweep");
  RunConfig cfg = config_for(a.config, a.tags);
  apply_window(cfg, a);
  const fs::path dir = a.output.empty() ? fs::path(a.tags).parent_path() : fs::path(a.output);
  const auto r = analyze_file(cfg, a.tags, integration_time(a.integration_s, a.tags, &cfg));
  auto files = write_analysis(r, dir);
  write_manifest(dir / "analysis_manifest.json", "analyze", cfg.document, cfg.seed, files);
  std::cout << metrics_json(r).dump(2) << '\n';
  return kExitOk;
}

// Collects figure source data found under `input` into CSVs under `output`.
int cmd_report(const std::string& input, const std::string& output) {
  const fs::path in = input;
  const fs::path dir = output.empty() ? in / "report" : fs::path(output);
  fs::create_directories(dir);
  std::vector<fs::path> files;
  nlohmann::json index = nlohmann::json::object();
  auto copy = [&](const fs::path& src, const std::string& name) {
    if (!fs::exists(src)) return;
    const fs::path dst = dir / name;
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
    files.push_back(dst);
    index[name] = fs::relative(src, in).generic_string();
  };
  copy(in / "histogram.csv", "delay_histogram.csv");
  copy(in / "g2_auto.csv", "g2_auto.csv");
  copy(in / "cross_correlation.csv", "cross_correlation.csv");
  copy(in / "sweep_metrics.csv", "heralding_vs_power.csv");
  if (fs::exists(in / "characterization.json")) {
    const auto c = read_json(in / "characterization.json");
    if (c.contains("app_curve")) {
      const fs::path p = dir / "app_vs_holdoff.csv";
      std::ofstream out(p);
      out.precision(10);
      out << "holdoff_ps,p_ap,p_ap_stderr\n";
      for (const auto& row : c["app_curve"]) {
        out << row["holdoff_ps"] << ',' << row["p_ap"]["value"] << ',' << row["p_ap"]["stderr"] << '\n';
      }
      out.close();
      files.push_back(p);
      index["app_vs_holdoff.csv"] = "characterization.json";
    }
    if (c.contains("pde_direct")) {
      const fs::path p = dir / "operating_point.csv";
      std::ofstream out(p);
      out.precision(10);
      out << "dcr_per_gate,pde_direct,pde_direct_stderr,pde_poissonian,pde_poissonian_stderr\n";
      out << c["dcr_per_gate"]["value"] << ',' << c["pde_direct"]["value"] << ',' << c["pde_direct"]["stderr"] << ','
          << c["pde_poissonian"]["value"] << ',' << c["pde_poissonian"]["stderr"] << '\n';
      out.close();
      files.push_back(p);
      index["operating_point.csv"] = "characterization.json";
    }
  }
  if (files.empty()) throw DataError("no analysis outputs found under " + in.string());
  write_json(dir / "index.json", index);
  files.push_back(dir / "index.json");
  write_manifest(dir / "report_manifest.json", "report", nlohmann::json::object(), 0, files);
  std::cout << "report: " << files.size() << " files in " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heralded single-photon source simulator and timetag analysis"};
  app.require_subcommand(1);
  std::string simd_flag;
  app.add_option("--simd", simd_flag, "Force kernel ISA (scalar|avx2|neon)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a run config into tag files");
  s->add_option("-c,--config", sim.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("-o,--output", sim.output, std::string("Output directory (default: $") + kOutputEnv + ")");
  s->add_option("--seed", sim.seed, "Override seed");
  s->add_option("--duration-s", sim.duration_s, "Override simulated duration");
  s->add_option("--threads", sim.threads, "Worker threads");
  s->add_option("--format", sim.format, "binary|csv")->check(CLI::IsMember({"binary", "csv"}));
  s->add_flag("--include-truth", sim.truth, "Keep origin labels and pair ids");

  CharacterizeArgs ch;
  auto* c = app.add_subcommand("characterize", "Single-histogram detector characterization");
  auto* c_tags = c->add_option("-t,--tags", ch.tags, "Tag file")->check(CLI::ExistingFile);
  auto* c_hist = c->add_option("--histogram", ch.histogram, "Histogram CSV (with JSON sidecar)")->check(CLI::ExistingFile);
  c_tags->excludes(c_hist);
  c->add_option("-c,--config", ch.config, "Run config")->check(CLI::ExistingFile);
  c->add_option("-o,--output", ch.output, "Output directory");
  c->add_option("--mu", ch.mu, "Mean photon number per pulse");
  c->add_option("--rep-rate-hz", ch.rep_rate_hz, "Laser repetition rate");
  c->add_option("--period-ps", ch.period_ps, "Histogram period (laser-off runs)");
  c->add_option("--channel", ch.channel, "Detector channel");
  c->add_option("--bin-width-ps", ch.bin_width_ps, "Histogram bin width");
  c->add_option("--pulse-bin", ch.pulse_bin, "Index of the illuminated bin");
  c->add_option("--far-window-fraction", ch.far_fraction, "Trailing fraction of the period used for dark counts");
  c->add_option("--holdoffs-ps", ch.holdoffs_ps, "Software hold-off sweep");
  c->add_option("--integration-s", ch.integration_s, "Acquisition time (default: run.json, then config)");
  c->add_flag("--laser-off", ch.laser_off, "Dark-count-only report");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Correlation analysis and source metrics");
  a->add_option("-t,--tags", an.tags, "Tag file")->check(CLI::ExistingFile);
  a->add_option("-c,--config", an.config, "Run config (default: config.json beside the tags)");
  a->add_option("-o,--output", an.output, "Output directory");
  a->add_option("--sweep", an.sweep, "Sweep directory written by simulate")->check(CLI::ExistingDirectory);
  a->add_option("--window-ps", an.window_ps, "Heralded g2 coincidence window (full width)");
  a->add_option("--integration-s", an.integration_s, "Acquisition time (default: run.json, then config)");
  a->add_option("--window-ns", an.window_ns, "Heralded g2 coincidence window in ns (full width)");

  std::string report_in;
  std::string report_out;
  auto* r = app.add_subcommand("report", "Bundle figure source data as CSV");
  r->add_option("-i,--input", report_in, "Directory holding analysis outputs")->required()->check(CLI::ExistingDirectory);
  r->add_option("-o,--output", report_out, "Output directory (default: <input>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!simd_flag.empty()) {
      if (simd_flag == "scalar") simd::force_isa(simd::Isa::scalar);
      else if (simd_flag == "avx2") simd::force_isa(simd::Isa::avx2);
      else if (simd_flag == "neon") simd::force_isa(simd::Isa::neon);
      else throw ConfigError("unknown --simd value " + simd_flag);
    }
    if (s->parsed()) return cmd_simulate(sim);
    if (c->parsed()) return cmd_characterize(ch);
    if (a->parsed()) return cmd_analyze(an);
    if (r->parsed()) return cmd_report(report_in, report_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const EstimationError& e) {
    std::cerr << "estimation failed: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const DomainError& e) {
    std::cerr << "estimation failed: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
