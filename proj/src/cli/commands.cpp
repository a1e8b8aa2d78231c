#include "diffspeed/cli/commands.hpp"

#include "diffspeed/csi_io.hpp"
#include "diffspeed/diffusion.hpp"
#include "diffspeed/errors.hpp"
#include "diffspeed/kasami.hpp"
#include "diffspeed/scene_io.hpp"
#include "diffspeed/simulator.hpp"
#include "diffspeed/wav.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

namespace diffspeed::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------- settings

enum class Kind { number, integer, text, int_pair, off_switch };

struct Target {
  const char* section;
  const char* key;
};

struct Setting {
  const char* flag;
  std::vector<Target> targets;
  Kind kind;
  const char* help;
};

const std::vector<Setting>& modem_settings() {
  static const std::vector<Setting> s{
      {"sample-rate", {{"modem", "audio_sample_rate"}}, Kind::number, "audio sample rate [Hz]"},
      {"frame-length", {{"modem", "frame_length"}}, Kind::integer, "probe frame length [samples], power of two"},
      {"carrier", {{"modem", "carrier_frequency"}}, Kind::number, "carrier frequency [Hz]"},
      {"degree", {{"modem", "sequence_degree"}}, Kind::integer, "Kasami LFSR degree (even)"},
      {"seq-indices", {{"modem", "sequence_indices"}}, Kind::int_pair, "small-set members for the two branches, e.g. 0,1"},
      {"amplitude", {{"modem", "amplitude"}}, Kind::number, "baseband amplitude"},
      {"full-scale", {{"modem", "full_scale"}}, Kind::number, "waveform value mapped to PCM full scale"},
      {"lpf-cutoff", {{"modem", "lpf_cutoff"}}, Kind::number, "receive lowpass cutoff [Hz]"},
      {"lpf-taps", {{"modem", "lpf_taps"}}, Kind::integer, "receive lowpass taps (odd)"},
      {"pcm-bits", {{"modem", "pcm_bits"}}, Kind::integer, "PCM bits per sample"},
  };
  return s;
}

const std::vector<Setting>& estimator_settings() {
  static const std::vector<Setting> s{
      {"window", {{"estimator", "window"}}, Kind::number, "analysis window [s]"},
      {"step", {{"estimator", "step"}}, Kind::number, "window step [s]"},
      {"max-lag", {{"estimator", "max_lag"}}, Kind::number, "largest ACF lag [s]"},
      {"model", {{"estimator", "model"}}, Kind::text, "diffusion model: 2d, 3d (estimate also accepts both)"},
      {"f-ref", {{"estimator", "f_ref"}}, Kind::number, "reference frequency [Hz], 0 = carrier"},
      {"zcc-threshold", {{"estimator", "zcc_threshold"}}, Kind::number, "motion threshold [crossings per row]"},
      {"prominence-floor", {{"estimator", "prominence_floor"}}, Kind::number, "first-peak prominence floor"},
      {"sigmoid-level", {{"estimator", "sigmoid_level"}}, Kind::number, "decay weight at the inner edge"},
      {"upsample", {{"estimator", "upsample"}}, Kind::integer, "aligned lag grid upsampling"},
      {"no-motion-gate", {{"estimator", "gate_on_motion"}}, Kind::off_switch, "estimate speed in every window"},
  };
  return s;
}

const std::vector<Setting>& shared_settings() {
  static const std::vector<Setting> s{
      {"sound-speed", {{"modem", "sound_speed"}, {"estimator", "sound_speed"}}, Kind::number, "speed of sound [m/s]"},
  };
  return s;
}

std::string env_name(const char* flag) {
  std::string n = "DIFFSPEED_";
  for (const char* p = flag; *p; ++p) n += *p == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
  return n;
}

json parse_setting(const Setting& s, const std::string& raw, const std::string& origin) {
  auto bad = [&](const char* expected) -> json {
    throw InvalidParameter(origin + ": expected " + expected + ", got '" + raw + "'");
  };
  std::size_t used = 0;
  switch (s.kind) {
    case Kind::number:
      try {
        const double v = std::stod(raw, &used);
        if (used != raw.size()) return bad("a number");
        return v;
      } catch (const std::logic_error&) {
        return bad("a number");
      }
    case Kind::integer:
      try {
        const long long v = std::stoll(raw, &used);
        if (used != raw.size()) return bad("an integer");
        return v;
      } catch (const std::logic_error&) {
        return bad("an integer");
      }
    case Kind::text:
      return raw;
    case Kind::int_pair: {
      const auto comma = raw.find(',');
      if (comma == std::string::npos) return bad("two comma-separated integers");
      try {
        std::size_t u1 = 0, u2 = 0;
        const std::string a = raw.substr(0, comma), b = raw.substr(comma + 1);
        const long long x = std::stoll(a, &u1), y = std::stoll(b, &u2);
        if (u1 != a.size() || u2 != b.size()) return bad("two comma-separated integers");
        return json::array({x, y});
      } catch (const std::logic_error&) {
        return bad("two comma-separated integers");
      }
    }
    case Kind::off_switch: {
      std::string v = raw;
      std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
      if (v == "1" || v == "true" || v == "yes" || v == "on") return false;
      if (v == "0" || v == "false" || v == "no" || v == "off") return true;
      return bad("a boolean");
    }
  }
  return nullptr;
}

struct SettingValues {
  std::vector<const Setting*> settings;
  std::map<std::string, std::string> text;  // flag -> raw value as given
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;
};

void add_settings(CLI::App* app, SettingValues& values, const std::vector<Setting>& list) {
  for (const auto& s : list) {
    values.settings.push_back(&s);
    const std::string name = std::string("--") + s.flag;
    const std::string help = std::string(s.help) + " (env " + env_name(s.flag) + ")";
    if (s.kind == Kind::off_switch) {
      values.options[s.flag] = app->add_flag(name, values.switches[s.flag], help);
    } else {
      values.options[s.flag] = app->add_option(name, values.text[s.flag], help);
    }
  }
}

void set_target(json& modem, json& estimator, const Target& t, const json& v) {
  (std::string(t.section) == "modem" ? modem : estimator)[t.key] = v;
}

struct Resolved {
  json modem;
  json estimator;
};

Resolved resolve_settings(const SettingValues& values, const std::string& config_file, const EnvLookup& env) {
  Resolved r{json(ModemConfig{}), json(EstimatorConfig{})};

  if (!config_file.empty()) {
    const json file = load_json_file(config_file);
    if (!file.is_object()) throw SchemaError(config_file + ": expected a JSON object");
    for (const auto& [section, body] : file.items()) {
      json* target = section == "modem" ? &r.modem : section == "estimator" ? &r.estimator : nullptr;
      if (!target) throw InvalidParameter(config_file + ": unknown section '" + section + "'");
      if (!body.is_object()) throw SchemaError(config_file + ": section '" + section + "' must be an object");
      for (const auto& [key, v] : body.items()) {
        if (!target->contains(key)) throw InvalidParameter(config_file + ": unknown key '" + section + "." + key + "'");
        (*target)[key] = v;
      }
    }
  }

  for (const Setting* s : values.settings) {
    if (auto raw = env(env_name(s->flag))) {
      const json v = parse_setting(*s, *raw, env_name(s->flag));
      for (const auto& t : s->targets) set_target(r.modem, r.estimator, t, v);
    }
  }

  for (const Setting* s : values.settings) {
    const CLI::Option* opt = values.options.at(s->flag);
    if (opt->count() == 0) continue;
    const std::string raw = s->kind == Kind::off_switch ? "1" : values.text.at(s->flag);
    const json v = parse_setting(*s, raw, std::string("--") + s->flag);
    for (const auto& t : s->targets) set_target(r.modem, r.estimator, t, v);
  }
  return r;
}

template <class T>
T config_from(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw InvalidParameter(std::string(what) + " config: " + e.what());
  }
}

ModemConfig modem_of(const Invocation& inv) {
  auto m = config_from<ModemConfig>(inv.modem, "modem");
  m.validate();
  return m;
}

EstimatorConfig estimator_of(const Invocation& inv) {
  auto e = config_from<EstimatorConfig>(inv.estimator, "estimator");
  e.validate();
  return e;
}

// ------------------------------------------------------------------ output

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path() && !fs::exists(p.parent_path())) {
    throw IoError("output directory does not exist: " + p.parent_path().string());
  }
  std::ofstream os(p);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string path_of(const json& io, const char* key) {
  return io.contains(key) && io.at(key).is_string() ? io.at(key).get<std::string>() : std::string{};
}

CsiSeries synth_on_grid(const SimScene& scene, const ModemConfig& mc, double rate) {
  CsiSeries csi = synth_csi(scene, rate, mc.subcarrier_frequencies());
  csi.metadata["modem"] = mc;
  csi.metadata["interleaved"] = std::abs(rate - 2.0 * mc.frame_rate()) < 1e-9;
  return csi;
}

TxWaveform probe_waveform(const ModemConfig& mc, std::int64_t frames) {
  const auto b1 = band_modulate(generate_kasami(mc.sequence_degree, mc.sequence_indices[0]), mc);
  const auto b2 = band_modulate(generate_kasami(mc.sequence_degree, mc.sequence_indices[1]), mc);
  return otdm_assemble(b1, b2, mc, static_cast<int>(frames));
}

// ---------------------------------------------------------------- commands

json cmd_gen_tx(const Invocation& inv, std::ostream& out) {
  const ModemConfig mc = modem_of(inv);
  const double duration = inv.params.value("duration", 10.0);
  if (!(duration > 0.0)) throw InvalidParameter("gen-tx: duration must be positive");
  const auto samples = static_cast<std::int64_t>(std::llround(duration * mc.audio_sample_rate));
  const std::int64_t frames = (samples + mc.frame_length - 1) / mc.frame_length;
  TxWaveform tx = probe_waveform(mc, std::max<std::int64_t>(1, frames));
  tx.pcm.resize(static_cast<std::size_t>(samples));
  write_wav(path_of(inv.outputs, "wav"), tx);
  out << "wrote " << samples << " samples (" << frames << " frames, " << tx.clipped << " clipped) to "
      << path_of(inv.outputs, "wav") << '\n';
  return {{"samples", samples},
          {"frames", frames},
          {"clipped", tx.clipped},
          {"delay_samples", tx.delay},
          {"sequence_indices", mc.sequence_indices},
          {"warnings", tx.clipped > 0 ? 1 : 0}};
}

json cmd_decode(const Invocation& inv, std::ostream& out) {
  const ModemConfig mc = modem_of(inv);
  const WavReadResult wav = read_wav(path_of(inv.inputs, "wav"));
  DecodeOptions opts;
  opts.acquire_sync = inv.params.value("sync", true);
  opts.sync_seconds = inv.params.value("sync_seconds", 1.0);
  opts.branch = inv.params.value("branch", 0);
  DecodeResult res = decode_recording(wav.recording, mc, opts);
  const std::size_t warnings = wav.warnings + res.warnings;
  res.csi.metadata["source"] = "decode";
  res.csi.metadata["warnings"] = warnings;
  write_csi(path_of(inv.outputs, "csi"), res.csi);
  out << "decoded " << res.csi.num_frames() << " CSI frames at " << res.csi.csi_rate << " Hz, sync offset "
      << res.sync_offset << ", " << warnings << " warning(s)\n";
  json report{{"frames", res.csi.num_frames()},
              {"csi_rate", res.csi.csi_rate},
              {"sync_offset", res.sync_offset},
              {"warnings", warnings}};
  if (!wav.note.empty()) report["note"] = wav.note;
  return report;
}

void dump_acf(const fs::path& dir, const CsiSeries& csi, const EstimatorConfig& ec) {
  fs::create_directories(dir);
  const Eigen::Index n = window_count(csi, ec);
  for (Eigen::Index w = 0; w < n; ++w) {
    const AcfMatrix acf = window_acf(csi, ec, w);
    char name[32];
    std::snprintf(name, sizeof name, "acf_%04ld.csv", static_cast<long>(w));
    std::ofstream os = open_out(dir / name);
    os << "# lag_s [s] by subcarrier ACF [1]; window_start " << fmt(acf.window_start) << " s; columns in Hz\n";
    os << "lag_s";
    for (Eigen::Index i = 0; i < acf.rows(); ++i) os << ',' << fmt(acf.subcarrier_frequencies[i], 3);
    os << '\n';
    for (Eigen::Index j = 0; j < acf.lags(); ++j) {
      os << fmt(static_cast<double>(j) * acf.lag_step);
      for (Eigen::Index i = 0; i < acf.rows(); ++i) os << ',' << fmt(acf.values(i, j));
      os << '\n';
    }
  }
}

json cmd_estimate(const Invocation& inv, std::ostream& out) {
  EstimatorConfig ec = estimator_of(inv);
  const CsiSeries csi = read_csi(path_of(inv.inputs, "csi"));
  std::vector<ModelKind> models;
  for (const auto& m : inv.params.value("models", json::array({to_string(ec.model)}))) {
    models.push_back(parse_model_kind(m.get<std::string>()));
  }
  const std::string format = inv.params.value("format", std::string("csv"));
  if (format != "csv" && format != "jsonl") throw InvalidParameter("estimate: format must be csv or jsonl");

  std::vector<SpeedEstimate> rows;
  for (ModelKind m : models) {
    ec.model = m;
    const auto est = estimate_speed(csi, ec);
    rows.insert(rows.end(), est.begin(), est.end());
  }

  std::ofstream os = open_out(path_of(inv.outputs, "speeds"));
  if (format == "csv") {
    os << "# time_s [s], motion [0/1], speed_mps [m/s], tau_s [s], confidence [1], zcc [crossings/row], model [2d|3d]\n";
    os << "time_s,motion,speed_mps,tau_s,confidence,zcc,model\n";
    for (const auto& e : rows) {
      os << fmt(e.time, 4) << ',' << (e.motion ? 1 : 0) << ',' << (e.speed ? fmt(*e.speed) : std::string{}) << ','
         << fmt(e.tau_s) << ',' << fmt(e.confidence) << ',' << fmt(e.zcc, 4) << ',' << to_string(e.model) << '\n';
    }
  } else {
    for (const auto& e : rows) os << json(e).dump() << '\n';
  }

  const std::string acf_dir = path_of(inv.outputs, "acf_dir");
  if (!acf_dir.empty()) dump_acf(acf_dir, csi, ec);

  int motion = 0, speeds = 0;
  double sum = 0.0;
  for (const auto& e : rows) {
    motion += e.motion ? 1 : 0;
    if (e.speed) {
      ++speeds;
      sum += *e.speed;
    }
  }
  out << rows.size() << " window(s), " << motion << " with motion, " << speeds << " speed estimate(s)";
  if (speeds > 0) out << ", mean " << fmt(sum / speeds, 3) << " m/s";
  out << '\n';
  return {{"rows", rows.size()},
          {"motion_rows", motion},
          {"speed_rows", speeds},
          {"mean_speed_mps", speeds > 0 ? json(sum / speeds) : json(nullptr)}};
}

json acf_oracle_report(const SimScene& scene, const ModemConfig& mc, double rate, const fs::path& path) {
  const double v = scene.max_speed();
  if (scene.params.speed_profile.size() != 1 || !(v > 0.0)) {
    throw InvalidParameter("simulate: the ACF report needs a constant, non-zero speed");
  }
  const DiffusionModel model{scene.params.geometry, scene.params.sound_speed};
  const double f = mc.carrier_frequency;
  const double peak = peak_lag_for_speed(model, v, f);
  const auto lags = static_cast<Eigen::Index>(std::ceil(1.5 * peak * rate));
  const CsiSeries csi = synth_csi(scene, rate, Eigen::VectorXd::Constant(1, f));
  if (csi.num_frames() < 2 * lags) throw InvalidParameter("simulate: scene too short for the ACF report");
  const AcfMatrix acf = compute_acf(channel_power(csi.frames), lags, 1.0 / rate, csi.subcarrier_frequencies);

  std::ofstream os = open_out(path);
  os << "# tau_s [s], empirical [1], theory [1], abs_dev [1]; f = " << fmt(f, 1) << " Hz, v = " << fmt(v, 3)
     << " m/s, model " << to_string(model.kind) << '\n';
  os << "tau_s,empirical,theory,abs_dev\n";
  double max_dev = 0.0;
  for (Eigen::Index j = 0; j <= lags; ++j) {
    const double tau = static_cast<double>(j) / rate;
    const double th = psi_p(model, v, tau, f);
    const double dev = std::abs(acf.values(0, j) - th);
    if (tau <= peak) max_dev = std::max(max_dev, dev);
    os << fmt(tau) << ',' << fmt(acf.values(0, j)) << ',' << fmt(th) << ',' << fmt(dev) << '\n';
  }
  return {{"oracle_rate", rate}, {"first_peak_s", peak}, {"max_dev_to_first_peak", max_dev}};
}

json cmd_simulate(const Invocation& inv, std::ostream& out) {
  const ModemConfig mc = modem_of(inv);
  if (!inv.params.contains("scene")) throw SchemaError("simulate: invocation has no scene");
  const SceneParams params = scene_from_json(inv.params.at("scene"));
  const SimScene scene = make_scene(params);
  const double rate = inv.params.value("csi_rate", 2.0 * mc.frame_rate());
  json report{{"seed", params.seed}, {"csi_rate", rate}};

  const std::string csi_path = path_of(inv.outputs, "csi");
  const std::string wav_path = path_of(inv.outputs, "wav");
  const std::string acf_path = path_of(inv.outputs, "acf_report");
  if (csi_path.empty() && wav_path.empty() && acf_path.empty()) {
    throw InvalidParameter("simulate: give at least one of --out-csi, --out-wav, --acf-report");
  }

  if (!csi_path.empty()) {
    CsiSeries csi = synth_on_grid(scene, mc, rate);
    csi.metadata["scene"] = scene_to_json(params);
    write_csi(csi_path, csi);
    report["csi_frames"] = csi.num_frames();
    out << "wrote " << csi.num_frames() << " CSI frames at " << rate << " Hz to " << csi_path << '\n';
  }
  if (!wav_path.empty()) {
    const auto samples = static_cast<std::int64_t>(std::ceil(params.duration * mc.audio_sample_rate));
    const std::int64_t frames = (samples + mc.frame_length - 1) / mc.frame_length + 1;
    WaveformOptions opts;
    opts.receive_gain = inv.params.value("receive_gain", opts.receive_gain);
    if (inv.params.contains("wav_snr_db") && !inv.params.at("wav_snr_db").is_null()) {
      opts.snr_db = inv.params.at("wav_snr_db").get<double>();
    }
    const WaveformResult res = synth_waveform(scene, probe_waveform(mc, frames), opts);
    write_wav(wav_path, res.recording);
    report["wav_samples"] = res.recording.pcm.size();
    report["clipped"] = res.clipped;
    report["warnings"] = res.clipped > 0 ? 1 : 0;
    out << "wrote " << res.recording.pcm.size() << " samples (" << res.clipped << " clipped) to " << wav_path << '\n';
  }
  if (!acf_path.empty()) {
    report["acf_oracle"] = acf_oracle_report(scene, mc, inv.params.value("oracle_rate", 2000.0), acf_path);
    out << "ACF oracle: max |empirical - theory| up to the first peak = "
        << fmt(report["acf_oracle"]["max_dev_to_first_peak"].get<double>(), 4) << '\n';
  }
  return report;
}

json cmd_eval(const Invocation& inv, std::ostream& out) {
  const ModemConfig mc = modem_of(inv);
  const EstimatorConfig ec = estimator_of(inv);
  if (!inv.params.contains("suite")) throw SchemaError("eval: invocation has no suite");
  const json& suite = inv.params.at("suite");
  if (!suite.is_object() || !suite.contains("kind")) throw SchemaError("suite: missing required field 'kind'");
  const std::string kind = suite.at("kind").get<std::string>();

  std::ofstream os = open_out(path_of(inv.outputs, "report"));
  json summary{{"kind", kind}, {"rows", json::array()}};
  if (kind == "rate_sweep") {
    const auto rows = run_rate_sweep(suite, mc, ec);
    os << "# speed_mps [m/s], csi_rate_hz [Hz], scenes [count], windows [count], estimates [count], "
          "mean_abs_error_mps [m/s], mean_speed_mps [m/s], max_measurable_mps [m/s], beyond_limit [0/1]\n";
    os << "speed_mps,csi_rate_hz,scenes,windows,estimates,mean_abs_error_mps,mean_speed_mps,max_measurable_mps,"
          "beyond_limit\n";
    out << "speed  rate     error   estimates\n";
    for (const auto& r : rows) {
      const bool beyond = r.speed > r.max_measurable;
      os << fmt(r.speed, 3) << ',' << fmt(r.csi_rate, 3) << ',' << r.scenes << ',' << r.windows << ',' << r.estimates
         << ',' << fmt(r.mean_abs_error) << ',' << fmt(r.mean_speed) << ',' << fmt(r.max_measurable) << ','
         << (beyond ? 1 : 0) << '\n';
      summary["rows"].push_back({{"speed", r.speed},
                                 {"csi_rate", r.csi_rate},
                                 {"mean_abs_error", r.mean_abs_error},
                                 {"estimates", r.estimates},
                                 {"windows", r.windows},
                                 {"beyond_limit", beyond}});
      out << fmt(r.speed, 2) << "  " << fmt(r.csi_rate, 2) << "  " << fmt(r.mean_abs_error, 4) << "  " << r.estimates
          << '/' << r.windows << (beyond ? "  (beyond CSI-rate limit)" : "") << '\n';
    }
  } else if (kind == "dfs_vs_ase") {
    const auto rows = run_dfs_contrast(suite, mc, ec);
    os << "# label, true_speed_mps [m/s], directions, ase_speed_mps [m/s], ase_rel_error [1], ase_estimates [count], "
          "windows [count], dfs_radial_mps [m/s], dfs_abs_mps [m/s], dfs_near_nyquist [count], beyond_limit [0/1]\n";
    os << "label,true_speed_mps,directions,ase_speed_mps,ase_rel_error,ase_estimates,windows,dfs_radial_mps,"
          "dfs_abs_mps,dfs_near_nyquist,beyond_limit\n";
    out << "case  true  ase  dfs\n";
    for (const auto& r : rows) {
      os << r.label << ',' << fmt(r.true_speed, 3) << ',' << r.directions << ',' << fmt(r.ase_speed) << ','
         << fmt(r.ase_rel_error) << ',' << r.ase_estimates << ',' << r.windows << ',' << fmt(r.dfs_radial) << ','
         << fmt(r.dfs_abs) << ',' << r.dfs_near_nyquist << ',' << (r.beyond_limit ? 1 : 0) << '\n';
      summary["rows"].push_back({{"label", r.label},
                                 {"true_speed", r.true_speed},
                                 {"ase_speed", r.ase_speed},
                                 {"ase_rel_error", r.ase_rel_error},
                                 {"dfs_radial", r.dfs_radial},
                                 {"aliased", r.beyond_limit}});
      out << r.label << "  " << fmt(r.true_speed, 2) << "  " << fmt(r.ase_speed, 3) << "  " << fmt(r.dfs_radial, 3)
          << (r.beyond_limit ? "  (DFS aliased)" : "") << '\n';
    }
  } else {
    throw SchemaError("suite: unknown kind '" + kind + "' (expected rate_sweep or dfs_vs_ase)");
  }

  const std::string summary_path = path_of(inv.outputs, "summary");
  if (!summary_path.empty()) open_out(summary_path) << summary.dump(2) << '\n';
  return summary;
}

json cmd_psi(const Invocation& inv, std::ostream& out) {
  const DiffusionModel model{parse_model_kind(inv.params.value("model", std::string("3d"))),
                             inv.params.value("sound_speed", kSoundSpeed)};
  const double f = inv.params.value("frequency", 20250.0);
  const double v = inv.params.value("speed", 1.0);
  const double max_tau = inv.params.value("max_tau", 0.1);
  const int points = inv.params.value("points", 501);
  if (points < 2 || !(max_tau > 0.0) || !(f > 0.0) || v < 0.0) throw InvalidParameter("psi: bad curve parameters");
  std::ofstream os = open_out(path_of(inv.outputs, "csv"));
  os << "# tau_s [s], x [1], psi [1]; model " << to_string(model.kind) << ", f = " << fmt(f, 1) << " Hz, v = " << fmt(v, 3)
     << " m/s\n";
  os << "tau_s,x,psi\n";
  for (int i = 0; i < points; ++i) {
    const double tau = max_tau * i / (points - 1);
    os << fmt(tau, 8) << ',' << fmt(model.wavenumber(f) * v * tau, 8) << ',' << fmt(psi_p(model, v, tau, f), 10) << '\n';
  }
  out << "x0 = " << fmt(model.reference_point(), 10) << '\n';
  return {{"reference_point", model.reference_point()}};
}

json cmd_kasami(const Invocation& inv, std::ostream& out) {
  const int degree = inv.params.value("degree", 6);
  const int index = inv.params.value("index", 0);
  const PnSequence seq = generate_kasami(degree, index);
  std::ofstream os = open_out(path_of(inv.outputs, "csv"));
  os << "# chip [+1/-1]; Kasami small set, degree " << degree << ", index " << index << '\n';
  os << "chip\n";
  write_csv(os, seq);
  out << "wrote " << seq.length() << " chips\n";
  return {{"length", seq.length()}};
}

json cmd_calibrate_zcc(const Invocation& inv, std::ostream& out) {
  const ModemConfig mc = modem_of(inv);
  const EstimatorConfig ec = estimator_of(inv);
  const int scenes = inv.params.value("scenes", 100);
  const double snr = inv.params.value("snr_db", 20.0);
  const int scatterers = inv.params.value("scatterers", 300);
  const double k = inv.params.value("sigmas", 5.0);
  const auto seed0 = inv.params.value("seed", std::uint64_t{9000});
  const double rate = inv.params.value("csi_rate", 2.0 * mc.frame_rate());
  if (scenes < 2) throw InvalidParameter("calibrate-zcc: need at least two scenes");

  std::vector<double> z;
  for (int s = 0; s < scenes; ++s) {
    SceneParams p;
    p.num_scatterers = scatterers;
    p.snr_db = snr;
    p.seed = seed0 + static_cast<std::uint64_t>(s);
    p.duration = ec.window + 2.0 / rate;
    const CsiSeries csi = synth_on_grid(make_scene(p), mc, rate);
    z.push_back(mean_zero_crossings(filter_outlier_acf(window_acf(csi, ec, 0), ec), ec));
  }
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
  double var = 0.0;
  for (double x : z) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(z.size()));
  const double threshold = mean + k * sd;
  out << "still-scene zcc mean " << fmt(mean, 4) << ", sd " << fmt(sd, 4) << ", max "
      << fmt(*std::max_element(z.begin(), z.end()), 4) << " -> threshold " << fmt(threshold, 4) << '\n';
  const json result{{"mean", mean}, {"sd", sd}, {"sigmas", k}, {"threshold", threshold}, {"scenes", scenes}};
  const std::string path = path_of(inv.outputs, "json");
  if (!path.empty()) open_out(path) << result.dump(2) << '\n';
  return result;
}

json dispatch(const Invocation& inv, std::ostream& out) {
  if (inv.command == "gen-tx") return cmd_gen_tx(inv, out);
  if (inv.command == "decode") return cmd_decode(inv, out);
  if (inv.command == "estimate") return cmd_estimate(inv, out);
  if (inv.command == "simulate") return cmd_simulate(inv, out);
  if (inv.command == "eval") return cmd_eval(inv, out);
  if (inv.command == "psi") return cmd_psi(inv, out);
  if (inv.command == "kasami") return cmd_kasami(inv, out);
  if (inv.command == "calibrate-zcc") return cmd_calibrate_zcc(inv, out);
  throw InvalidParameter("unknown command '" + inv.command + "'");
}

}  // namespace

// ------------------------------------------------------------ suites

std::vector<RateSweepRow> run_rate_sweep(const json& suite, const ModemConfig& mc, const EstimatorConfig& base) {
  auto list = [&](const char* key) {
    if (!suite.contains(key) || !suite.at(key).is_array()) {
      throw SchemaError(std::string("suite: missing required field '") + key + "'");
    }
    return suite.at(key);
  };
  const json speeds = list("speeds"), rates = list("csi_rates"), seeds = list("seeds");
  if (speeds.empty() || rates.empty() || seeds.empty()) throw InvalidParameter("suite is empty");
  if (!suite.contains("scene")) throw SchemaError("suite: missing required field 'scene'");
  EstimatorConfig ec = base;
  if (suite.contains("gate_on_motion")) ec.gate_on_motion = suite.at("gate_on_motion").get<bool>();

  std::vector<RateSweepRow> rows;
  for (const auto& vj : speeds) {
    for (const auto& rj : rates) {
      RateSweepRow r;
      r.speed = vj.get<double>();
      r.csi_rate = rj.get<double>();
      r.max_measurable = max_measurable_speed(r.csi_rate, mc.carrier_frequency, mc.sound_speed);
      double err = 0.0, sum = 0.0;
      for (const auto& sj : seeds) {
        json scene = suite.at("scene");
        scene["speed"] = r.speed;
        scene["seed"] = sj;
        const CsiSeries csi = synth_on_grid(make_scene(scene_from_json(scene)), mc, r.csi_rate);
        for (const auto& e : estimate_speed(csi, ec)) {
          ++r.windows;
          if (e.speed) {
            ++r.estimates;
            sum += *e.speed;
            err += std::abs(*e.speed - r.speed);
          } else {
            err += r.speed;
          }
        }
        ++r.scenes;
      }
      r.mean_abs_error = r.windows > 0 ? err / r.windows : 0.0;
      r.mean_speed = r.estimates > 0 ? sum / r.estimates : 0.0;
      rows.push_back(r);
    }
  }
  return rows;
}

std::vector<ContrastRow> run_dfs_contrast(const json& suite, const ModemConfig& mc, const EstimatorConfig& ec) {
  if (!suite.contains("cases") || !suite.at("cases").is_array()) throw SchemaError("suite: missing required field 'cases'");
  if (suite.at("cases").empty()) throw InvalidParameter("suite is empty");
  const double default_rate = suite.value("csi_rate", 2.0 * mc.frame_rate());

  std::vector<ContrastRow> rows;
  for (const auto& c : suite.at("cases")) {
    if (!c.contains("scene")) throw SchemaError("suite: case missing required field 'scene'");
    const SceneParams params = scene_from_json(c.at("scene"));
    const double rate = c.value("csi_rate", default_rate);
    const SimScene scene = make_scene(params);
    const CsiSeries csi = synth_on_grid(scene, mc, rate);

    ContrastRow r;
    r.label = c.value("label", std::string("case") + std::to_string(rows.size()));
    r.true_speed = scene.max_speed();
    r.directions = to_string(params.directions);
    r.beyond_limit = r.true_speed > max_measurable_speed(rate, mc.carrier_frequency, mc.sound_speed);

    double sum = 0.0;
    for (const auto& e : estimate_speed(csi, ec)) {
      ++r.windows;
      if (e.speed) {
        ++r.ase_estimates;
        sum += *e.speed;
      }
    }
    r.ase_speed = r.ase_estimates > 0 ? sum / r.ase_estimates : 0.0;
    r.ase_rel_error = r.true_speed > 0.0 ? std::abs(r.ase_speed - r.true_speed) / r.true_speed : 0.0;

    const auto dfs = dfs_baseline(csi, ec);
    for (const auto& d : dfs) {
      r.dfs_radial += d.radial_speed;
      r.dfs_abs += std::abs(d.radial_speed);
      r.dfs_near_nyquist += d.near_nyquist ? 1 : 0;
    }
    if (!dfs.empty()) {
      r.dfs_radial /= static_cast<double>(dfs.size());
      r.dfs_abs /= static_cast<double>(dfs.size());
    }
    rows.push_back(r);
  }
  return rows;
}

// ------------------------------------------------------------ execution

void execute(const Invocation& inv, std::ostream& out) {
  const json report = dispatch(inv, out);

  RunManifest m;
  m.invocation = inv;
  m.created_utc = utc_timestamp();
  m.report = report;
  if (inv.command == "simulate" && inv.params.contains("scene")) m.seed = inv.params.at("scene").value("seed", json());
  for (const auto& [name, p] : inv.inputs.items()) {
    if (p.is_string() && fs::is_regular_file(p.get<std::string>())) m.input_digests[name] = file_digest(p.get<std::string>());
  }
  for (const auto& [name, p] : inv.outputs.items()) {
    if (p.is_string() && fs::is_regular_file(p.get<std::string>())) m.output_digests[name] = file_digest(p.get<std::string>());
  }
  for (const auto& [name, p] : inv.outputs.items()) {
    if (p.is_string() && fs::is_regular_file(p.get<std::string>())) write_manifest(manifest_path_for(p.get<std::string>()), m);
  }
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InvalidParameter& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kSchemaError;
  } catch (const json::exception& e) {
    err << "schema error: " << e.what() << '\n';
    return kSchemaError;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

EnvLookup process_environment() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Acoustic speed estimation from channel sounding: probe generation, decoding, "
               "simulation and speed estimation."};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config_file;
  std::map<const CLI::App*, SettingValues> values;  // per subcommand; option storage must stay put
  Invocation inv;

  auto with_modem = [&](CLI::App* sub) {
    add_settings(sub, values[sub], modem_settings());
    add_settings(sub, values[sub], shared_settings());
  };
  auto with_estimator = [&](CLI::App* sub) { add_settings(sub, values[sub], estimator_settings()); };
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON file with \"modem\" and \"estimator\" sections");
  };

  // gen-tx
  double duration = 10.0;
  std::string out_path, in_path, extra_path, suite_path, scene_path, acf_path, summary_path, format, manifest_path, suffix;
  auto* gen = app.add_subcommand("gen-tx", "write the OTDM probe waveform as a WAV file");
  gen->add_option("--duration", duration, "length [s]")->capture_default_str();
  gen->add_option("-o,--out", out_path, "output WAV")->required();
  with_config(gen);
  with_modem(gen);

  bool no_sync = false;
  double sync_seconds = 1.0;
  auto* dec = app.add_subcommand("decode", "demodulate a recording into a CSI series container");
  dec->add_option("-i,--in", in_path, "input WAV")->required();
  dec->add_option("-o,--out", out_path, "output CSI container")->required();
  dec->add_flag("--no-sync", no_sync, "frames start at sample 0 instead of the acquired offset");
  dec->add_option("--sync-seconds", sync_seconds, "audio used for frame synchronization [s]")->capture_default_str();
  int branch = 0;
  dec->add_option("--branch", branch, "0: both branches interleaved, 1 or 2: one branch at the frame rate")
      ->check(CLI::Range(0, 2))
      ->capture_default_str();
  with_config(dec);
  with_modem(dec);

  auto* est = app.add_subcommand("estimate", "estimate speeds from a CSI series container");
  est->add_option("-i,--in", in_path, "input CSI container")->required();
  est->add_option("-o,--out", out_path, "output file (.csv or .jsonl)")->required();
  est->add_option("--format", format, "csv or jsonl (default from the output extension)");
  est->add_option("--dump-acf", extra_path, "directory for per-window ACF matrices");
  with_config(est);
  with_estimator(est);
  add_settings(est, values[est], shared_settings());

  double csi_rate = 0.0, receive_gain = 0.1, wav_snr = 0.0, oracle_rate = 2000.0;
  auto* sim = app.add_subcommand("simulate", "synthesize CSI and/or a recording from a scene file");
  sim->add_option("-s,--scene", scene_path, "scene JSON")->required();
  sim->add_option("--out-csi", out_path, "output CSI container");
  sim->add_option("--out-wav", extra_path, "output recording (waveform-level simulation)");
  sim->add_option("--acf-report", acf_path, "CSV comparing the empirical power ACF with the diffusion model");
  auto* rate_opt = sim->add_option("--csi-rate", csi_rate, "CSI rate [Hz] (default: doubled frame rate)");
  sim->add_option("--receive-gain", receive_gain, "waveform channel scale")->capture_default_str();
  auto* wav_snr_opt = sim->add_option("--wav-snr", wav_snr, "waveform noise, dB below received power");
  sim->add_option("--oracle-rate", oracle_rate, "CSI rate for the ACF report [Hz]")->capture_default_str();
  with_config(sim);
  with_modem(sim);

  auto* ev = app.add_subcommand("eval", "run an evaluation suite and write a report");
  ev->add_option("--suite", suite_path, "suite JSON")->required();
  ev->add_option("-o,--out", out_path, "report CSV")->required();
  ev->add_option("--summary", summary_path, "summary JSON");
  with_config(ev);
  with_modem(ev);
  with_estimator(ev);

  std::string psi_model = "3d";
  double psi_f = 20250.0, psi_v = 1.0, psi_tau = 0.1;
  int psi_points = 501;
  auto* psi = app.add_subcommand("psi", "write a diffusion-model correlation curve as CSV");
  psi->add_option("--model", psi_model, "2d or 3d")->capture_default_str();
  psi->add_option("--frequency", psi_f, "frequency [Hz]")->capture_default_str();
  psi->add_option("--speed", psi_v, "speed [m/s]")->capture_default_str();
  psi->add_option("--max-tau", psi_tau, "largest lag [s]")->capture_default_str();
  psi->add_option("--points", psi_points, "curve points")->capture_default_str();
  psi->add_option("-o,--out", out_path, "output CSV")->required();

  int degree = 6, index = 0;
  auto* kas = app.add_subcommand("kasami", "write a Kasami sequence, one chip per line");
  kas->add_option("--degree", degree, "LFSR degree (even)")->capture_default_str();
  kas->add_option("--index", index, "small-set member")->capture_default_str();
  kas->add_option("-o,--out", out_path, "output CSV")->required();

  int cal_scenes = 100, cal_scatterers = 300;
  double cal_snr = 20.0, cal_sigmas = 5.0;
  auto* cal = app.add_subcommand("calibrate-zcc", "still-scene zero-crossing statistics and threshold");
  cal->add_option("--scenes", cal_scenes, "still scenes")->capture_default_str();
  cal->add_option("--scatterers", cal_scatterers, "scatterers per scene")->capture_default_str();
  cal->add_option("--snr", cal_snr, "SNR [dB]")->capture_default_str();
  cal->add_option("--sigmas", cal_sigmas, "threshold = mean + sigmas * sd")->capture_default_str();
  cal->add_option("-o,--out", out_path, "output JSON");
  with_config(cal);
  with_modem(cal);
  with_estimator(cal);

  auto* rep = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  rep->add_option("-m,--manifest", manifest_path, "manifest sidecar")->required();
  rep->add_option("--suffix", suffix, "appended to every output path");

  try {
    std::vector<const char*> argv{"diffspeed"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {  // --help, --version
      return app.exit(e, out, err);
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub == rep) {
      RunManifest m = read_manifest(manifest_path);
      for (auto& [name, p] : m.invocation.outputs.items()) {
        if (p.is_string()) p = p.get<std::string>() + suffix;
      }
      execute(m.invocation, out);
      return kOk;
    }

    inv.command = sub->get_name();
    const Resolved r = resolve_settings(values[sub], config_file, env);
    inv.modem = r.modem;
    inv.estimator = r.estimator;

    if (sub == gen) {
      inv.params = {{"duration", duration}};
      inv.outputs = {{"wav", out_path}};
    } else if (sub == dec) {
      inv.params = {{"sync", !no_sync}, {"sync_seconds", sync_seconds}, {"branch", branch}};
      inv.inputs = {{"wav", in_path}};
      inv.outputs = {{"csi", out_path}};
    } else if (sub == est) {
      if (inv.estimator.value("model", std::string()) == "both") {
        inv.params["models"] = {"2d", "3d"};
        inv.estimator["model"] = "3d";
      } else {
        inv.params["models"] = {inv.estimator.value("model", std::string("3d"))};
      }
      if (format.empty()) format = fs::path(out_path).extension() == ".jsonl" ? "jsonl" : "csv";
      inv.params["format"] = format;
      inv.inputs = {{"csi", in_path}};
      inv.outputs = {{"speeds", out_path}};
      if (!extra_path.empty()) inv.outputs["acf_dir"] = extra_path;
    } else if (sub == sim) {
      inv.params["scene"] = scene_to_json(load_scene(scene_path));
      if (rate_opt->count() > 0) inv.params["csi_rate"] = csi_rate;
      inv.params["receive_gain"] = receive_gain;
      inv.params["wav_snr_db"] = wav_snr_opt->count() > 0 ? json(wav_snr) : json(nullptr);
      inv.params["oracle_rate"] = oracle_rate;
      inv.inputs = {{"scene", scene_path}};
      if (!out_path.empty()) inv.outputs["csi"] = out_path;
      if (!extra_path.empty()) inv.outputs["wav"] = extra_path;
      if (!acf_path.empty()) inv.outputs["acf_report"] = acf_path;
    } else if (sub == ev) {
      inv.params["suite"] = load_json_file(suite_path);
      inv.inputs = {{"suite", suite_path}};
      inv.outputs = {{"report", out_path}};
      if (!summary_path.empty()) inv.outputs["summary"] = summary_path;
    } else if (sub == psi) {
      inv.params = {{"model", psi_model}, {"frequency", psi_f}, {"speed", psi_v}, {"max_tau", psi_tau}, {"points", psi_points}};
      inv.outputs = {{"csv", out_path}};
    } else if (sub == kas) {
      inv.params = {{"degree", degree}, {"index", index}};
      inv.outputs = {{"csv", out_path}};
    } else if (sub == cal) {
      inv.params = {{"scenes", cal_scenes}, {"scatterers", cal_scatterers}, {"snr_db", cal_snr}, {"sigmas", cal_sigmas}};
      if (!out_path.empty()) inv.outputs = {{"json", out_path}};
    }
    execute(inv, out);
    return kOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace diffspeed::cli
