#include "diffspeed/simulator.hpp"

#include "diffspeed/errors.hpp"
#include "diffspeed/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace diffspeed {

using cd = std::complex<double>;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

Eigen::Vector3d draw_direction(SimRng& rng, ModelKind geometry) {
  if (geometry == ModelKind::planar2d) {
    const double phi = rng.uniform(0.0, two_pi);
    return {std::cos(phi), std::sin(phi), 0.0};
  }
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, two_pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  // x is the motion axis, so the projection is the uniformly drawn coordinate
  return {z, r * std::cos(phi), r * std::sin(phi)};
}

Eigen::Vector3d draw_tangential(SimRng& rng, ModelKind geometry) {
  if (geometry == ModelKind::planar2d) return {0.0, rng.uniform() < 0.5 ? -1.0 : 1.0, 0.0};
  const double phi = rng.uniform(0.0, two_pi);
  return {0.0, std::cos(phi), std::sin(phi)};
}

bool uniform_grid(const Eigen::VectorXd& f) {
  if (f.size() < 3) return false;
  const double step = f[1] - f[0];
  if (step == 0.0) return false;
  for (Eigen::Index i = 2; i < f.size(); ++i) {
    if (std::abs((f[i] - f[i - 1]) - step) > 1e-9 * std::abs(step)) return false;
  }
  return true;
}

// Blackman-windowed sinc taps for fractional offsets in [0, 1), `phases` table rows.
class SincTable {
 public:
  SincTable(int half_width, int phases) : half_(half_width), phases_(phases), taps_(phases, 2 * half_width) {
    for (int p = 0; p < phases; ++p) {
      const double frac = static_cast<double>(p) / phases;
      double sum = 0.0;
      for (int k = 0; k < 2 * half_width; ++k) {
        const double x = static_cast<double>(k - half_width + 1) - frac;  // tap offset from sample point
        const double s = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double u = (x + half_width) / (2.0 * half_width);  // 0..1 across the window
        const double w = 0.42 - 0.5 * std::cos(two_pi * u) + 0.08 * std::cos(2.0 * two_pi * u);
        taps_(p, k) = s * w;
        sum += s * w;
      }
      taps_.row(p) /= sum;
    }
  }

  // Value of x at fractional index s; zero outside the record.
  cd operator()(const Eigen::VectorXcd& x, double s) const {
    const double fl = std::floor(s);
    auto p = static_cast<int>((s - fl) * phases_ + 0.5);
    auto base = static_cast<Eigen::Index>(fl);
    if (p == phases_) {
      p = 0;
      ++base;
    }
    const Eigen::Index first = base - half_ + 1;
    cd acc{0.0, 0.0};
    for (int k = 0; k < 2 * half_; ++k) {
      const Eigen::Index i = first + k;
      if (i >= 0 && i < x.size()) acc += taps_(p, k) * x[i];
    }
    return acc;
  }

 private:
  int half_;
  int phases_;
  Eigen::MatrixXd taps_;
};

}  // namespace

std::string to_string(DirectionMode m) {
  switch (m) {
    case DirectionMode::uniform: return "uniform";
    case DirectionMode::radial: return "radial";
    case DirectionMode::tangential: return "tangential";
    case DirectionMode::uniform_symmetric: return "uniform_symmetric";
  }
  return "uniform";
}

DirectionMode parse_direction_mode(std::string_view s) {
  if (s == "uniform") return DirectionMode::uniform;
  if (s == "radial") return DirectionMode::radial;
  if (s == "tangential") return DirectionMode::tangential;
  if (s == "uniform_symmetric") return DirectionMode::uniform_symmetric;
  throw InvalidParameter("unknown direction mode '" + std::string(s) + "'");
}

std::string to_string(AmplitudeMode m) { return m == AmplitudeMode::rayleigh ? "rayleigh" : "constant"; }

AmplitudeMode parse_amplitude_mode(std::string_view s) {
  if (s == "rayleigh") return AmplitudeMode::rayleigh;
  if (s == "constant") return AmplitudeMode::constant;
  throw InvalidParameter("unknown amplitude mode '" + std::string(s) + "'");
}

cd SimRng::complex_normal(double variance) {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-std::log(u1) * variance);
  return {r * std::cos(two_pi * u2), r * std::sin(two_pi * u2)};
}

double SimRng::rayleigh(double sigma) { return sigma * std::sqrt(-2.0 * std::log(1.0 - uniform())); }

StaticPath default_direct_path(double sound_speed) { return {0.3 / sound_speed, cd{std::sqrt(10.0), 0.0}}; }

void SceneParams::validate() const {
  auto fail = [](const std::string& what) { throw InvalidParameter("scene: " + what); };
  if (num_scatterers < 1) fail("num_scatterers must be >= 1");
  if (!(duration > 0.0)) fail("duration must be positive");
  if (speed_profile.empty()) fail("speed profile is empty");
  if (speed_profile.front().start != 0.0) fail("speed profile must start at t = 0");
  for (std::size_t i = 0; i < speed_profile.size(); ++i) {
    if (!(speed_profile[i].speed >= 0.0)) fail("speeds must be non-negative");
    if (i > 0 && !(speed_profile[i].start > speed_profile[i - 1].start)) fail("speed profile times must increase");
  }
  if (!(path_length_min >= 0.0) || !(path_length_max >= path_length_min)) fail("bad path length range");
  if (!(dynamic_gain >= 0.0)) fail("dynamic_gain must be >= 0");
  if (snr_db && !std::isfinite(*snr_db)) fail("snr_db must be finite");
  if (!(sound_speed > 0.0)) fail("sound_speed must be positive");
  for (const auto& s : static_paths) {
    if (!(s.delay >= 0.0)) fail("static path delays must be >= 0");
  }
}

double SimScene::speed_at(double t) const {
  double v = params.speed_profile.front().speed;
  for (const auto& seg : params.speed_profile) {
    if (seg.start <= t) v = seg.speed;
  }
  return v;
}

double SimScene::displacement(double t) const {
  const auto& prof = params.speed_profile;
  double x = 0.0;
  for (std::size_t i = 0; i < prof.size(); ++i) {
    const double start = prof[i].start;
    if (t <= start) break;
    const double end = i + 1 < prof.size() ? std::min(t, prof[i + 1].start) : t;
    x += prof[i].speed * (end - start);
  }
  return x;
}

double SimScene::max_speed() const {
  double v = 0.0;
  for (const auto& seg : params.speed_profile) v = std::max(v, seg.speed);
  return v;
}

SimScene make_scene(const SceneParams& p) {
  p.validate();
  const Eigen::Index n = p.num_scatterers;
  SimScene s;
  s.params = p;
  s.directions.resize(3, n);
  s.amplitudes.resize(n);
  s.path_lengths.resize(n);

  SimRng rng(p.seed);
  const Eigen::Index pairs = n / 2;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector3d u;
    switch (p.directions) {
      case DirectionMode::uniform: u = draw_direction(rng, p.geometry); break;
      case DirectionMode::radial: u = Eigen::Vector3d::UnitX(); break;
      case DirectionMode::tangential: u = draw_tangential(rng, p.geometry); break;
      case DirectionMode::uniform_symmetric:
        if (i >= pairs && i < 2 * pairs) {
          // mirror of scatterer i - pairs, same amplitude and path length
          s.directions.col(i) = -s.directions.col(i - pairs);
          s.amplitudes[i] = s.amplitudes[i - pairs];
          s.path_lengths[i] = s.path_lengths[i - pairs];
          continue;
        }
        u = i < pairs ? draw_direction(rng, p.geometry) : draw_tangential(rng, p.geometry);
        break;
    }
    s.directions.col(i) = u;
    s.amplitudes[i] = p.amplitudes == AmplitudeMode::rayleigh ? rng.rayleigh(1.0) : 1.0;
    s.path_lengths[i] = rng.uniform(p.path_length_min, p.path_length_max);
  }
  s.amplitudes *= p.dynamic_gain / s.amplitudes.norm();
  s.projection = s.directions.row(0).transpose();

  double reference = p.dynamic_gain * p.dynamic_gain;
  if (!(reference > 0.0)) {
    reference = 0.0;
    for (const auto& sp : p.static_paths) reference += std::norm(sp.gain);
  }
  s.noise_power = p.snr_db ? reference * std::pow(10.0, -*p.snr_db / 10.0) : 0.0;
  return s;
}

CsiSeries synth_csi(const SimScene& scene, double csi_rate, const Eigen::VectorXd& f) {
  if (!(csi_rate > 0.0)) throw InvalidParameter("synth_csi: csi_rate must be positive");
  if (f.size() == 0) throw InvalidParameter("synth_csi: empty subcarrier grid");
  const auto frames = static_cast<Eigen::Index>(std::floor(scene.params.duration * csi_rate + 1e-9));
  if (frames < 2) throw InvalidParameter("synth_csi: duration * csi_rate must be >= 2");

  const double c = scene.params.sound_speed;
  const Eigen::Index nf = f.size();
  const Eigen::VectorXd k = f * (two_pi / c);
  const bool fast = uniform_grid(f);
  const double k0 = k[0];
  const double dk = fast ? (k[nf - 1] - k[0]) / static_cast<double>(nf - 1) : 0.0;

  Eigen::RowVectorXcd statics = Eigen::RowVectorXcd::Zero(nf);
  for (const auto& sp : scene.params.static_paths) {
    for (Eigen::Index m = 0; m < nf; ++m) statics[m] += sp.gain * std::polar(1.0, -two_pi * f[m] * sp.delay);
  }

  CsiSeries out;
  out.csi_rate = csi_rate;
  out.subcarrier_frequencies = f;
  out.timestamps.resize(frames);
  out.frames.resize(frames, nf);

  SimRng noise(scene.params.seed ^ 0x9E3779B97F4A7C15ull);
  Eigen::RowVectorXcd row(nf);
  for (Eigen::Index n = 0; n < frames; ++n) {
    const double t = static_cast<double>(n) / csi_rate;
    const double x = scene.displacement(t);
    row = statics;
    for (Eigen::Index i = 0; i < scene.num_scatterers(); ++i) {
      const double len = scene.path_lengths[i] + scene.projection[i] * x;
      if (fast) {
        cd e = std::polar(scene.amplitudes[i], -k0 * len);
        const cd r = std::polar(1.0, -dk * len);
        for (Eigen::Index m = 0; m < nf; ++m) {
          row[m] += e;
          e *= r;
        }
      } else {
        for (Eigen::Index m = 0; m < nf; ++m) row[m] += std::polar(scene.amplitudes[i], -k[m] * len);
      }
    }
    if (scene.noise_power > 0.0) {
      for (Eigen::Index m = 0; m < nf; ++m) row[m] += noise.complex_normal(scene.noise_power);
    }
    out.frames.row(n) = row;
    out.timestamps[n] = t;
  }
  out.metadata["source"] = "synth_csi";
  out.metadata["seed"] = scene.params.seed;
  out.metadata["noise_power"] = scene.noise_power;
  return out;
}

CsiSeries synth_csi(const SimScene& scene, const ModemConfig& cfg, bool interleaved) {
  const double rate = interleaved ? 2.0 * cfg.frame_rate() : cfg.frame_rate();
  CsiSeries out = synth_csi(scene, rate, cfg.subcarrier_frequencies());
  out.metadata["modem"] = cfg;
  out.metadata["interleaved"] = interleaved;
  return out;
}

WaveformResult synth_waveform(const SimScene& scene, const TxWaveform& tx, const WaveformOptions& opts) {
  const ModemConfig& cfg = tx.config;
  const double fs = tx.sample_rate;
  if (!(fs > 0.0) || tx.pcm.empty()) throw InvalidParameter("synth_waveform: empty transmit waveform");
  if (opts.interp_half_width < 2) throw InvalidParameter("synth_waveform: interp_half_width must be >= 2");
  const auto n = static_cast<Eigen::Index>(tx.pcm.size());
  if (static_cast<double>(n) / fs < scene.params.duration - 1.0 / fs) {
    throw InvalidParameter("synth_waveform: transmit waveform shorter than the scene duration");
  }
  const double c = scene.params.sound_speed;
  const double max_code = std::ldexp(1.0, tx.pcm_bits - 1) - 1.0;
  const double min_code = -std::ldexp(1.0, tx.pcm_bits - 1);

  // Complex envelope around the carrier, via the analytic signal.
  const Eigen::Index nfft = next_pow2(n);
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(nfft);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = tx.pcm[static_cast<std::size_t>(i)] * (cfg.full_scale / max_code);
  Eigen::VectorXcd spectrum = dft(x);
  for (Eigen::Index k = 1; k < nfft / 2; ++k) spectrum[k] *= 2.0;
  spectrum.tail(nfft / 2 - 1).setZero();
  Eigen::VectorXcd env = idft(spectrum).head(n);
  {
    CarrierOscillator osc(cfg.carrier_frequency, fs);
    for (Eigen::Index i = 0; i < n; ++i) env[i] *= std::conj(osc.next());
  }

  // Keep every dynamic path length positive over the whole record.
  double x_lo = 0.0, x_hi = 0.0;
  {
    const auto& prof = scene.params.speed_profile;
    for (std::size_t i = 0; i <= prof.size(); ++i) {
      const double t = i < prof.size() ? std::min(prof[i].start, scene.params.duration) : scene.params.duration;
      const double d = scene.displacement(t);
      x_lo = std::min(x_lo, d);
      x_hi = std::max(x_hi, d);
    }
  }
  WaveformResult res;
  double longest = 0.0;
  for (Eigen::Index i = 0; i < scene.num_scatterers(); ++i) {
    const double p = scene.projection[i];
    const double lo = scene.path_lengths[i] + std::min(p * x_lo, p * x_hi);
    const double hi = scene.path_lengths[i] + std::max(p * x_lo, p * x_hi);
    res.bulk_path = std::max(res.bulk_path, -lo);
    longest = std::max(longest, hi);
  }
  longest += res.bulk_path;
  for (const auto& sp : scene.params.static_paths) longest = std::max(longest, sp.delay * c);
  if (longest / c > opts.max_delay) {
    throw InvalidParameter("synth_waveform: path delay " + std::to_string(longest / c) + " s exceeds max_delay " +
                           std::to_string(opts.max_delay) + " s");
  }

  const SincTable interp(opts.interp_half_width, 2048);
  const double cycles_per_metre = cfg.carrier_frequency / c;
  Eigen::VectorXd y(n);
  CarrierOscillator osc(cfg.carrier_frequency, fs);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double disp = scene.displacement(t);
    cd acc{0.0, 0.0};
    for (const auto& sp : scene.params.static_paths) {
      const double len = sp.delay * c;
      const double ph = cycles_per_metre * len;
      acc += std::abs(sp.gain) * interp(env, static_cast<double>(i) - sp.delay * fs) *
             std::polar(1.0, -two_pi * (ph - std::floor(ph)));
    }
    for (Eigen::Index s = 0; s < scene.num_scatterers(); ++s) {
      const double len = scene.path_lengths[s] + scene.projection[s] * disp + res.bulk_path;
      const double ph = cycles_per_metre * len;
      acc += scene.amplitudes[s] * interp(env, static_cast<double>(i) - len / c * fs) *
             std::polar(1.0, -two_pi * (ph - std::floor(ph)));
    }
    y[i] = opts.receive_gain * (acc * osc.next()).real();
  }

  if (opts.snr_db) {
    const double noise_power = y.squaredNorm() / static_cast<double>(n) * std::pow(10.0, -*opts.snr_db / 10.0);
    SimRng rng(scene.params.seed ^ 0xD1B54A32D192ED03ull);
    for (Eigen::Index i = 0; i < n; ++i) {
      // real part of a circular draw with variance 2 sigma^2 is N(0, sigma^2)
      y[i] += rng.complex_normal(2.0 * noise_power).real();
    }
  }

  res.recording.sample_rate = fs;
  res.recording.pcm_bits = tx.pcm_bits;
  res.recording.pcm.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double code = std::round(y[i] / cfg.full_scale * max_code);
    if (code > max_code || code < min_code) {
      ++res.clipped;
      code = std::clamp(code, min_code, max_code);
    }
    res.recording.pcm[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(code);
  }
  return res;
}

SceneParams radial_only_scene(double v, std::uint64_t seed, int num_scatterers, double duration) {
  if (!(v > 0.0)) throw InvalidParameter("radial_only_scene: v must be positive");
  SceneParams p;
  p.directions = DirectionMode::radial;
  p.speed_profile = {{0.0, v}};
  p.seed = seed;
  p.num_scatterers = num_scatterers;
  p.duration = duration;
  return p;
}

SceneParams tangential_only_scene(double v, std::uint64_t seed, int num_scatterers, double duration) {
  if (!(v > 0.0)) throw InvalidParameter("tangential_only_scene: v must be positive");
  SceneParams p = radial_only_scene(v, seed, num_scatterers, duration);
  p.directions = DirectionMode::tangential;
  return p;
}

SceneParams diffuse_symmetric_scene(double v, std::uint64_t seed, int num_scatterers, double duration) {
  if (!(v > 0.0)) throw InvalidParameter("diffuse_symmetric_scene: v must be positive");
  SceneParams p = radial_only_scene(v, seed, num_scatterers, duration);
  p.directions = DirectionMode::uniform_symmetric;
  return p;
}

}  // namespace diffspeed
