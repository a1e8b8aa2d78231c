#pragma once

#include "diffspeed/diffusion.hpp"
#include "diffspeed/modem.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace diffspeed {

enum class DirectionMode { uniform, radial, tangential, uniform_symmetric };
enum class AmplitudeMode { rayleigh, constant };

std::string to_string(DirectionMode m);
DirectionMode parse_direction_mode(std::string_view s);
std::string to_string(AmplitudeMode m);
AmplitudeMode parse_amplitude_mode(std::string_view s);

/// Speed `speed` from time `start` until the next segment begins.
struct SpeedSegment {
  double start = 0.0;  // s
  double speed = 0.0;  // m/s
};

struct StaticPath {
  double delay = 0.0;                 // s
  std::complex<double> gain{1.0, 0.0};
};

/// Default direct path: 10 dB above the total dynamic power, 0.3 m long.
StaticPath default_direct_path(double sound_speed = kSoundSpeed);

struct SceneParams {
  ModelKind geometry = ModelKind::spherical3d;
  int num_scatterers = 1000;
  std::vector<SpeedSegment> speed_profile{{0.0, 0.0}};
  DirectionMode directions = DirectionMode::uniform;
  AmplitudeMode amplitudes = AmplitudeMode::rayleigh;
  double path_length_min = 0.5;   // m
  double path_length_max = 3.5;   // m
  double dynamic_gain = 1.0;      // sqrt of total dynamic power
  std::vector<StaticPath> static_paths{default_direct_path()};
  std::optional<double> snr_db = 20.0;  // dynamic power over per-subcarrier noise variance; empty = noiseless
  std::uint64_t seed = 0;
  double duration = 5.0;          // s
  double sound_speed = kSoundSpeed;

  void validate() const;
};

/// A materialised scene: every random draw is fixed here.
struct SimScene {
  SceneParams params;
  Eigen::Matrix3Xd directions;    // unit vectors, one column per scatterer
  Eigen::VectorXd projection;     // cos(theta): direction . motion axis (x)
  Eigen::VectorXd amplitudes;
  Eigen::VectorXd path_lengths;   // m at t = 0
  double noise_power = 0.0;       // per-subcarrier complex noise variance

  Eigen::Index num_scatterers() const { return amplitudes.size(); }
  double speed_at(double t) const;
  /// Distance travelled along the motion axis since t = 0.
  double displacement(double t) const;
  double max_speed() const;
};

/// Deterministic draws; identical params give identical scenes on every platform.
SimScene make_scene(const SceneParams& params);

/**
 * H(f, t) = sum_i a_i exp(-j k_f (d_i + x(t) cos theta_i)) + sum_s g_s exp(-j 2 pi f delay_s) + noise,
 * at t = n / csi_rate for n < floor(duration * csi_rate). Uniformly spaced grids take a
 * recurrence over subcarriers instead of one complex exponential per entry.
 */
CsiSeries synth_csi(const SimScene& scene, double csi_rate, const Eigen::VectorXd& subcarriers);

/// The default modem subcarrier grid at the OTDM rate.
CsiSeries synth_csi(const SimScene& scene, const ModemConfig& cfg = {}, bool interleaved = true);

struct WaveformOptions {
  double receive_gain = 0.1;              // overall channel scale so the mix stays below full scale
  std::optional<double> snr_db;           // relative to total received power; empty = noiseless
  double max_delay = 0.5;                 // s; longer paths are rejected
  int interp_half_width = 6;              // windowed-sinc taps per side
};

struct WaveformResult {
  Recording recording;
  std::size_t clipped = 0;
  double bulk_path = 0.0;   // m added to every dynamic path to keep lengths positive
};

/**
 * Every path as a time-varying fractional delay of the transmit waveform.
 * The delay is applied to the complex envelope around the carrier (windowed-sinc
 * interpolation) and the carrier phase is applied exactly. Static paths use |g|.
 */
WaveformResult synth_waveform(const SimScene& scene, const TxWaveform& tx, const WaveformOptions& opts = {});

SceneParams radial_only_scene(double v, std::uint64_t seed = 1, int num_scatterers = 200, double duration = 5.0);
SceneParams tangential_only_scene(double v, std::uint64_t seed = 1, int num_scatterers = 200, double duration = 5.0);
/// Uniform spherical directions in antipodal pairs: zero net radial projection.
SceneParams diffuse_symmetric_scene(double v, std::uint64_t seed = 1, int num_scatterers = 1000,
                                    double duration = 5.0);

/// Uniform draws on [0, 1) from the top 53 bits; normal draws by Box-Muller.
class SimRng {
 public:
  explicit SimRng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Circular complex Gaussian with E|z|^2 = variance.
  std::complex<double> complex_normal(double variance);
  double rayleigh(double sigma);

 private:
  std::mt19937_64 gen_;
};

}  // namespace diffspeed
