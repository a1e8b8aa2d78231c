#pragma once

#include "diffspeed/kasami.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace diffspeed {

inline constexpr double kSoundSpeed = 343.0;  // m/s

struct ModemConfig {
  double audio_sample_rate = 48000.0;   // Hz
  int frame_length = 512;               // samples per probe frame
  double carrier_frequency = 20250.0;   // Hz
  int sequence_degree = 6;
  std::array<int, 2> sequence_indices{0, 1};
  double amplitude = 2.5;               // baseband scale, each branch normalized to unit peak
  double full_scale = 4.0;              // waveform value that maps to PCM full scale
  double lpf_cutoff = 3500.0;           // Hz
  int lpf_taps = 255;
  int pcm_bits = 16;
  double sound_speed = kSoundSpeed;

  int sequence_length() const { return (1 << sequence_degree) - 1; }
  double bin_spacing() const { return audio_sample_rate / frame_length; }
  double occupied_bandwidth() const { return sequence_length() * bin_spacing(); }
  int otdm_delay() const { return frame_length / 2; }
  double frame_rate() const { return audio_sample_rate / frame_length; }

  /// Signed baseband bins -(N-1)/2 .. (N-1)/2, ascending.
  Eigen::VectorXi subcarrier_bins() const;
  /// Absolute subcarrier frequencies in Hz, ascending.
  Eigen::VectorXd subcarrier_frequencies() const;

  /// Throws InvalidParameter when an invariant does not hold.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModemConfig& cfg);
void from_json(const nlohmann::json& j, ModemConfig& cfg);

/// Band-limited probe frame: the sequence spectrum zero-padded to frame_length bins.
struct BasebandFrame {
  Eigen::VectorXcd samples;
  PnSequence source;
};

struct TxWaveform {
  std::vector<std::int32_t> pcm;
  double sample_rate = 0.0;
  int pcm_bits = 16;
  ModemConfig config;
  int delay = 0;               // second-branch delay in samples
  int frames = 0;
  std::size_t clipped = 0;     // samples that hit the PCM rails
};

/// Mono PCM as read from a recording.
struct Recording {
  std::vector<std::int32_t> pcm;
  double sample_rate = 0.0;
  int pcm_bits = 16;
};

Recording as_recording(const TxWaveform& tx);

struct CirFrame {
  Eigen::VectorXcd taps;
  int frame_index = 0;
  int branch = 1;               // 1 or 2
  Eigen::Index start_sample = 0;
};

/// Complex channel frequency response, time x subcarrier.
struct CsiSeries {
  Eigen::MatrixXcd frames;
  double csi_rate = 0.0;                  // Hz
  Eigen::VectorXd subcarrier_frequencies;  // Hz
  Eigen::VectorXd timestamps;              // s
  nlohmann::json metadata = nlohmann::json::object();

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index num_subcarriers() const { return frames.cols(); }
  double duration() const { return csi_rate > 0.0 ? num_frames() / csi_rate : 0.0; }
};

/**
 * Frequency-domain interpolation of a chip sequence into a frame_length-sample
 * baseband frame. Uses the unitary DFT in both directions, so the output energy
 * equals the chip energy (2^degree - 1). The output is real up to rounding.
 */
BasebandFrame band_modulate(const PnSequence& seq, const ModemConfig& cfg);

/**
 * I/Q multiplexing of two probe frames: s(t) = a s1(t) cos(2 pi fc t) - a s2(t) sin(2 pi fc t),
 * with s2 delayed by frame_length/2 samples through a zero prefix. Each branch is scaled
 * to unit peak before the amplitude is applied. Output length is frames * frame_length.
 */
TxWaveform otdm_assemble(const BasebandFrame& b1, const BasebandFrame& b2, const ModemConfig& cfg,
                         int frames);

/// Blackman-windowed sinc lowpass, unit DC gain, odd tap count.
Eigen::VectorXd design_lowpass(double cutoff, double sample_rate, int taps);

/// Complex baseband I + jQ of a recording, lowpass filtered with zero group delay.
Eigen::VectorXcd demodulate(const Recording& rec, const ModemConfig& cfg);

/**
 * Per-frame circular correlation of the baseband against a probe template,
 * normalized by the template energy and by the transmitter's branch gain
 * (amplitude / template peak), so a unit direct path gives a unit tap on either
 * branch. Branch 2 frames start frame_length/2 later
 * and carry the quadrature component, so their taps are rotated by -j.
 */
std::vector<CirFrame> estimate_cir(const Eigen::VectorXcd& baseband, const BasebandFrame& tmpl,
                                   const ModemConfig& cfg, int branch = 1, Eigen::Index offset = 0);
std::vector<CirFrame> estimate_cir(const Eigen::VectorXcd& baseband, const PnSequence& seq,
                                   const ModemConfig& cfg);

/// Frequency response at the occupied subcarriers (unscaled DFT of the taps).
Eigen::VectorXcd cir_to_csi(const CirFrame& cir, const ModemConfig& cfg);

/**
 * CSI a unit, zero-delay channel produces on one branch. Each branch window also
 * sees the other branch (I/Q overlap), which leaves a fixed per-subcarrier gain
 * that differs between branches; dividing by this response removes it.
 */
Eigen::VectorXcd branch_response(const ModemConfig& cfg, int branch);

/// Stacks one branch's CIR frames into a CsiSeries at the frame rate, optionally equalized by branch_response.
CsiSeries csi_from_cir(const std::vector<CirFrame>& cirs, const ModemConfig& cfg, bool equalize = false);

/// Alternating merge [H1(1), H2(1), ..., H1(n), H2(n)]; the CSI rate doubles.
CsiSeries otdm_interleave(const CsiSeries& h1, const CsiSeries& h2);

/// Largest speed whose Doppler shift stays below csi_rate / 2.
double max_measurable_speed(double csi_rate, double carrier, double sound_speed = kSoundSpeed);

/// Largest CSI rate that avoids inter-frame mixing for a propagation path of the given length.
double csi_rate_limit(double path_length, double sound_speed = kSoundSpeed);

struct DecodeOptions {
  bool acquire_sync = true;
  double sync_seconds = 1.0;
  int branch = 0;  // 0: both branches interleaved; 1 or 2: that branch alone at the frame rate
};

struct DecodeResult {
  CsiSeries csi;
  Eigen::Index sync_offset = 0;
  std::size_t warnings = 0;
};

/// Demodulate, estimate both branches' CIRs and interleave them into one CSI series.
DecodeResult decode_recording(const Recording& rec, const ModemConfig& cfg, const DecodeOptions& opts = {});

/// Continuous-phase carrier; `next()` returns exp(j phase) and advances one sample.
class CarrierOscillator {
 public:
  CarrierOscillator(double frequency, double sample_rate);
  std::complex<double> next();
  void reset() { cycles_ = 0.0; }

 private:
  double increment_;
  double cycles_ = 0.0;
};

}  // namespace diffspeed
