#include "diffspeed/modem.hpp"

#include "diffspeed/errors.hpp"
#include "diffspeed/fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

namespace diffspeed {

using cd = std::complex<double>;

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

Eigen::Index frame_bin(int signed_bin, int frame_length) {
  return (signed_bin % frame_length + frame_length) % frame_length;
}

}  // namespace

Eigen::VectorXi ModemConfig::subcarrier_bins() const {
  const int n = sequence_length();
  const int half = (n - 1) / 2;
  return Eigen::VectorXi::LinSpaced(n, -half, n - 1 - half);
}

Eigen::VectorXd ModemConfig::subcarrier_frequencies() const {
  return (carrier_frequency + subcarrier_bins().cast<double>().array() * bin_spacing()).matrix();
}

void ModemConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidParameter("modem config: " + what); };
  if (!(audio_sample_rate > 0.0)) fail("audio_sample_rate must be positive");
  if (!is_pow2(frame_length)) fail("frame_length must be a power of two, got " + std::to_string(frame_length));
  if (sequence_degree % 2 != 0 || sequence_degree < 4 || sequence_degree > 16) {
    fail("sequence_degree must be even and within [4, 16]");
  }
  if (sequence_length() >= frame_length) fail("sequence longer than frame");
  const int set = 1 << (sequence_degree / 2);
  for (int idx : sequence_indices) {
    if (idx < 0 || idx >= set) fail("sequence index outside the Kasami small set");
  }
  if (sequence_indices[0] == sequence_indices[1]) fail("the two OTDM branches need distinct sequences");
  if (carrier_frequency + occupied_bandwidth() / 2.0 > audio_sample_rate / 2.0) {
    fail("carrier + bandwidth/2 exceeds Nyquist");
  }
  if (carrier_frequency - occupied_bandwidth() / 2.0 <= 0.0) fail("band extends below DC");
  if (!(amplitude >= 0.0)) fail("amplitude must be non-negative");
  if (!(full_scale > 0.0)) fail("full_scale must be positive");
  if (!(lpf_cutoff > 0.0) || lpf_cutoff >= audio_sample_rate / 2.0) fail("lpf_cutoff outside (0, fs/2)");
  if (lpf_taps < 3 || lpf_taps % 2 == 0) fail("lpf_taps must be odd and >= 3");
  if (pcm_bits < 2 || pcm_bits > 24) fail("pcm_bits must be within [2, 24]");
  if (!(sound_speed > 0.0)) fail("sound_speed must be positive");
}

void to_json(nlohmann::json& j, const ModemConfig& c) {
  j = nlohmann::json{{"audio_sample_rate", c.audio_sample_rate},
                     {"frame_length", c.frame_length},
                     {"carrier_frequency", c.carrier_frequency},
                     {"sequence_degree", c.sequence_degree},
                     {"sequence_indices", c.sequence_indices},
                     {"amplitude", c.amplitude},
                     {"full_scale", c.full_scale},
                     {"lpf_cutoff", c.lpf_cutoff},
                     {"lpf_taps", c.lpf_taps},
                     {"pcm_bits", c.pcm_bits},
                     {"sound_speed", c.sound_speed}};
}

void from_json(const nlohmann::json& j, ModemConfig& c) {
  // Every field is optional; absent keys keep their defaults.
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("audio_sample_rate", c.audio_sample_rate);
  get("frame_length", c.frame_length);
  get("carrier_frequency", c.carrier_frequency);
  get("sequence_degree", c.sequence_degree);
  get("sequence_indices", c.sequence_indices);
  get("amplitude", c.amplitude);
  get("full_scale", c.full_scale);
  get("lpf_cutoff", c.lpf_cutoff);
  get("lpf_taps", c.lpf_taps);
  get("pcm_bits", c.pcm_bits);
  get("sound_speed", c.sound_speed);
}

Recording as_recording(const TxWaveform& tx) { return Recording{tx.pcm, tx.sample_rate, tx.pcm_bits}; }

CarrierOscillator::CarrierOscillator(double frequency, double sample_rate)
    : increment_(frequency / sample_rate) {}

cd CarrierOscillator::next() {
  const double phase = 2.0 * std::numbers::pi * cycles_;
  cycles_ += increment_;
  cycles_ -= std::floor(cycles_);
  return {std::cos(phase), std::sin(phase)};
}

BasebandFrame band_modulate(const PnSequence& seq, const ModemConfig& cfg) {
  const Eigen::Index n = seq.length();
  const int ns = cfg.frame_length;
  if (n == 0) throw InvalidParameter("band_modulate: empty sequence");
  if (n >= ns) {
    throw InvalidParameter("band_modulate: sequence of " + std::to_string(n) + " chips does not fit a " +
                           std::to_string(ns) + "-sample frame");
  }
  const Eigen::VectorXcd spectrum = fft_unitary(seq.chips.cast<cd>());
  const Eigen::Index positive = (n + 1) / 2;  // DC and positive bins
  const Eigen::Index negative = n - positive;

  Eigen::VectorXcd padded = Eigen::VectorXcd::Zero(ns);
  padded.head(positive) = spectrum.head(positive);
  padded.tail(negative) = spectrum.tail(negative);
  return BasebandFrame{ifft_unitary(padded), seq};
}

TxWaveform otdm_assemble(const BasebandFrame& b1, const BasebandFrame& b2, const ModemConfig& cfg,
                         int frames) {
  cfg.validate();
  if (frames < 1) throw InvalidParameter("otdm_assemble: frames must be >= 1");
  if (b1.source == b2.source) throw InvalidParameter("otdm_assemble: both branches carry the same sequence");
  const int ns = cfg.frame_length;
  if (b1.samples.size() != ns || b2.samples.size() != ns) {
    throw InvalidParameter("otdm_assemble: baseband frames must have frame_length samples");
  }

  const Eigen::VectorXd s1 = b1.samples.real();
  const Eigen::VectorXd s2 = b2.samples.real();
  const double p1 = s1.cwiseAbs().maxCoeff();
  const double p2 = s2.cwiseAbs().maxCoeff();
  const double g1 = p1 > 0.0 ? cfg.amplitude / p1 : 0.0;
  const double g2 = p2 > 0.0 ? cfg.amplitude / p2 : 0.0;

  const int delay = cfg.otdm_delay();
  const std::int64_t total = static_cast<std::int64_t>(frames) * ns;
  const double max_code = std::ldexp(1.0, cfg.pcm_bits - 1) - 1.0;
  const double min_code = -std::ldexp(1.0, cfg.pcm_bits - 1);

  TxWaveform tx;
  tx.sample_rate = cfg.audio_sample_rate;
  tx.pcm_bits = cfg.pcm_bits;
  tx.config = cfg;
  tx.delay = delay;
  tx.frames = frames;
  tx.pcm.resize(static_cast<std::size_t>(total));

  CarrierOscillator osc(cfg.carrier_frequency, cfg.audio_sample_rate);
  for (std::int64_t n = 0; n < total; ++n) {
    const cd carrier = osc.next();
    const double i_part = g1 * s1[n % ns];
    const double q_part = n >= delay ? g2 * s2[(n - delay) % ns] : 0.0;
    const double value = i_part * carrier.real() - q_part * carrier.imag();
    double code = std::round(value / cfg.full_scale * max_code);
    if (code > max_code || code < min_code) {
      ++tx.clipped;
      code = std::clamp(code, min_code, max_code);
    }
    tx.pcm[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(code);
  }
  return tx;
}

Eigen::VectorXd design_lowpass(double cutoff, double sample_rate, int taps) {
  if (taps < 3 || taps % 2 == 0) throw InvalidParameter("design_lowpass: taps must be odd and >= 3");
  if (!(cutoff > 0.0) || cutoff >= sample_rate / 2.0) throw InvalidParameter("design_lowpass: bad cutoff");
  const double fc = cutoff / sample_rate;
  const int mid = taps / 2;
  Eigen::VectorXd h(taps);
  for (int k = 0; k < taps; ++k) {
    const double m = k - mid;
    const double ideal = (m == 0) ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    const double x = 2.0 * std::numbers::pi * k / (taps - 1);
    const double window = 0.42 - 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x);
    h[k] = ideal * window;
  }
  return h / h.sum();
}

Eigen::VectorXcd demodulate(const Recording& rec, const ModemConfig& cfg) {
  cfg.validate();
  if (rec.sample_rate != cfg.audio_sample_rate) {
    throw InvalidParameter("demodulate: recording sample rate " + std::to_string(rec.sample_rate) +
                           " Hz does not match configured " + std::to_string(cfg.audio_sample_rate) + " Hz");
  }
  const auto n = static_cast<Eigen::Index>(rec.pcm.size());
  const double scale = cfg.full_scale / (std::ldexp(1.0, rec.pcm_bits - 1) - 1.0);

  Eigen::VectorXcd mixed(n);
  CarrierOscillator osc(cfg.carrier_frequency, cfg.audio_sample_rate);
  for (Eigen::Index i = 0; i < n; ++i) {
    mixed[i] = 2.0 * scale * rec.pcm[static_cast<std::size_t>(i)] * std::conj(osc.next());
  }

  const Eigen::VectorXd h = design_lowpass(cfg.lpf_cutoff, cfg.audio_sample_rate, cfg.lpf_taps);
  const Eigen::Index mid = h.size() / 2;
  Eigen::VectorXcd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // y[i] = sum_k h[k] x[i + mid - k], zero outside the record
    const Eigen::Index k_lo = std::max<Eigen::Index>(0, i + mid - (n - 1));
    const Eigen::Index k_hi = std::min<Eigen::Index>(h.size() - 1, i + mid);
    cd acc{0.0, 0.0};
    for (Eigen::Index k = k_lo; k <= k_hi; ++k) acc += h[k] * mixed[i + mid - k];
    out[i] = acc;
  }
  return out;
}

std::vector<CirFrame> estimate_cir(const Eigen::VectorXcd& baseband, const BasebandFrame& tmpl,
                                   const ModemConfig& cfg, int branch, Eigen::Index offset) {
  const int ns = cfg.frame_length;
  if (baseband.size() == 0) throw InvalidParameter("estimate_cir: empty baseband stream");
  if (branch != 1 && branch != 2) throw InvalidParameter("estimate_cir: branch must be 1 or 2");
  if (tmpl.samples.size() != ns) throw InvalidParameter("estimate_cir: template length != frame_length");
  if (offset < 0) throw InvalidParameter("estimate_cir: negative offset");

  const Eigen::VectorXcd t_spec = dft(tmpl.samples);
  const double energy = tmpl.samples.squaredNorm();
  if (!(energy > 0.0)) throw InvalidParameter("estimate_cir: template has no energy");
  // undo the per-branch unit-peak scaling of the transmitter so both branches see the same channel
  const double peak = tmpl.samples.real().cwiseAbs().maxCoeff();
  const double scale = cfg.amplitude > 0.0 ? peak / (cfg.amplitude * energy) : 1.0 / energy;
  const cd rotation = branch == 1 ? cd{1.0, 0.0} : cd{0.0, -1.0};

  std::vector<CirFrame> out;
  Eigen::Index start = offset + (branch == 2 ? cfg.otdm_delay() : 0);
  for (int m = 0; start + ns <= baseband.size(); ++m, start += ns) {
    const Eigen::VectorXcd z = dft(baseband.segment(start, ns));
    const Eigen::VectorXcd prod = z.cwiseProduct(t_spec.conjugate());
    CirFrame frame;
    frame.taps = idft(prod) * (rotation * scale);
    frame.frame_index = m;
    frame.branch = branch;
    frame.start_sample = start;
    out.push_back(std::move(frame));
  }
  if (out.empty()) throw InvalidParameter("estimate_cir: stream shorter than one frame");
  return out;
}

std::vector<CirFrame> estimate_cir(const Eigen::VectorXcd& baseband, const PnSequence& seq,
                                   const ModemConfig& cfg) {
  return estimate_cir(baseband, band_modulate(seq, cfg), cfg, 1, 0);
}

Eigen::VectorXcd cir_to_csi(const CirFrame& cir, const ModemConfig& cfg) {
  const int ns = cfg.frame_length;
  if (cir.taps.size() != ns) throw InvalidParameter("cir_to_csi: taps length != frame_length");
  const Eigen::VectorXcd spectrum = dft(cir.taps);
  const Eigen::VectorXi bins = cfg.subcarrier_bins();
  Eigen::VectorXcd row(bins.size());
  for (Eigen::Index i = 0; i < bins.size(); ++i) row[i] = spectrum[frame_bin(bins[i], ns)];
  return row;
}

Eigen::VectorXcd branch_response(const ModemConfig& cfg, int branch) {
  cfg.validate();
  const int ns = cfg.frame_length;
  const Eigen::VectorXd s1 = band_modulate(generate_kasami(cfg.sequence_degree, cfg.sequence_indices[0]), cfg).samples.real();
  const BasebandFrame t2 = band_modulate(generate_kasami(cfg.sequence_degree, cfg.sequence_indices[1]), cfg);
  const Eigen::VectorXd s2 = t2.samples.real();
  const double g1 = 1.0 / s1.cwiseAbs().maxCoeff();
  const double g2 = 1.0 / s2.cwiseAbs().maxCoeff();
  // steady-state baseband of a unit channel; amplitude cancels in the CIR scaling
  const int delay = cfg.otdm_delay();
  Eigen::VectorXcd bb(2 * ns);
  for (int n = 0; n < 2 * ns; ++n) {
    bb[n] = cd{g1 * s1[n % ns], g2 * s2[((n - delay) % ns + ns) % ns]} * cfg.amplitude;
  }
  const BasebandFrame t1{s1.cast<cd>(), generate_kasami(cfg.sequence_degree, cfg.sequence_indices[0])};
  return cir_to_csi(estimate_cir(bb, branch == 1 ? t1 : t2, cfg, branch, 0).front(), cfg);
}

CsiSeries csi_from_cir(const std::vector<CirFrame>& cirs, const ModemConfig& cfg, bool equalize) {
  CsiSeries s;
  s.csi_rate = cfg.frame_rate();
  s.subcarrier_frequencies = cfg.subcarrier_frequencies();
  s.frames.resize(static_cast<Eigen::Index>(cirs.size()), s.subcarrier_frequencies.size());
  s.timestamps.resize(static_cast<Eigen::Index>(cirs.size()));
  std::array<Eigen::VectorXcd, 2> response;
  if (equalize) response = {branch_response(cfg, 1), branch_response(cfg, 2)};
  for (std::size_t i = 0; i < cirs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    s.frames.row(r) = cir_to_csi(cirs[i], cfg).transpose();
    if (equalize) s.frames.row(r).array() /= response[cirs[i].branch - 1].transpose().array();
    s.timestamps[r] = static_cast<double>(cirs[i].start_sample) / cfg.audio_sample_rate;
  }
  s.metadata["modem"] = cfg;
  s.metadata["interleaved"] = false;
  return s;
}

CsiSeries otdm_interleave(const CsiSeries& h1, const CsiSeries& h2) {
  if (h1.num_frames() != h2.num_frames()) {
    throw InvalidParameter("otdm_interleave: branch frame counts differ (" + std::to_string(h1.num_frames()) +
                           " vs " + std::to_string(h2.num_frames()) + ")");
  }
  if (h1.subcarrier_frequencies.size() != h2.subcarrier_frequencies.size() ||
      !h1.subcarrier_frequencies.isApprox(h2.subcarrier_frequencies, 1e-12)) {
    throw InvalidParameter("otdm_interleave: subcarrier grids differ");
  }
  if (h1.csi_rate != h2.csi_rate || !(h1.csi_rate > 0.0)) {
    throw InvalidParameter("otdm_interleave: branch CSI rates differ");
  }
  const double half_period = 0.5 / h1.csi_rate;
  for (Eigen::Index i = 0; i < h1.num_frames(); ++i) {
    if (std::abs(h2.timestamps[i] - h1.timestamps[i] - half_period) > 1e-9) {
      throw InvalidParameter("otdm_interleave: branch 2 is not offset by half a frame");
    }
  }

  const Eigen::Index n = h1.num_frames();
  CsiSeries out;
  out.csi_rate = 2.0 * h1.csi_rate;
  out.subcarrier_frequencies = h1.subcarrier_frequencies;
  out.frames.resize(2 * n, h1.num_subcarriers());
  out.timestamps.resize(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.frames.row(2 * i) = h1.frames.row(i);
    out.frames.row(2 * i + 1) = h2.frames.row(i);
    out.timestamps[2 * i] = h1.timestamps[i];
    out.timestamps[2 * i + 1] = h2.timestamps[i];
  }
  out.metadata = h1.metadata;
  out.metadata["interleaved"] = true;
  return out;
}

double max_measurable_speed(double csi_rate, double carrier, double sound_speed) {
  if (carrier <= 0.0) throw InvalidParameter("max_measurable_speed: carrier must be positive");
  if (csi_rate < 0.0) throw InvalidParameter("max_measurable_speed: negative CSI rate");
  return csi_rate / (2.0 * carrier) * sound_speed;
}

double csi_rate_limit(double path_length, double sound_speed) {
  if (!(path_length > 0.0)) throw InvalidParameter("csi_rate_limit: path length must be positive");
  return sound_speed / path_length;
}

DecodeResult decode_recording(const Recording& rec, const ModemConfig& cfg, const DecodeOptions& opts) {
  cfg.validate();
  if (opts.branch < 0 || opts.branch > 2) throw InvalidParameter("decode: branch must be 0, 1 or 2");
  const int ns = cfg.frame_length;
  const Eigen::VectorXcd baseband = demodulate(rec, cfg);
  if (baseband.size() < 2 * ns) throw InvalidParameter("decode: recording shorter than two frames");

  const BasebandFrame t1 = band_modulate(generate_kasami(cfg.sequence_degree, cfg.sequence_indices[0]), cfg);
  const BasebandFrame t2 = band_modulate(generate_kasami(cfg.sequence_degree, cfg.sequence_indices[1]), cfg);

  DecodeResult result;
  if (opts.acquire_sync) {
    // Strongest tap of the branch-1 correlation, accumulated over the first sync_seconds.
    const auto sync_len = std::min<Eigen::Index>(
        baseband.size(), std::max<Eigen::Index>(ns, static_cast<Eigen::Index>(opts.sync_seconds * cfg.audio_sample_rate)));
    const auto cirs = estimate_cir(baseband.head(sync_len), t1, cfg, 1, 0);
    Eigen::VectorXd energy = Eigen::VectorXd::Zero(ns);
    for (const auto& c : cirs) energy += c.taps.cwiseAbs2();
    Eigen::Index peak = 0;
    energy.maxCoeff(&peak);
    result.sync_offset = peak;
  }

  auto c1 = estimate_cir(baseband, t1, cfg, 1, result.sync_offset);
  auto c2 = estimate_cir(baseband, t2, cfg, 2, result.sync_offset);
  const std::size_t n = std::min(c1.size(), c2.size());
  if (c1.size() != n || c2.size() != n) {
    // Final branch-1 frame has no complete branch-2 partner.
    c1.resize(n);
    c2.resize(n);
  }
  const Eigen::Index used = result.sync_offset + static_cast<Eigen::Index>(n) * ns + cfg.otdm_delay();
  if (used < baseband.size() && (baseband.size() - result.sync_offset) % ns != 0) ++result.warnings;

  if (opts.branch == 0) {
    result.csi = otdm_interleave(csi_from_cir(c1, cfg, true), csi_from_cir(c2, cfg, true));
  } else {
    result.csi = csi_from_cir(opts.branch == 1 ? c1 : c2, cfg, true);
  }
  result.csi.metadata["branch"] = opts.branch;
  result.csi.metadata["sync_offset"] = result.sync_offset;
  return result;
}

}  // namespace diffspeed
