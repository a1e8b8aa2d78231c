#include "diffspeed/estimator.hpp"

#include "diffspeed/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace diffspeed {

namespace {

double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Linear interpolation of row at fractional index x (0 <= x <= size-1).
double interp(const Eigen::Ref<const Eigen::VectorXd>& row, double x) {
  const Eigen::Index last = row.size() - 1;
  if (x <= 0.0) return row[0];
  if (x >= static_cast<double>(last)) return row[last];
  const auto i = static_cast<Eigen::Index>(std::floor(x));
  const double t = x - static_cast<double>(i);
  return row[i] + t * (row[i + 1] - row[i]);
}

Eigen::VectorXd moving_average3(const Eigen::VectorXd& x) {
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 1; i + 1 < x.size(); ++i) y[i] = (x[i - 1] + x[i] + x[i + 1]) / 3.0;
  return y;
}

struct Sample {
  double pos;   // aligned lag, in lag_step units
  double value;
  double weight;
};

// Weighted local quadratic regression evaluated on grid m / upsample, m = 0..M.
Eigen::VectorXd local_regression(std::vector<Sample> pts, Eigen::Index m_count, int upsample,
                                 const EstimatorConfig& cfg) {
  std::sort(pts.begin(), pts.end(), [](const Sample& a, const Sample& b) { return a.pos < b.pos; });
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(m_count, nan);
  out[0] = 1.0;

  for (Eigen::Index m = 1; m < m_count; ++m) {
    const double t = static_cast<double>(m) / upsample;
    const double h = std::max(cfg.loess_bandwidth, cfg.loess_bandwidth_slope * t);
    auto lo = std::lower_bound(pts.begin(), pts.end(), t - 3.0 * h,
                               [](const Sample& s, double v) { return s.pos < v; });
    auto hi = std::upper_bound(pts.begin(), pts.end(), t + 3.0 * h,
                               [](double v, const Sample& s) { return v < s.pos; });
    if (hi - lo < cfg.loess_min_points) continue;
    if (lo->pos > t || (hi - 1)->pos < t) continue;  // no support on one side

    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (auto it = lo; it != hi; ++it) {
      const double u = (it->pos - t) / h;
      const double w = it->weight * std::exp(-0.5 * u * u);
      const Eigen::Vector3d basis(1.0, u, u * u);
      a.noalias() += w * basis * basis.transpose();
      b += w * it->value * basis;
    }
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(a);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) continue;
    out[m] = ldlt.solve(b)[0];
  }

  // Fill unsupported points linearly from their neighbours.
  Eigen::Index prev = 0;
  for (Eigen::Index m = 1; m < m_count; ++m) {
    if (std::isnan(out[m])) continue;
    for (Eigen::Index k = prev + 1; k < m; ++k) {
      const double t = static_cast<double>(k - prev) / static_cast<double>(m - prev);
      out[k] = out[prev] + t * (out[m] - out[prev]);
    }
    prev = m;
  }
  for (Eigen::Index k = prev + 1; k < m_count; ++k) out[k] = out[prev];
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace

void EstimatorConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidParameter("estimator config: " + what); };
  if (!(window > 0.0)) fail("window must be positive");
  if (!(step > 0.0) || step > window) fail("step must satisfy 0 < step <= window");
  if (!(max_lag > 0.0) || max_lag >= window) fail("max_lag must satisfy 0 < max_lag < window");
  if (f_ref < 0.0) fail("f_ref must be >= 0 (0 selects the carrier)");
  if (!(zcc_threshold >= 0.0)) fail("zcc_threshold must be >= 0");
  if (!(prominence_floor > 0.0)) fail("prominence_floor must be positive");
  if (!(sigmoid_level > 0.5 && sigmoid_level < 1.0)) fail("sigmoid_level must lie in (0.5, 1)");
  if (upsample < 1) fail("upsample must be >= 1");
  if (!(loess_bandwidth > 0.0) || loess_bandwidth_slope < 0.0) fail("bad local regression bandwidth");
  if (loess_min_points < 3) fail("loess_min_points must be >= 3");
  if (!(loess_weight_mix >= 0.0 && loess_weight_mix <= 1.0)) fail("loess_weight_mix must lie in [0, 1]");
  if (!(sound_speed > 0.0)) fail("sound_speed must be positive");
}

void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = nlohmann::json{{"window", c.window},
                     {"step", c.step},
                     {"max_lag", c.max_lag},
                     {"model", to_string(c.model)},
                     {"f_ref", c.f_ref},
                     {"zcc_threshold", c.zcc_threshold},
                     {"zcc_floor", c.zcc_floor},
                     {"zcc_floor_sigmas", c.zcc_floor_sigmas},
                     {"gate_on_motion", c.gate_on_motion},
                     {"prominence_floor", c.prominence_floor},
                     {"sigmoid_level", c.sigmoid_level},
                     {"linear_r2_max", c.linear_r2_max},
                     {"zigzag_max", c.zigzag_max},
                     {"upsample", c.upsample},
                     {"loess_bandwidth", c.loess_bandwidth},
                     {"loess_bandwidth_slope", c.loess_bandwidth_slope},
                     {"loess_min_points", c.loess_min_points},
                     {"loess_weight_mix", c.loess_weight_mix},
                     {"sound_speed", c.sound_speed}};
}

void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("window", c.window);
  get("step", c.step);
  get("max_lag", c.max_lag);
  if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
  get("f_ref", c.f_ref);
  get("zcc_threshold", c.zcc_threshold);
  get("zcc_floor", c.zcc_floor);
  get("zcc_floor_sigmas", c.zcc_floor_sigmas);
  get("gate_on_motion", c.gate_on_motion);
  get("prominence_floor", c.prominence_floor);
  get("sigmoid_level", c.sigmoid_level);
  get("linear_r2_max", c.linear_r2_max);
  get("zigzag_max", c.zigzag_max);
  get("upsample", c.upsample);
  get("loess_bandwidth", c.loess_bandwidth);
  get("loess_bandwidth_slope", c.loess_bandwidth_slope);
  get("loess_min_points", c.loess_min_points);
  get("loess_weight_mix", c.loess_weight_mix);
  get("sound_speed", c.sound_speed);
}

Eigen::MatrixXd channel_power(const Eigen::MatrixXcd& frames) {
  if (frames.rows() < 2) throw InvalidParameter("channel_power: window needs at least two frames");
  Eigen::MatrixXd g = frames.cwiseAbs2();
  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    auto col = g.col(c);
    const double hi = col.maxCoeff();
    const double lo = col.minCoeff();
    if (hi - lo <= 1e-12 * hi) {
      col.setZero();
    } else {
      col.array() -= col.mean();
    }
  }
  return g;
}

Eigen::MatrixXd channel_power(const CsiSeries& csi, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > csi.num_frames()) {
    throw InvalidParameter("channel_power: window outside the series");
  }
  return channel_power(csi.frames.middleRows(first, count));
}

AcfMatrix compute_acf(const Eigen::MatrixXd& g, Eigen::Index max_lag_frames, double lag_step,
                      const Eigen::VectorXd& frequencies, double window_start) {
  const Eigen::Index n = g.rows();
  if (n < 2) throw InvalidParameter("compute_acf: need at least two frames");
  if (max_lag_frames < 1 || 2 * max_lag_frames > n) {
    throw InvalidParameter("compute_acf: window must span at least twice max_lag (" + std::to_string(n) +
                           " frames for max lag " + std::to_string(max_lag_frames) + ")");
  }
  if (frequencies.size() != g.cols()) throw InvalidParameter("compute_acf: frequency grid size mismatch");

  AcfMatrix acf;
  acf.values = Eigen::MatrixXd::Zero(g.cols(), max_lag_frames + 1);
  acf.lag_step = lag_step;
  acf.window_start = window_start;
  acf.subcarrier_frequencies = frequencies;
  acf.lag_scale = Eigen::VectorXd::Ones(g.cols());
  acf.valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(g.cols(), false);
  acf.num_frames = n;

  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    const auto x = g.col(c);
    const double r0 = x.squaredNorm();
    if (!(r0 > 0.0) || !std::isfinite(r0)) continue;
    acf.valid[c] = true;
    acf.values(c, 0) = 1.0;
    for (Eigen::Index j = 1; j <= max_lag_frames; ++j) {
      const double r = x.head(n - j).dot(x.tail(n - j)) / r0;
      acf.values(c, j) = std::clamp(r, -1.0, 1.0);
    }
  }
  return acf;
}

int zero_crossing_count(const Eigen::Ref<const Eigen::VectorXd>& row, double floor) {
  int count = 0;
  int last_sign = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (std::abs(row[j]) <= floor) continue;
    const int s = row[j] > 0.0 ? 1 : -1;
    if (last_sign != 0 && s != last_sign) ++count;
    last_sign = s;
  }
  return count;
}

double zcc_floor(const EstimatorConfig& cfg, Eigen::Index frames) {
  const double adaptive = frames > 0 ? cfg.zcc_floor_sigmas / std::sqrt(static_cast<double>(frames)) : 0.0;
  return std::max(cfg.zcc_floor, adaptive);
}

double mean_zero_crossings(const AcfMatrix& acf, const EstimatorConfig& cfg) {
  const double floor = zcc_floor(cfg, acf.num_frames);
  double total = 0.0;
  Eigen::Index rows = 0;
  for (Eigen::Index i = 0; i < acf.rows(); ++i) {
    if (!acf.valid[i]) continue;
    total += zero_crossing_count(acf.values.row(i).transpose(), floor);
    ++rows;
  }
  return rows > 0 ? total / static_cast<double>(rows) : 0.0;
}

bool motion_detect(const AcfMatrix& acf, const EstimatorConfig& cfg) {
  return acf.valid_count() > 0 && mean_zero_crossings(acf, cfg) > cfg.zcc_threshold;
}

bool is_outlier_row(const Eigen::Ref<const Eigen::VectorXd>& row, const EstimatorConfig& cfg) {
  const Eigen::Index n = row.size() - 1;  // lags >= 1
  if (n < 4) return false;
  const Eigen::VectorXd y = row.tail(n);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
  const double ym = y.mean();
  const double xm = x.mean();
  const double sxx = (x.array() - xm).square().sum();
  const double sxy = ((x.array() - xm) * (y.array() - ym)).sum();
  const double syy = (y.array() - ym).square().sum();
  if (!(syy > 0.0)) return true;  // flat
  const double r2 = sxy * sxy / (sxx * syy);
  if (r2 >= cfg.linear_r2_max) return true;

  int alternations = 0;
  int pairs = 0;
  for (Eigen::Index j = 0; j + 2 < n; ++j) {
    const double d1 = y[j + 1] - y[j];
    const double d2 = y[j + 2] - y[j + 1];
    ++pairs;
    if (d1 * d2 < 0.0) ++alternations;
  }
  return pairs > 0 && static_cast<double>(alternations) / pairs >= cfg.zigzag_max;
}

AcfMatrix filter_outlier_acf(const AcfMatrix& acf, const EstimatorConfig& cfg) {
  AcfMatrix out = acf;
  for (Eigen::Index i = 0; i < acf.rows(); ++i) {
    if (out.valid[i] && is_outlier_row(acf.values.row(i).transpose(), cfg)) out.valid[i] = false;
  }
  return out;
}

AcfMatrix align_frequency(const AcfMatrix& acf, double f_ref) {
  if (!(f_ref > 0.0)) throw InvalidParameter("align_frequency: f_ref must be positive");
  AcfMatrix out = acf;
  out.lag_scale = acf.subcarrier_frequencies / f_ref;
  return out;
}

AlignedRows resample_aligned(const AcfMatrix& acf, int upsample) {
  if (upsample < 1) throw InvalidParameter("resample_aligned: upsample must be >= 1");
  if (acf.rows() == 0 || acf.lags() < 2) throw InvalidParameter("resample_aligned: empty ACF");
  double min_scale = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < acf.rows(); ++i) {
    if (acf.valid[i] || acf.valid_count() == 0) min_scale = std::min(min_scale, acf.lag_scale[i]);
  }
  const double reach = static_cast<double>(acf.lags() - 1) * min_scale;
  const auto m_count = static_cast<Eigen::Index>(std::floor(reach * upsample + 1e-9)) + 1;

  AlignedRows out;
  out.lags = Eigen::VectorXd::LinSpaced(m_count, 0.0, static_cast<double>(m_count - 1)) * (acf.lag_step / upsample);
  out.values = Eigen::MatrixXd::Zero(acf.rows(), m_count);
  for (Eigen::Index i = 0; i < acf.rows(); ++i) {
    if (!acf.valid[i]) continue;
    const Eigen::VectorXd row = acf.values.row(i).transpose();
    for (Eigen::Index m = 0; m < m_count; ++m) {
      out.values(i, m) = interp(row, static_cast<double>(m) / upsample / acf.lag_scale[i]);
    }
  }
  return out;
}

double peak_prominence(const Eigen::Ref<const Eigen::VectorXd>& c, Eigen::Index m) {
  const double top = c[m];
  double left = top;
  for (Eigen::Index i = m - 1; i >= 0 && c[i] <= top; --i) left = std::min(left, c[i]);
  double right = top;
  for (Eigen::Index i = m + 1; i < c.size() && c[i] <= top; ++i) right = std::min(right, c[i]);
  return top - std::max(left, right);
}

std::optional<Peak> first_peak(const Eigen::Ref<const Eigen::VectorXd>& c,
                               const Eigen::Ref<const Eigen::VectorXd>& grid, double floor) {
  if (c.size() != grid.size()) throw InvalidParameter("first_peak: curve and grid sizes differ");
  for (Eigen::Index m = 1; m + 1 < c.size(); ++m) {
    if (!(c[m] > c[m - 1] && c[m] >= c[m + 1])) continue;
    const double prom = peak_prominence(c, m);
    if (prom < floor) continue;
    const double den = c[m - 1] - 2.0 * c[m] + c[m + 1];
    const double d = den != 0.0 ? std::clamp(0.5 * (c[m - 1] - c[m + 1]) / den, -0.5, 0.5) : 0.0;
    const double spacing = d >= 0.0 ? grid[m + 1] - grid[m] : grid[m] - grid[m - 1];
    return Peak{grid[m] + d * spacing, m, prom};
  }
  return std::nullopt;
}

double DecayPolicy::operator()(double lag) const {
  if (lag >= inner_lo && lag <= inner_hi) return 1.0;
  const double slope = std::log(level / (1.0 - level));
  if (lag > inner_hi) {
    if (lag > q3) return 0.0;
    const double a = -slope / (q3 - inner_hi);
    return 1.0 / (1.0 + std::exp(-a * (lag - q3)));
  }
  if (lag < q1) return 0.0;
  const double a = slope / (inner_lo - q1);
  return 1.0 / (1.0 + std::exp(-a * (lag - q1)));
}

DecayPolicy make_decay_policy(const std::vector<double>& peak_lags, double level) {
  if (peak_lags.empty()) throw NoPeak("make_decay_policy: no first peaks");
  std::vector<double> s = peak_lags;
  std::sort(s.begin(), s.end());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  const double median = quantile(s, 0.5);
  DecayPolicy p;
  p.inner_lo = std::min(mean, median);
  p.inner_hi = std::max(mean, median);
  p.q1 = quantile(s, 0.25);
  p.q3 = quantile(s, 0.75);
  p.level = level;
  return p;
}

CombinedAcf combine_weighted(const AcfMatrix& aligned, const EstimatorConfig& cfg) {
  const AlignedRows rows = resample_aligned(aligned, cfg.upsample);
  const Eigen::Index nrows = aligned.rows();

  CombinedAcf out;
  out.lags = rows.lags;
  out.row_peaks.assign(static_cast<std::size_t>(nrows), std::nullopt);
  out.row_prominence = Eigen::VectorXd::Zero(nrows);

  std::vector<double> lags;
  for (Eigen::Index i = 0; i < nrows; ++i) {
    if (!aligned.valid[i]) continue;
    const Eigen::VectorXd smooth = moving_average3(rows.values.row(i).transpose());
    if (auto p = first_peak(smooth, rows.lags, cfg.prominence_floor)) {
      out.row_peaks[static_cast<std::size_t>(i)] = p->position;
      out.row_prominence[i] = p->prominence;
      lags.push_back(p->position);
    }
  }
  if (lags.empty()) throw NoPeak("combine_weighted: no row has a first peak");

  const DecayPolicy decay = make_decay_policy(lags, cfg.sigmoid_level);
  out.weights = Eigen::VectorXd::Zero(nrows);
  for (Eigen::Index i = 0; i < nrows; ++i) {
    if (const auto& p = out.row_peaks[static_cast<std::size_t>(i)]) out.weights[i] = out.row_prominence[i] * decay(*p);
  }
  if (!(out.weights.sum() > 0.0)) out.weights = out.row_prominence;
  out.weights /= out.weights.sum();

  out.values = (rows.values.transpose() * out.weights).cwiseMax(-1.0).cwiseMin(1.0);

  // Regression weights: part uniform over valid rows, part the combining weights.
  const Eigen::Index valid = aligned.valid_count();
  std::vector<Sample> pts;
  for (Eigen::Index i = 0; i < nrows; ++i) {
    if (!aligned.valid[i]) continue;
    const double w = (1.0 - cfg.loess_weight_mix) / static_cast<double>(valid) + cfg.loess_weight_mix * out.weights[i];
    if (!(w > 0.0)) continue;
    for (Eigen::Index j = 1; j < aligned.lags(); ++j) {
      pts.push_back({static_cast<double>(j) * aligned.lag_scale[i], aligned.values(i, j), w});
    }
  }
  out.smoothed = local_regression(std::move(pts), rows.lags.size(), cfg.upsample, cfg);
  return out;
}

void to_json(nlohmann::json& j, const SpeedEstimate& e) {
  j = nlohmann::json{{"time_s", e.time},
                     {"motion", e.motion},
                     {"speed_mps", e.speed ? nlohmann::json(*e.speed) : nlohmann::json(nullptr)},
                     {"tau_s", e.tau_s},
                     {"confidence", e.confidence},
                     {"zcc", e.zcc},
                     {"model", to_string(e.model)}};
}

Eigen::Index window_count(const CsiSeries& csi, const EstimatorConfig& cfg) {
  if (!(csi.csi_rate > 0.0)) throw InvalidParameter("estimator: CSI rate must be positive");
  const double span = csi.duration() - cfg.window;
  if (span < -1e-9) return 0;
  return static_cast<Eigen::Index>(std::floor(span / cfg.step + 1e-9)) + 1;
}

double reference_frequency(const CsiSeries& csi, const EstimatorConfig& cfg) {
  if (cfg.f_ref > 0.0) return cfg.f_ref;
  const auto& m = csi.metadata;
  if (m.is_object() && m.contains("modem") && m.at("modem").contains("carrier_frequency")) {
    return m.at("modem").at("carrier_frequency").get<double>();
  }
  if (csi.subcarrier_frequencies.size() == 0) throw InvalidParameter("estimator: empty subcarrier grid");
  return 0.5 * (csi.subcarrier_frequencies.minCoeff() + csi.subcarrier_frequencies.maxCoeff());
}

namespace {

struct WindowFrames {
  Eigen::Index first = 0;
  Eigen::Index count = 0;
  double start_time = 0.0;
};

WindowFrames window_frames(const CsiSeries& csi, const EstimatorConfig& cfg, Eigen::Index w) {
  const Eigen::Index n = csi.num_frames();
  const auto count = std::min<Eigen::Index>(n, std::lround(cfg.window * csi.csi_rate));
  auto first = static_cast<Eigen::Index>(std::lround(static_cast<double>(w) * cfg.step * csi.csi_rate));
  first = std::clamp<Eigen::Index>(first, 0, n - count);
  const double t = csi.timestamps.size() == n ? csi.timestamps[first] : static_cast<double>(first) / csi.csi_rate;
  return {first, count, t};
}

}  // namespace

AcfMatrix window_acf(const CsiSeries& csi, const EstimatorConfig& cfg, Eigen::Index w) {
  const WindowFrames wf = window_frames(csi, cfg, w);
  const auto max_lag = std::min<Eigen::Index>(wf.count / 2, std::lround(cfg.max_lag * csi.csi_rate));
  return compute_acf(channel_power(csi, wf.first, wf.count), max_lag, 1.0 / csi.csi_rate,
                     csi.subcarrier_frequencies, wf.start_time);
}

SpeedEstimate estimate_window(const CsiSeries& csi, const EstimatorConfig& cfg, Eigen::Index w) {
  const AcfMatrix acf = filter_outlier_acf(window_acf(csi, cfg, w), cfg);
  SpeedEstimate e;
  e.window_start = acf.window_start;
  e.time = acf.window_start + 0.5 * cfg.window;
  e.model = cfg.model;
  e.zcc = mean_zero_crossings(acf, cfg);
  e.motion = !cfg.gate_on_motion || (acf.valid_count() > 0 && e.zcc > cfg.zcc_threshold);
  if (!e.motion) return e;

  const double f_ref = reference_frequency(csi, cfg);
  try {
    const CombinedAcf comb = combine_weighted(align_frequency(acf, f_ref), cfg);
    if (auto p = first_peak(comb.smoothed, comb.lags, cfg.prominence_floor)) {
      e.tau_s = p->position;
      e.confidence = p->prominence;
      e.speed = speed_from_peak(DiffusionModel{cfg.model, cfg.sound_speed}, p->position, f_ref);
    }
  } catch (const NoPeak&) {
  }
  return e;
}

std::vector<SpeedEstimate> estimate_speed(const CsiSeries& csi, const EstimatorConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = window_count(csi, cfg);
  if (n < 1) throw InvalidParameter("estimate_speed: series shorter than one analysis window");
  std::vector<SpeedEstimate> out(static_cast<std::size_t>(n));
  for (Eigen::Index w = 0; w < n; ++w) out[static_cast<std::size_t>(w)] = estimate_window(csi, cfg, w);
  return out;
}

}  // namespace diffspeed
