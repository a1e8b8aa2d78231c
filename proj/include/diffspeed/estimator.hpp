#pragma once

#include "diffspeed/diffusion.hpp"
#include "diffspeed/modem.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <optional>
#include <vector>

namespace diffspeed {

struct EstimatorConfig {
  double window = 1.0;    // s
  double step = 0.1;      // s
  double max_lag = 0.5;   // s
  ModelKind model = ModelKind::spherical3d;
  double f_ref = 0.0;     // Hz; <= 0 means the carrier (centre of the subcarrier grid)

  // Motion detection. A lag counts towards a crossing only when
  // |acf| > max(zcc_floor, zcc_floor_sigmas / sqrt(frames in window)).
  double zcc_threshold = 1.12;   // mean dominant crossings per valid row
  double zcc_floor = 0.02;
  double zcc_floor_sigmas = 2.0;
  bool gate_on_motion = true;    // false: every window is treated as moving (zcc is still reported)

  double prominence_floor = 0.05;
  double sigmoid_level = 0.99;   // weight reached at the inner (mean/median) edge

  // Outlier rows.
  double linear_r2_max = 0.95;
  double zigzag_max = 0.9;

  // Combined curve: local quadratic regression over all aligned samples.
  int upsample = 8;
  double loess_bandwidth = 0.1;         // lags
  double loess_bandwidth_slope = 0.12;  // bandwidth grows with lag
  int loess_min_points = 5;
  double loess_weight_mix = 0.5;        // share of the combining weights; the rest is uniform over valid rows

  double sound_speed = kSoundSpeed;

  void validate() const;
};

void to_json(nlohmann::json& j, const EstimatorConfig& cfg);
void from_json(const nlohmann::json& j, EstimatorConfig& cfg);

/// Channel-power ACF within one analysis window: one row per subcarrier, one column per lag.
struct AcfMatrix {
  Eigen::MatrixXd values;
  double lag_step = 0.0;                 // s per column
  double window_start = 0.0;             // s
  Eigen::VectorXd subcarrier_frequencies;
  Eigen::VectorXd lag_scale;             // column j sits at aligned lag j * lag_scale[i]
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;
  Eigen::Index num_frames = 0;           // frames the ACF was computed from

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index lags() const { return values.cols(); }
  Eigen::Index valid_count() const { return valid.count(); }
};

/**
 * |H|^2 per frame and subcarrier with its per-subcarrier time mean removed.
 * Columns whose power is constant to 1e-12 relative come out exactly zero.
 * Throws InvalidParameter for fewer than two frames.
 */
Eigen::MatrixXd channel_power(const Eigen::MatrixXcd& frames);
Eigen::MatrixXd channel_power(const CsiSeries& csi, Eigen::Index first, Eigen::Index count);

/**
 * Biased normalized sample ACF of each column of g for lags 0..max_lag_frames:
 * r(j) = sum_t g(t) g(t+j) / sum_t g(t)^2. Zero-variance columns are flagged invalid.
 */
AcfMatrix compute_acf(const Eigen::MatrixXd& g, Eigen::Index max_lag_frames, double lag_step,
                      const Eigen::VectorXd& frequencies, double window_start = 0.0);

/// Sign changes among the lags >= 1 whose magnitude exceeds `floor`.
int zero_crossing_count(const Eigen::Ref<const Eigen::VectorXd>& row, double floor);

double zcc_floor(const EstimatorConfig& cfg, Eigen::Index frames);

/// Mean dominant zero-crossing count over valid rows (0 when no row is valid).
double mean_zero_crossings(const AcfMatrix& acf, const EstimatorConfig& cfg);
bool motion_detect(const AcfMatrix& acf, const EstimatorConfig& cfg);

/// True when the row (lags >= 1) is a near-linear trend or a zig-zag.
bool is_outlier_row(const Eigen::Ref<const Eigen::VectorXd>& row, const EstimatorConfig& cfg);
AcfMatrix filter_outlier_acf(const AcfMatrix& acf, const EstimatorConfig& cfg);

/// Sets lag_scale = f / f_ref so that equal speeds put first peaks at equal aligned lags.
AcfMatrix align_frequency(const AcfMatrix& acf, double f_ref);

/// Rows linearly interpolated onto a common aligned grid of lag_step / upsample,
/// covering the range every row reaches.
struct AlignedRows {
  Eigen::VectorXd lags;      // s
  Eigen::MatrixXd values;    // row per input row (invalid rows included, zero)
};
AlignedRows resample_aligned(const AcfMatrix& acf, int upsample);

struct Peak {
  double position = 0.0;     // same unit as the grid, parabola refined
  Eigen::Index index = 0;
  double prominence = 0.0;
};

/// Smallest-lag local maximum (index >= 1) whose prominence reaches `floor`.
std::optional<Peak> first_peak(const Eigen::Ref<const Eigen::VectorXd>& curve,
                               const Eigen::Ref<const Eigen::VectorXd>& grid, double floor);

/// Peak prominence: height above the higher of the two bases.
double peak_prominence(const Eigen::Ref<const Eigen::VectorXd>& curve, Eigen::Index peak);

/// Weight multiplier for a row whose first peak sits at `lag`, given the spread of all row peaks.
struct DecayPolicy {
  double inner_lo = 0.0, inner_hi = 0.0;  // between mean and median
  double q1 = 0.0, q3 = 0.0;
  double level = 0.99;
  double operator()(double lag) const;
};
DecayPolicy make_decay_policy(const std::vector<double>& peak_lags, double level);

struct CombinedAcf {
  Eigen::VectorXd lags;         // s, aligned grid
  Eigen::VectorXd values;       // weighted sum of aligned rows
  Eigen::VectorXd smoothed;     // weighted local regression over all aligned samples
  Eigen::VectorXd weights;      // per input row; sum to 1
  std::vector<std::optional<double>> row_peaks;  // aligned first-peak lag per row, s
  Eigen::VectorXd row_prominence;
};

/**
 * Prominence-weighted combination with sigmoid decay around the central first-peak lags.
 * Throws NoPeak when no valid row has a first peak.
 */
CombinedAcf combine_weighted(const AcfMatrix& aligned, const EstimatorConfig& cfg);

struct SpeedEstimate {
  double time = 0.0;          // window centre, s
  double window_start = 0.0;  // s
  bool motion = false;
  std::optional<double> speed;   // m/s, only with motion and a peak
  double tau_s = 0.0;            // s, 0 without a peak
  double confidence = 0.0;       // prominence of the combined first peak
  double zcc = 0.0;
  ModelKind model = ModelKind::spherical3d;
};

void to_json(nlohmann::json& j, const SpeedEstimate& e);

/// Number of window positions: floor((duration - window) / step) + 1.
Eigen::Index window_count(const CsiSeries& csi, const EstimatorConfig& cfg);

double reference_frequency(const CsiSeries& csi, const EstimatorConfig& cfg);

/// ACF of one analysis window (before outlier filtering).
AcfMatrix window_acf(const CsiSeries& csi, const EstimatorConfig& cfg, Eigen::Index window_index);

SpeedEstimate estimate_window(const CsiSeries& csi, const EstimatorConfig& cfg, Eigen::Index window_index);

/// One estimate per window position, in window order.
std::vector<SpeedEstimate> estimate_speed(const CsiSeries& csi, const EstimatorConfig& cfg);

struct DfsConfig {
  int pad_factor = 4;
  double peak_fraction = 0.5;   // bins at or above this fraction of the peak enter the centroid
  double nyquist_guard = 0.8;   // |g| beyond this fraction of csi_rate/2 flags the window
};

struct DfsEstimate {
  double time = 0.0;
  double radial_speed = 0.0;     // m/s, positive when path lengths grow
  double doppler = 0.0;          // Hz at f_ref, median over subcarriers
  bool near_nyquist = false;
};

/**
 * Doppler baseline: per window and subcarrier, the Hann-windowed spectrum of the
 * mean-removed complex CSI; the centroid g of the bins near the strongest non-DC
 * bin gives v_r = -g c / f; the median across subcarriers is reported.
 */
std::vector<DfsEstimate> dfs_baseline(const CsiSeries& csi, const EstimatorConfig& cfg, const DfsConfig& dfs = {});

}  // namespace diffspeed
