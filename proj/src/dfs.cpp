#include "diffspeed/errors.hpp"
#include "diffspeed/estimator.hpp"
#include "diffspeed/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace diffspeed {

namespace {

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  }
  return m;
}

}  // namespace

std::vector<DfsEstimate> dfs_baseline(const CsiSeries& csi, const EstimatorConfig& cfg, const DfsConfig& dfs) {
  cfg.validate();
  if (dfs.pad_factor < 1) throw InvalidParameter("dfs_baseline: pad_factor must be >= 1");
  const Eigen::Index windows = window_count(csi, cfg);
  if (windows < 1) throw InvalidParameter("dfs_baseline: series shorter than one analysis window");

  const Eigen::Index n = std::min<Eigen::Index>(csi.num_frames(), std::lround(cfg.window * csi.csi_rate));
  const Eigen::Index nfft = next_pow2(n) * dfs.pad_factor;
  const double bin_hz = csi.csi_rate / static_cast<double>(nfft);
  const double dc_guard = csi.csi_rate / static_cast<double>(n);  // one resolution cell around DC

  Eigen::VectorXd hann(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  Eigen::VectorXd freq(nfft);
  for (Eigen::Index k = 0; k < nfft; ++k) freq[k] = static_cast<double>(k < nfft / 2 ? k : k - nfft) * bin_hz;

  std::vector<DfsEstimate> out;
  out.reserve(static_cast<std::size_t>(windows));
  for (Eigen::Index w = 0; w < windows; ++w) {
    auto first = static_cast<Eigen::Index>(std::lround(static_cast<double>(w) * cfg.step * csi.csi_rate));
    first = std::clamp<Eigen::Index>(first, 0, csi.num_frames() - n);

    std::vector<double> speeds, shifts;
    for (Eigen::Index c = 0; c < csi.num_subcarriers(); ++c) {
      const Eigen::VectorXcd seg = csi.frames.col(c).segment(first, n);
      Eigen::VectorXcd x = Eigen::VectorXcd::Zero(nfft);
      x.head(n) = (seg.array() - seg.mean()) * hann.array();
      const Eigen::VectorXd p = dft(x).cwiseAbs2();

      double peak = 0.0;
      for (Eigen::Index k = 0; k < nfft; ++k) {
        if (std::abs(freq[k]) >= dc_guard) peak = std::max(peak, p[k]);
      }
      if (!(peak > 0.0)) continue;
      double num = 0.0, den = 0.0;
      for (Eigen::Index k = 0; k < nfft; ++k) {
        if (std::abs(freq[k]) < dc_guard || p[k] < dfs.peak_fraction * peak) continue;
        num += freq[k] * p[k];
        den += p[k];
      }
      const double g = num / den;
      shifts.push_back(g);
      speeds.push_back(-g * cfg.sound_speed / csi.subcarrier_frequencies[c]);
    }

    DfsEstimate e;
    e.time = (csi.timestamps.size() == csi.num_frames() ? csi.timestamps[first] : first / csi.csi_rate) +
             0.5 * cfg.window;
    if (!speeds.empty()) {
      e.radial_speed = median(speeds);
      e.doppler = median(shifts);
      e.near_nyquist = std::abs(e.doppler) >= dfs.nyquist_guard * 0.5 * csi.csi_rate;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace diffspeed
