#include "diffspeed/diffusion.hpp"
#include "diffspeed/errors.hpp"
#include "diffspeed/estimator.hpp"
#include "diffspeed/simulator.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace diffspeed;
using cd = std::complex<double>;

namespace {

CsiSeries moving_csi(double v, std::uint64_t seed, int scatterers = 300, double duration = 3.0,
                     double rate = 187.5) {
  SceneParams p;
  p.num_scatterers = scatterers;
  p.seed = seed;
  p.duration = duration;
  p.speed_profile = {{0.0, v}};
  ModemConfig mc;
  CsiSeries csi = synth_csi(make_scene(p), rate, mc.subcarrier_frequencies());
  csi.metadata["modem"] = mc;
  return csi;
}

double mean_speed(const std::vector<SpeedEstimate>& est) {
  double s = 0.0;
  int n = 0;
  for (const auto& e : est) {
    if (e.speed) {
      s += *e.speed;
      ++n;
    }
  }
  return n > 0 ? s / n : 0.0;
}

// Rows psi(k_i v tau) on the lag grid, as a noiseless ACF.
AcfMatrix model_acf(const Eigen::VectorXd& freqs, double v, double rate, Eigen::Index lags) {
  const DiffusionModel m{};
  AcfMatrix a;
  a.values.resize(freqs.size(), lags + 1);
  for (Eigen::Index i = 0; i < freqs.size(); ++i)
    for (Eigen::Index j = 0; j <= lags; ++j) a.values(i, j) = psi_p(m, v, double(j) / rate, freqs[i]);
  a.lag_step = 1.0 / rate;
  a.subcarrier_frequencies = freqs;
  a.lag_scale = Eigen::VectorXd::Ones(freqs.size());
  a.valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(freqs.size(), true);
  a.num_frames = 4 * lags;
  return a;
}

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("channel power removes the time mean") {
    Eigen::MatrixXcd h(4, 2);
    h << cd{1, 0}, cd{2, 0}, cd{0, 2}, cd{2, 0}, cd{1, 1}, cd{0, 2}, cd{0, 0}, cd{-2, 0};
    const auto g = channel_power(h);
    // |h|^2 column 0: 1, 4, 2, 0 -> mean 1.75
    CHECK(g(0, 0) == doctest::Approx(-0.75));
    CHECK(g(1, 0) == doctest::Approx(2.25));
    CHECK(g.col(0).sum() == doctest::Approx(0.0).scale(1));
    // constant-power column is exactly zero
    CHECK(g.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(channel_power(Eigen::MatrixXcd::Ones(1, 3)), InvalidParameter);
  }

  TEST_CASE("biased ACF on a known sequence") {
    Eigen::MatrixXd g(6, 2);
    g.col(0) << 1, -1, 1, -1, 1, -1;
    g.col(1).setZero();
    const auto a = compute_acf(g, 2, 0.01, Eigen::Vector2d(20000.0, 20100.0));
    CHECK(a.valid[0]);
    CHECK_FALSE(a.valid[1]);
    CHECK(a.values(0, 0) == doctest::Approx(1.0));
    CHECK(a.values(0, 1) == doctest::Approx(-5.0 / 6.0));
    CHECK(a.values(0, 2) == doctest::Approx(4.0 / 6.0));
    CHECK(a.values.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(compute_acf(g, 4, 0.01, Eigen::Vector2d(1.0, 2.0)), InvalidParameter);
  }

  TEST_CASE("zero crossings respect the floor") {
    Eigen::VectorXd row(7);
    row << 1.0, 0.5, -0.5, 0.01, -0.01, 0.3, -0.2;
    CHECK(zero_crossing_count(row, 0.0) == 5);
    CHECK(zero_crossing_count(row, 0.05) == 3);
    EstimatorConfig cfg;
    CHECK(zcc_floor(cfg, 10000) == doctest::Approx(0.02));
    CHECK(zcc_floor(cfg, 100) == doctest::Approx(0.2));
  }

  TEST_CASE("outlier rows") {
    EstimatorConfig cfg;
    const Eigen::VectorXd lin = Eigen::VectorXd::LinSpaced(40, 1.0, 0.2);
    CHECK(is_outlier_row(lin, cfg));
    Eigen::VectorXd zig(40);
    for (Eigen::Index j = 0; j < 40; ++j) zig[j] = (j % 2 ? -0.3 : 0.3) + 0.001 * double(j);
    zig[0] = 1.0;
    CHECK(is_outlier_row(zig, cfg));
    CHECK(is_outlier_row(Eigen::VectorXd::Zero(40), cfg));
    Eigen::VectorXd good(40);
    for (Eigen::Index j = 0; j < 40; ++j) good[j] = psi_of_x(ModelKind::spherical3d, 0.4 * double(j));
    CHECK_FALSE(is_outlier_row(good, cfg));
  }

  TEST_CASE("first peak with prominence and refinement") {
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(2001, 0.0, 20.0);
    Eigen::VectorXd curve(grid.size());
    for (Eigen::Index i = 0; i < grid.size(); ++i) curve[i] = psi_of_x(ModelKind::spherical3d, grid[i]);
    const auto p = first_peak(curve, grid, 0.05);
    REQUIRE(p.has_value());
    CHECK(p->position == doctest::Approx(7.725251836937707).epsilon(1e-5));
    // side lobe 0.128374 above the shallower base -0.091325 near x = 10.9
    CHECK(p->prominence == doctest::Approx(0.219698).epsilon(1e-4));
    CHECK_FALSE(first_peak(curve, grid, 0.5).has_value());
    const Eigen::VectorXd down = -grid;
    CHECK_FALSE(first_peak(down, grid, 0.0).has_value());
  }

  TEST_CASE("frequency alignment collapses rows of different carriers") {
    const Eigen::Vector2d f(20000.0, 24000.0);
    AcfMatrix a = model_acf(f, 1.0, 2000.0, 100);
    const auto aligned = align_frequency(a, 20000.0);
    CHECK(aligned.lag_scale[0] == doctest::Approx(1.0));
    CHECK(aligned.lag_scale[1] == doctest::Approx(1.2));
    const auto rows = resample_aligned(aligned, 8);
    CHECK((rows.values.row(0) - rows.values.row(1)).cwiseAbs().maxCoeff() < 2e-3);
    CHECK_THROWS(align_frequency(a, 0.0));
  }

  TEST_CASE("combined curve is a convex combination") {
    ModemConfig mc;
    const CsiSeries csi = moving_csi(1.0, 21);
    EstimatorConfig cfg;
    const AcfMatrix acf = align_frequency(filter_outlier_acf(window_acf(csi, cfg, 3), cfg), 20250.0);
    const CombinedAcf c = combine_weighted(acf, cfg);
    CHECK(c.weights.sum() == doctest::Approx(1.0));
    CHECK(c.weights.minCoeff() >= 0.0);
    const AlignedRows rows = resample_aligned(acf, cfg.upsample);
    for (Eigen::Index j = 0; j < c.values.size(); ++j) {
      double lo = 1e9, hi = -1e9;
      for (Eigen::Index i = 0; i < rows.values.rows(); ++i) {
        if (!acf.valid[i]) continue;
        lo = std::min(lo, rows.values(i, j));
        hi = std::max(hi, rows.values(i, j));
      }
      REQUIRE(c.values[j] >= lo - 1e-12);
      REQUIRE(c.values[j] <= hi + 1e-12);
    }
  }

  TEST_CASE("identical rows combine to themselves") {
    const Eigen::VectorXd f = Eigen::VectorXd::Constant(5, 20250.0);
    const AcfMatrix a = model_acf(f, 1.0, 187.5, 90);
    const CombinedAcf c = combine_weighted(a, EstimatorConfig{});
    const AlignedRows rows = resample_aligned(a, 8);
    CHECK((c.values - rows.values.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("window count") {
    const CsiSeries csi = moving_csi(0.5, 2, 50, 5.0);
    EstimatorConfig cfg;
    // 937 whole frames at 187.5 Hz, so 4.9973 s of data
    CHECK(csi.num_frames() == 937);
    CHECK(window_count(csi, cfg) == 40);
    cfg.step = 0.5;
    CHECK(window_count(csi, cfg) == 8);
    cfg.window = 6.0;
    cfg.max_lag = 0.5;
    CHECK(window_count(csi, cfg) == 0);
    CHECK_THROWS(estimate_speed(csi, cfg));
  }

  TEST_CASE("reference frequency defaults to the carrier") {
    CsiSeries csi = moving_csi(0.5, 2, 20, 1.5);
    EstimatorConfig cfg;
    CHECK(reference_frequency(csi, cfg) == doctest::Approx(20250.0));
    cfg.f_ref = 19000.0;
    CHECK(reference_frequency(csi, cfg) == doctest::Approx(19000.0));
  }

  TEST_CASE("estimates are invariant to scale and per-subcarrier phase") {
    const CsiSeries csi = moving_csi(0.8, 5);
    EstimatorConfig cfg;
    const auto base = estimate_speed(csi, cfg);
    CsiSeries scaled = csi;
    scaled.frames *= 37.5;
    CsiSeries rotated = csi;
    for (Eigen::Index k = 0; k < csi.num_subcarriers(); ++k)
      rotated.frames.col(k) *= std::polar(1.0, -2.0 * std::numbers::pi * csi.subcarrier_frequencies[k] * 3.3e-3);
    const auto s = estimate_speed(scaled, cfg);
    const auto r = estimate_speed(rotated, cfg);
    REQUIRE(s.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      REQUIRE(base[i].speed.has_value());
      CHECK(*s[i].speed == doctest::Approx(*base[i].speed).epsilon(1e-9));
      CHECK(*r[i].speed == doctest::Approx(*base[i].speed).epsilon(1e-9));
      CHECK(s[i].zcc == doctest::Approx(base[i].zcc));
    }
  }

  TEST_CASE("simulated 1 m/s recovered within 10 percent, both models recorded") {
    const CsiSeries csi = moving_csi(1.0, 8, 300, 3.0);
    EstimatorConfig cfg;
    const auto e3 = estimate_speed(csi, cfg);
    CHECK(mean_speed(e3) == doctest::Approx(1.0).epsilon(0.1));
    for (const auto& e : e3) CHECK(e.model == ModelKind::spherical3d);
    cfg.model = ModelKind::planar2d;
    const auto e2 = estimate_speed(csi, cfg);
    for (const auto& e : e2) CHECK(e.model == ModelKind::planar2d);
    // Same peak, different reference point.
    CHECK(mean_speed(e2) / mean_speed(e3) ==
          doctest::Approx(reference_point(ModelKind::planar2d) / reference_point(ModelKind::spherical3d)).epsilon(0.02));
  }

  TEST_CASE("still scene reports no motion") {
    SceneParams p;
    p.num_scatterers = 300;
    p.seed = 77;
    p.duration = 3.0;
    ModemConfig mc;
    const CsiSeries csi = synth_csi(make_scene(p), 187.5, mc.subcarrier_frequencies());
    for (const auto& e : estimate_speed(csi, EstimatorConfig{})) {
      CHECK_FALSE(e.motion);
      CHECK_FALSE(e.speed.has_value());
    }
  }

  TEST_CASE("gate off always estimates") {
    SceneParams p;
    p.num_scatterers = 100;
    p.seed = 78;
    p.duration = 2.0;
    ModemConfig mc;
    const CsiSeries csi = synth_csi(make_scene(p), 187.5, mc.subcarrier_frequencies());
    EstimatorConfig cfg;
    cfg.gate_on_motion = false;
    for (const auto& e : estimate_speed(csi, cfg)) CHECK(e.motion);
  }

  TEST_CASE("corrupted subcarriers: outlier filter keeps the estimate") {
    const CsiSeries clean = moving_csi(1.0, 31, 300, 3.0);
    CsiSeries bad = clean;
    std::mt19937 gen(5);
    for (Eigen::Index k = 0; k < bad.num_subcarriers(); k += 4) {
      for (Eigen::Index t = 0; t < bad.num_frames(); ++t) {
        // alternate rows get a strong frame-rate flicker, the rest a slow drift
        const double m = (k / 4) % 2 ? 1.0 + 3.0 * double(t) / double(bad.num_frames()) : (t % 2 ? 4.0 : 0.25);
        bad.frames(t, k) *= m;
      }
    }
    EstimatorConfig on;
    EstimatorConfig off;
    off.linear_r2_max = 2.0;  // never linear
    off.zigzag_max = 2.0;     // never zig-zag
    const double truth = 1.0;
    const double e_clean = std::abs(mean_speed(estimate_speed(clean, on)) - truth);
    const double e_on = std::abs(mean_speed(estimate_speed(bad, on)) - truth);
    const double e_off = std::abs(mean_speed(estimate_speed(bad, off)) - truth);
    MESSAGE("clean " << e_clean << " filtered " << e_on << " unfiltered " << e_off);
    CHECK(e_on < 0.1);
    CHECK(e_on <= e_off);
  }

  TEST_CASE("config validation and json") {
    EstimatorConfig c;
    c.max_lag = 2.0;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    c = EstimatorConfig{};
    c.upsample = 0;
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
    EstimatorConfig d;
    d.window = 1.5;
    d.model = ModelKind::planar2d;
    const auto back = nlohmann::json(d).get<EstimatorConfig>();
    CHECK(back.window == 1.5);
    CHECK(back.model == ModelKind::planar2d);
    const auto partial = nlohmann::json{{"step", 0.2}}.get<EstimatorConfig>();
    CHECK(partial.step == 0.2);
    CHECK(partial.window == 1.0);
  }

  TEST_CASE("speed estimate json carries units in the keys") {
    SpeedEstimate e;
    e.time = 1.5;
    e.motion = true;
    e.speed = 0.9;
    const nlohmann::json j = e;
    CHECK(j.at("speed_mps") == 0.9);
    CHECK(j.at("model") == "3d");
    e.speed.reset();
    CHECK(nlohmann::json(e).at("speed_mps").is_null());
  }

  TEST_CASE("DFS baseline sees radial motion and misses tangential motion") {
    ModemConfig mc;
    EstimatorConfig cfg;
    for (double v : {0.4, 0.7}) {
      auto rp = radial_only_scene(v, 3, 100, 2.0);
      const auto radial = dfs_baseline(synth_csi(make_scene(rp), 187.5, mc.subcarrier_frequencies()), cfg);
      double mean = 0.0;
      for (const auto& d : radial) mean += d.radial_speed;
      mean /= double(radial.size());
      CHECK(std::abs(mean) == doctest::Approx(v).epsilon(0.15));
    }
    auto tp = tangential_only_scene(0.7, 3, 100, 2.0);
    const auto tang = dfs_baseline(synth_csi(make_scene(tp), 187.5, mc.subcarrier_frequencies()), cfg);
    double mean = 0.0;
    for (const auto& d : tang) mean += std::abs(d.radial_speed);
    CHECK(mean / double(tang.size()) < 0.1);
  }
}
