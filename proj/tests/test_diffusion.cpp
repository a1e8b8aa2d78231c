#include "diffspeed/diffusion.hpp"
#include "diffspeed/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace diffspeed;

namespace {

// First interior maximum after the main lobe, found on a dense grid without derivatives.
double dense_grid_peak(ModelKind kind) {
  const double step = 1e-5;
  double best_x = 0.0, best = -1e9;
  for (double x = 4.0; x < 10.0; x += step) {
    const double v = psi_of_x(kind, x);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  return best_x;
}

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("bessel functions agree with the standard library") {
    for (double x = 0.0; x <= 60.0; x += 0.173) {
      REQUIRE(bessel_j0(x) == doctest::Approx(std::cyl_bessel_j(0.0, x)).scale(1).epsilon(1e-9));
      REQUIRE(bessel_j1(x) == doctest::Approx(std::cyl_bessel_j(1.0, x)).scale(1).epsilon(1e-9));
    }
    CHECK(bessel_j0(-3.0) == doctest::Approx(bessel_j0(3.0)));
    CHECK(bessel_j1(-3.0) == doctest::Approx(-bessel_j1(3.0)));
  }

  TEST_CASE("bessel oracle values") {
    // scipy.special.j0 / j1
    CHECK(bessel_j0(0.5) == doctest::Approx(0.938469807240813).epsilon(1e-12));
    CHECK(bessel_j1(5.0) == doctest::Approx(-0.3275791375914653).epsilon(1e-12));
    CHECK(bessel_j0(11.9) == doctest::Approx(0.02504944169958986).epsilon(1e-9));
    CHECK(bessel_j0(12.5) == doctest::Approx(0.14688405470042093).epsilon(1e-9));
    CHECK(bessel_j1(30.0) == doctest::Approx(-0.11875106261662305).epsilon(1e-9));
  }

  TEST_CASE("reference points") {
    // brentq roots of the derivative (scipy)
    CHECK(reference_point(ModelKind::spherical3d) == doctest::Approx(7.725251836937707).epsilon(1e-12));
    CHECK(reference_point(ModelKind::planar2d) == doctest::Approx(7.015586669815468).epsilon(1e-12));
    CHECK(std::abs(reference_point(ModelKind::spherical3d) - dense_grid_peak(ModelKind::spherical3d)) < 1e-3);
    CHECK(std::abs(reference_point(ModelKind::planar2d) - dense_grid_peak(ModelKind::planar2d)) < 1e-3);
    CHECK(psi_of_x_derivative(ModelKind::spherical3d, reference_point(ModelKind::spherical3d)) ==
          doctest::Approx(0.0).scale(1).epsilon(1e-12));
  }

  TEST_CASE("correlation curves") {
    CHECK(psi_of_x(ModelKind::spherical3d, 0.0) == 1.0);
    CHECK(psi_of_x(ModelKind::planar2d, 0.0) == doctest::Approx(1.0));
    CHECK(psi_of_x(ModelKind::spherical3d, std::numbers::pi) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
    CHECK(psi_of_x(ModelKind::spherical3d, 2.0) == doctest::Approx(std::sin(2.0) / 2.0));
    // Derivative against central differences.
    for (double x : {0.3, 2.0, 5.5, 9.0}) {
      for (auto kind : {ModelKind::planar2d, ModelKind::spherical3d}) {
        const double h = 1e-6;
        const double fd = (psi_of_x(kind, x + h) - psi_of_x(kind, x - h)) / (2 * h);
        CHECK(psi_of_x_derivative(kind, x) == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("Monte Carlo closure over incidence directions") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 200000;
    for (double x : {0.5, 2.0, 4.0, 7.7}) {
      double sphere = 0.0, circle = 0.0;
      for (int i = 0; i < n; ++i) {
        sphere += psi_directional(x, std::acos(2.0 * u(gen) - 1.0), 1.0);
        circle += psi_directional(x, 2.0 * std::numbers::pi * u(gen), 1.0);
      }
      CHECK(sphere / n == doctest::Approx(psi_of_x(ModelKind::spherical3d, x)).scale(1).epsilon(0.01));
      CHECK(circle / n == doctest::Approx(psi_of_x(ModelKind::planar2d, x)).scale(1).epsilon(0.01));
    }
  }

  TEST_CASE("speed and peak lag are inverse") {
    const DiffusionModel m3{ModelKind::spherical3d};
    const DiffusionModel m2{ModelKind::planar2d};
    CHECK(m3.wavenumber(20250.0) == doctest::Approx(2 * std::numbers::pi * 20250.0 / 343.0));
    for (double v : {0.1, 0.8, 1.6}) {
      CHECK(speed_from_peak(m3, peak_lag_for_speed(m3, v, 20250.0), 20250.0) == doctest::Approx(v));
      CHECK(speed_from_peak(m2, peak_lag_for_speed(m2, v, 19000.0), 19000.0) == doctest::Approx(v));
    }
    // Peak of psi_p sits at the predicted lag.
    const double tau = peak_lag_for_speed(m3, 1.0, 20250.0);
    CHECK(psi_p(m3, 1.0, tau, 20250.0) > psi_p(m3, 1.0, tau * 0.98, 20250.0));
    CHECK(psi_p(m3, 1.0, tau, 20250.0) > psi_p(m3, 1.0, tau * 1.02, 20250.0));
    // Larger lag for the same peak means slower motion.
    CHECK(speed_from_peak(m3, 0.05, 20250.0) < speed_from_peak(m3, 0.04, 20250.0));
  }

  TEST_CASE("invalid inputs") {
    const DiffusionModel m{};
    CHECK_THROWS_AS(psi_p(m, -1.0, 0.1, 20000.0), InvalidParameter);
    CHECK_THROWS_AS(psi_p(m, 1.0, -0.1, 20000.0), InvalidParameter);
    CHECK_THROWS_AS(speed_from_peak(m, 0.0, 20000.0), NoPeak);
    CHECK_THROWS_AS(parse_model_kind("4d"), InvalidParameter);
    CHECK(parse_model_kind("planar") == ModelKind::planar2d);
    CHECK(parse_model_kind("3d") == ModelKind::spherical3d);
    CHECK(to_string(ModelKind::planar2d) == "2d");
  }
}
