#pragma once

#include "diffspeed/modem.hpp"

#include <string>
#include <string_view>

namespace diffspeed {

enum class ModelKind { planar2d, spherical3d };

std::string to_string(ModelKind kind);
/// Accepts "2d", "planar", "planar2d", "3d", "spherical", "spherical3d".
ModelKind parse_model_kind(std::string_view text);

/// Bessel functions of the first kind: power series for |x| < 12, Hankel asymptotics beyond.
double bessel_j0(double x);
double bessel_j1(double x);

/// Correlation for a single plane wave incident at angle theta: cos(k x cos theta).
double psi_directional(double x, double theta, double k);

/// Spatial pressure correlation at dimensionless separation x = k d.
/// planar2d: J0(x); spherical3d: sin(x)/x with value 1 at x = 0.
double psi_of_x(ModelKind kind, double x);
/// d psi / dx.
double psi_of_x_derivative(ModelKind kind, double x);

/// Smallest strictly positive local maximum of psi, cached after first use.
/// spherical3d: root of tan x = x in (2 pi, 5 pi / 2); planar2d: second positive zero of J1.
double reference_point(ModelKind kind);

struct DiffusionModel {
  ModelKind kind = ModelKind::spherical3d;
  double sound_speed = kSoundSpeed;

  double reference_point() const { return diffspeed::reference_point(kind); }
  double wavenumber(double f) const;
};

/// psi_p(v, tau) at frequency f: psi(k v tau) with k = 2 pi f / c.
double psi_p(const DiffusionModel& model, double v, double tau, double f);

/// v = x0 c / (2 pi f_ref tau_s). Throws NoPeak when tau_s <= 0.
double speed_from_peak(const DiffusionModel& model, double tau_s, double f_ref);

/// The first-peak lag that speed v produces at f_ref (inverse of speed_from_peak).
double peak_lag_for_speed(const DiffusionModel& model, double v, double f_ref);

}  // namespace diffspeed
