#include "diffspeed/diffusion.hpp"

#include "diffspeed/errors.hpp"

#include <cmath>
#include <numbers>

namespace diffspeed {

namespace {

constexpr double kSeriesLimit = 12.0;
constexpr double pi = std::numbers::pi;

// sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)
double bessel_series(int n, double x) {
  const double h = 0.5 * x;
  const double q = -h * h;
  double term = (n == 0) ? 1.0 : h;
  double sum = term;
  for (int k = 1; k < 200; ++k) {
    term *= q / (k * static_cast<double>(k + n));
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum) && k > 4) break;
  }
  return sum;
}

// Hankel expansion: J_n(x) ~ sqrt(2/(pi x)) (P cos w - Q sin w), w = x - n pi/2 - pi/4.
double bessel_asymptotic(int n, double x) {
  const double mu = 4.0 * n * n;
  const double z = 8.0 * x;
  double p = 1.0, q = 0.0;
  double term = 1.0;
  double prev = 1e300;
  for (int k = 1; k < 40; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= (mu - odd * odd) / (k * z);
    if (std::abs(term) > prev) break;  // asymptotic series has started to diverge
    prev = std::abs(term);
    if (k % 2 == 1) {
      q += ((k / 2) % 2 == 0 ? 1.0 : -1.0) * term;
    } else {
      p += ((k / 2) % 2 == 1 ? -1.0 : 1.0) * term;
    }
    if (prev < 1e-17) break;
  }
  const double w = x - (0.5 * n + 0.25) * pi;
  return std::sqrt(2.0 / (pi * x)) * (p * std::cos(w) - q * std::sin(w));
}

double bisect(ModelKind kind, double lo, double hi) {
  // derivative is positive at lo, negative at hi
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (psi_of_x_derivative(kind, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double find_reference_point(ModelKind kind) {
  const double step = 1e-2;
  double prev = psi_of_x_derivative(kind, step);
  for (double x = 2.0 * step; x < 50.0; x += step) {
    const double d = psi_of_x_derivative(kind, x);
    if (prev > 0.0 && d <= 0.0) return bisect(kind, x - step, x);
    prev = d;
  }
  throw NoPeak("reference_point: no positive local maximum found");
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::planar2d ? "2d" : "3d"; }

ModelKind parse_model_kind(std::string_view t) {
  if (t == "2d" || t == "2D" || t == "planar" || t == "planar2d") return ModelKind::planar2d;
  if (t == "3d" || t == "3D" || t == "spherical" || t == "spherical3d") return ModelKind::spherical3d;
  throw InvalidParameter("unknown model kind '" + std::string(t) + "' (expected 2d or 3d)");
}

double bessel_j0(double x) {
  x = std::abs(x);
  return x < kSeriesLimit ? bessel_series(0, x) : bessel_asymptotic(0, x);
}

double bessel_j1(double x) {
  const double s = x < 0.0 ? -1.0 : 1.0;
  x = std::abs(x);
  return s * (x < kSeriesLimit ? bessel_series(1, x) : bessel_asymptotic(1, x));
}

double psi_directional(double x, double theta, double k) { return std::cos(k * x * std::cos(theta)); }

double psi_of_x(ModelKind kind, double x) {
  if (kind == ModelKind::planar2d) return bessel_j0(x);
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

double psi_of_x_derivative(ModelKind kind, double x) {
  if (kind == ModelKind::planar2d) return -bessel_j1(x);
  if (std::abs(x) < 1e-4) return -x / 3.0;
  return (x * std::cos(x) - std::sin(x)) / (x * x);
}

double reference_point(ModelKind kind) {
  static const double x2 = find_reference_point(ModelKind::planar2d);
  static const double x3 = find_reference_point(ModelKind::spherical3d);
  return kind == ModelKind::planar2d ? x2 : x3;
}

double DiffusionModel::wavenumber(double f) const { return 2.0 * pi * f / sound_speed; }

double psi_p(const DiffusionModel& model, double v, double tau, double f) {
  if (v < 0.0 || tau < 0.0) throw InvalidParameter("psi_p: v and tau must be non-negative");
  return psi_of_x(model.kind, model.wavenumber(f) * (v * tau));
}

double speed_from_peak(const DiffusionModel& model, double tau_s, double f_ref) {
  if (!(tau_s > 0.0)) throw NoPeak("speed_from_peak: first-peak lag must be positive");
  if (!(f_ref > 0.0)) throw InvalidParameter("speed_from_peak: f_ref must be positive");
  return model.reference_point() * model.sound_speed / (2.0 * pi * f_ref * tau_s);
}

double peak_lag_for_speed(const DiffusionModel& model, double v, double f_ref) {
  if (!(v > 0.0)) throw InvalidParameter("peak_lag_for_speed: v must be positive");
  return model.reference_point() * model.sound_speed / (2.0 * pi * f_ref * v);
}

}  // namespace diffspeed
