#include "diffspeed/fft.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>

namespace diffspeed {

namespace {

Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> fft = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::Unscaled);
    return f;
  }();
  return fft;
}

}  // namespace

Eigen::VectorXcd dft(const Eigen::VectorXcd& x) {
  Eigen::VectorXcd out(x.size());
  if (x.size() <= 1) return x;  // kissfft faults on n == 1
  engine().fwd(out, x);
  return out;
}

Eigen::VectorXcd idft(const Eigen::VectorXcd& x) {
  Eigen::VectorXcd out(x.size());
  if (x.size() <= 1) return x;
  engine().inv(out, x);
  out /= static_cast<double>(x.size());
  return out;
}

Eigen::VectorXcd fft_unitary(const Eigen::VectorXcd& x) {
  if (x.size() == 0) return x;
  return dft(x) / std::sqrt(static_cast<double>(x.size()));
}

Eigen::VectorXcd ifft_unitary(const Eigen::VectorXcd& x) {
  if (x.size() == 0) return x;
  return idft(x) * std::sqrt(static_cast<double>(x.size()));
}

Eigen::Index next_pow2(Eigen::Index n) {
  Eigen::Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace diffspeed
