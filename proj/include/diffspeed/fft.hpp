#pragma once

#include <Eigen/Core>

namespace diffspeed {

/**
 * Discrete Fourier transforms over Eigen vectors, backed by Eigen's FFT module.
 *
 * The *_unitary pair scales by 1/sqrt(N) in both directions, so energy is
 * preserved. `dft` / `idft` are the plain unscaled forward transform and the
 * 1/N-scaled inverse.
 */
Eigen::VectorXcd fft_unitary(const Eigen::VectorXcd& x);
Eigen::VectorXcd ifft_unitary(const Eigen::VectorXcd& x);

Eigen::VectorXcd dft(const Eigen::VectorXcd& x);
Eigen::VectorXcd idft(const Eigen::VectorXcd& x);

/// Smallest power of two >= n.
Eigen::Index next_pow2(Eigen::Index n);

}  // namespace diffspeed
