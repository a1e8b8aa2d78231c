#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>

namespace diffspeed {

/**
 * A bipolar pseudo-noise spreading code from the Kasami small set.
 *
 * Chips are +1/-1 (binary 0 maps to +1, binary 1 maps to -1) so that
 * correlation is a plain inner product. The length is 2^degree - 1.
 */
struct PnSequence {
  int degree = 0;
  int index = 0;
  Eigen::VectorXi chips;

  Eigen::Index length() const { return chips.size(); }
  bool operator==(const PnSequence&) const = default;
};

/// Number of members in the Kasami small set for an even degree: 2^(degree/2).
int kasami_set_size(int degree);

/**
 * Feedback taps of the primitive polynomial used for the base m-sequence,
 * as a bitmask over exponents below `degree` (the x^degree term is implicit).
 * Supported degrees: 4, 6, ..., 16.
 */
std::uint32_t primitive_polynomial_taps(int degree);

/// Binary maximal-length sequence (values 0/1) from the documented primitive polynomial.
Eigen::VectorXi m_sequence(int degree);

/**
 * The index-th member of the Kasami small set.
 *
 * Index 0 is the m-sequence u itself; index i >= 1 is u XOR T^(i-1) w, where w is
 * u decimated by 2^(degree/2) + 1 and T is a cyclic left shift.
 *
 * Throws InvalidParameter for odd or unsupported degree and out-of-range index.
 */
PnSequence generate_kasami(int degree, int index);

/// Periodic correlation: entry l is sum_t a[t] * b[(t + l) mod L]. Exact integers.
Eigen::VectorXi periodic_correlation(const PnSequence& a, const PnSequence& b);

/// One chip per line.
void write_csv(std::ostream& os, const PnSequence& seq);

}  // namespace diffspeed
