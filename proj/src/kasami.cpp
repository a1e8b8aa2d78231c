#include "diffspeed/kasami.hpp"

#include "diffspeed/errors.hpp"

#include <ostream>
#include <string>

namespace diffspeed {

namespace {

void check_degree(int degree) {
  if (degree % 2 != 0) {
    throw InvalidParameter("Kasami degree must be even, got " + std::to_string(degree));
  }
  if (degree < 4 || degree > 16) {
    throw InvalidParameter("Kasami degree must be in [4, 16], got " + std::to_string(degree));
  }
}

}  // namespace

int kasami_set_size(int degree) {
  check_degree(degree);
  return 1 << (degree / 2);
}

std::uint32_t primitive_polynomial_taps(int degree) {
  // Bit e set <=> x^e present. The constant term is always present.
  switch (degree) {
    case 4: return 0b11;                                              // x^4 + x + 1
    case 6: return 0b11;                                              // x^6 + x + 1
    case 8: return (1u << 4) | (1u << 3) | (1u << 2) | 1u;            // x^8 + x^4 + x^3 + x^2 + 1
    case 10: return (1u << 3) | 1u;                                   // x^10 + x^3 + 1
    case 12: return (1u << 6) | (1u << 4) | (1u << 1) | 1u;           // x^12 + x^6 + x^4 + x + 1
    case 14: return (1u << 10) | (1u << 6) | (1u << 1) | 1u;          // x^14 + x^10 + x^6 + x + 1
    case 16: return (1u << 12) | (1u << 3) | (1u << 1) | 1u;          // x^16 + x^12 + x^3 + x + 1
    default: break;
  }
  throw InvalidParameter("no primitive polynomial tabulated for degree " + std::to_string(degree));
}

Eigen::VectorXi m_sequence(int degree) {
  const std::uint32_t taps = primitive_polynomial_taps(degree);
  const int length = (1 << degree) - 1;
  Eigen::VectorXi s(length);
  // s[t + n] = XOR_{e in taps} s[t + e], seeded with 1, 0, ..., 0.
  for (int t = 0; t < std::min(degree, length); ++t) s[t] = (t == 0) ? 1 : 0;
  for (int t = degree; t < length; ++t) {
    int bit = 0;
    for (int e = 0; e < degree; ++e) {
      if (taps & (1u << e)) bit ^= s[t - degree + e];
    }
    s[t] = bit;
  }
  return s;
}

PnSequence generate_kasami(int degree, int index) {
  const int set_size = kasami_set_size(degree);
  if (index < 0 || index >= set_size) {
    throw InvalidParameter("Kasami index " + std::to_string(index) + " outside small set of size " +
                           std::to_string(set_size));
  }
  const Eigen::VectorXi u = m_sequence(degree);
  const int length = static_cast<int>(u.size());

  Eigen::VectorXi bits = u;
  if (index > 0) {
    const int decimation = (1 << (degree / 2)) + 1;
    const int shift = index - 1;
    for (int t = 0; t < length; ++t) {
      // w[t] = u[q t mod L], shifted left by `shift`.
      const long long src = static_cast<long long>(decimation) * ((t + shift) % length) % length;
      bits[t] ^= u[static_cast<Eigen::Index>(src)];
    }
  }

  PnSequence seq;
  seq.degree = degree;
  seq.index = index;
  seq.chips = (1 - 2 * bits.array()).matrix();
  return seq;
}

Eigen::VectorXi periodic_correlation(const PnSequence& a, const PnSequence& b) {
  if (a.length() != b.length() || a.degree != b.degree) {
    throw InvalidParameter("periodic_correlation: sequences have different lengths");
  }
  const Eigen::Index n = a.length();
  Eigen::VectorXi out(n);
  for (Eigen::Index lag = 0; lag < n; ++lag) {
    int acc = 0;
    for (Eigen::Index t = 0; t < n; ++t) acc += a.chips[t] * b.chips[(t + lag) % n];
    out[lag] = acc;
  }
  return out;
}

void write_csv(std::ostream& os, const PnSequence& seq) {
  for (Eigen::Index i = 0; i < seq.length(); ++i) os << seq.chips[i] << '\n';
}

}  // namespace diffspeed
