#pragma once

#include <cstdint>
#include <vector>

namespace provlens {

// Exact binomial coefficient; requires the result to fit in 64 bits
// (always true for n <= 62). C(n,k) = 0 when k < 0 or k > n.
std::uint64_t binom_u64(int n, int k);

// Floating-point binomial coefficient, exact for small arguments and
// computed via lgamma otherwise. Returns 0 for k < 0 or k > n.
double binom_double(int n, int k);

// log C(n,k); returns -inf for out-of-range k.
double log_binom(int n, int k);

// Gauss-Legendre nodes and weights on [0,1]; exact for polynomials of
// degree <= 2*points - 1.
struct Quadrature {
  std::vector<double> x, w;
};
Quadrature gauss_legendre_01(int points);

}  // namespace provlens
