#include "provlens/combinatorics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace provlens {

std::uint64_t binom_u64(int n, int k) {
  if (k < 0 || k > n || n < 0) return 0;
  if (k > n - k) k = n - k;
  unsigned __int128 r = 1;
  for (int i = 1; i <= k; ++i) {
    // r * (n-k+i) / i stays integral at every step
    r = r * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
  }
  if (r > std::numeric_limits<std::uint64_t>::max())
    throw std::overflow_error("binomial coefficient exceeds 64 bits");
  return static_cast<std::uint64_t>(r);
}

double binom_double(int n, int k) {
  if (k < 0 || k > n || n < 0) return 0.0;
  if (n <= 62) return static_cast<double>(binom_u64(n, k));
  return std::exp(log_binom(n, k));
}

double log_binom(int n, int k) {
  if (k < 0 || k > n || n < 0) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

Quadrature gauss_legendre_01(int points) {
  if (points < 1) throw std::invalid_argument("quadrature needs at least one point");
  // Newton iteration on Legendre polynomials over [-1,1], then affine map.
  Quadrature q;
  q.x.resize(points);
  q.w.resize(points);
  const int n = points;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      if (n == 1) p1 = x;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      const double pn = (n == 1) ? x : p1;
      pp = n * (x * pn - p0) / (x * x - 1.0);
      const double dx = pn / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int j = 2; j <= n; ++j) {
      const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
      p0 = p1;
      p1 = p2;
    }
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    q.x[i] = 0.5 * (1.0 - x);  // map [-1,1] -> [0,1], mirrored index order
    q.w[i] = 0.5 * w;
    q.x[n - 1 - i] = 0.5 * (1.0 + x);
    q.w[n - 1 - i] = 0.5 * w;
  }
  return q;
}

}  // namespace provlens
