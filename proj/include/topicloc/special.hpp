#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "topicloc/linalg.hpp"

namespace topicloc {

// Psi(x): upward recurrence into the asymptotic regime, then the Bernoulli
// series through the x^-12 term. Absolute error below 1e-13 for all x > 0.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  const double series =
      f * (1.0 / 12 -
           f * (1.0 / 120 -
                f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132 - f * (691.0 / 32760))))));
  return acc + std::log(x) - 0.5 / x - series;
}

// log B(a) = sum_v lgamma(a_v) - lgamma(sum_v a_v), over the full vector.
inline double log_beta(const std::vector<double>& a) {
  double lg = 0.0, sum = 0.0;
  for (double v : a) {
    lg += std::lgamma(v);
    sum += v;
  }
  return lg - std::lgamma(sum);
}

inline double log_beta(const double* a, std::size_t n) {
  double lg = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lg += std::lgamma(a[i]);
    sum += a[i];
  }
  return lg - std::lgamma(sum);
}

// log Gamma_2(a), the bivariate multivariate gamma.
inline double log_multigamma2(double a) {
  return 0.5 * std::log(M_PI) + std::lgamma(a) + std::lgamma(a - 0.5);
}

// log of the Wishart normalizer B(W, nu) for d = 2, W the scale matrix.
inline double log_wishart_b(const Mat2& w, double nu) {
  return -0.5 * nu * logdet_pd(w) - nu * std::log(2.0) - log_multigamma2(0.5 * nu);
}

}  // namespace topicloc
