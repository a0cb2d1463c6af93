#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "topicloc/linalg.hpp"

namespace topicloc {

// splitmix64 step; used for state seeding and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// xoshiro256++ with splitmix64 seeding: fixed bit-level behaviour on every
// platform, so seeded corpora are reproducible across languages as well.
//
// Stream rule: stream(seed, id) reseeds with splitmix64(seed) xor
// (0x9E3779B97F4A7C15 * (id + 1)). Samplers give each image its own stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static Rng stream(std::uint64_t seed, std::uint64_t id) {
    std::uint64_t sm = seed;
    const std::uint64_t base = splitmix64(sm);
    return Rng(base ^ (0x9E3779B97F4A7C15ull * (id + 1)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Box-Muller; consumes exactly two uniforms per call (no cached spare, the
  // draw count per call is fixed which keeps streams easy to reason about).
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang; shape < 1 handled by the boost identity.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("gamma: requires shape > 0");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      const double u = 1.0 - uniform01();
      return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  void dirichlet(const std::vector<double>& alpha, std::vector<double>* out) {
    out->resize(alpha.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      (*out)[i] = gamma(alpha[i]);
      sum += (*out)[i];
    }
    for (auto& v : *out) v /= sum;
  }

  // Index draw from an (approximately normalized) probability vector.
  int categorical(const std::vector<double>& p) {
    const double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  // Bartlett decomposition, d = 2: scale W, dof nu.
  Mat2 wishart2(const Mat2& scale, double nu) {
    const Mat2 l = cholesky2(scale);
    Mat2 a{std::sqrt(chi_squared(nu)), 0.0, normal(), std::sqrt(chi_squared(nu - 1.0))};
    const Mat2 la = l * a;
    return la * la.transpose();
  }

  // Bivariate normal via the Cholesky factor of the covariance.
  Vec2 normal2(Vec2 mean, const Mat2& cov) {
    const Mat2 l = cholesky2(cov);
    const double z0 = normal(), z1 = normal();
    return {mean.x + l.a00 * z0, mean.y + l.a10 * z0 + l.a11 * z1};
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

}  // namespace topicloc
