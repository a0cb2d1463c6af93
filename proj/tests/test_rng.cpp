#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "topicloc/rng.hpp"

using topicloc::Mat2;
using topicloc::Rng;
using topicloc::Vec2;

namespace {

// Standalone copy of the documented generator (splitmix64-seeded
// xoshiro256++) used to pin the bit-level output.
struct ReferenceXoshiro {
  std::uint64_t s[4];

  explicit ReferenceXoshiro(std::uint64_t seed) {
    for (auto& w : s) {
      std::uint64_t z = (seed += 0x9E3779B97F4A7C15ull);
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      w = z ^ (z >> 31);
    }
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s[0] + s[3], 23) + s[0];
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

}  // namespace

TEST_CASE("raw output matches the reference generator bit for bit", "[rng]") {
  for (std::uint64_t seed : {0ull, 1ull, 12345ull, 0xDEADBEEFCAFEull}) {
    Rng rng(seed);
    ReferenceXoshiro ref(seed);
    for (int i = 0; i < 64; ++i) {
      INFO("seed " << seed << " draw " << i);
      REQUIRE(rng.next_u64() == ref.next());
    }
  }
}

TEST_CASE("streams follow the documented derivation and do not collide", "[rng]") {
  const std::uint64_t seed = 99;
  std::uint64_t sm = seed;
  const std::uint64_t base = topicloc::splitmix64(sm);

  for (std::uint64_t id : {0ull, 1ull, 7ull, 1000ull}) {
    Rng derived = Rng::stream(seed, id);
    Rng direct(base ^ (0x9E3779B97F4A7C15ull * (id + 1)));
    for (int i = 0; i < 8; ++i) REQUIRE(derived.next_u64() == direct.next_u64());
  }

  Rng a = Rng::stream(seed, 0);
  Rng b = Rng::stream(seed, 1);
  int differing = 0;
  for (int i = 0; i < 16; ++i)
    if (a.next_u64() != b.next_u64()) ++differing;
  CHECK(differing == 16);
}

TEST_CASE("same seed reproduces the same draws", "[rng]") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform01() == b.uniform01());
}

TEST_CASE("uniform01 stays in [0,1) with the right mean", "[rng]") {
  Rng rng(3);
  const int n = 200000;
  double sum = 0.0, lo = 1.0, hi = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(sum / n == Catch::Approx(0.5).epsilon(0).margin(0.005));
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("normal draws have unit variance and zero mean", "[rng]") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(mean == Catch::Approx(0.0).epsilon(0).margin(0.01));
  CHECK(sq / n - mean * mean == Catch::Approx(1.0).epsilon(0).margin(0.02));
}

TEST_CASE("gamma moments for shapes above and below one", "[rng]") {
  Rng rng(5);
  for (double shape : {2.5, 0.4}) {
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = rng.gamma(shape);
      REQUIRE(g > 0.0);
      sum += g;
      sq += g * g;
    }
    const double mean = sum / n;
    INFO("shape " << shape);
    CHECK(mean == Catch::Approx(shape).epsilon(0).margin(0.02));
    CHECK(sq / n - mean * mean == Catch::Approx(shape).epsilon(0).margin(0.06));
  }
  CHECK_THROWS_AS(rng.gamma(0.0), std::domain_error);
  CHECK_THROWS_AS(rng.gamma(-1.0), std::domain_error);
}

TEST_CASE("dirichlet draws normalize and match their expectation", "[rng]") {
  Rng rng(17);
  const std::vector<double> alpha = {0.5, 2.0, 3.5};
  const double alpha_sum = 6.0;
  std::vector<double> draw;
  std::vector<double> mean(alpha.size(), 0.0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    rng.dirichlet(alpha, &draw);
    double total = 0.0;
    for (double v : draw) {
      REQUIRE(v >= 0.0);
      total += v;
    }
    REQUIRE(total == Catch::Approx(1.0).epsilon(0).margin(1e-12));
    for (std::size_t k = 0; k < draw.size(); ++k) mean[k] += draw[k];
  }
  for (std::size_t k = 0; k < alpha.size(); ++k)
    CHECK(mean[k] / n == Catch::Approx(alpha[k] / alpha_sum).epsilon(0).margin(0.01));
}

TEST_CASE("categorical frequencies follow the weights", "[rng]") {
  Rng rng(23);
  const std::vector<double> p = {0.2, 0.3, 0.5};
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(p);
    REQUIRE(k >= 0);
    REQUIRE(k < 3);
    ++counts[k];
  }
  for (int k = 0; k < 3; ++k)
    CHECK(static_cast<double>(counts[k]) / n ==
          Catch::Approx(p[k]).epsilon(0).margin(0.01));
}

TEST_CASE("chi squared mean equals its dof", "[rng]") {
  Rng rng(29);
  const double dof = 7.0;
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.chi_squared(dof);
  CHECK(sum / n == Catch::Approx(dof).epsilon(0).margin(0.1));
}

TEST_CASE("wishart draws are positive definite with mean nu * scale", "[rng]") {
  Rng rng(31);
  const Mat2 scale(0.08, 0.02, 0.02, 0.05);
  const double nu = 6.0;
  Mat2 mean(0, 0, 0, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Mat2 x = rng.wishart2(scale, nu);
    REQUIRE(x.is_pd());
    REQUIRE(x.a01 == Catch::Approx(x.a10).epsilon(0).margin(1e-12));
    mean = mean + x;
  }
  mean = mean * (1.0 / n);
  CHECK(mean.a00 == Catch::Approx(nu * scale.a00).epsilon(0).margin(0.02));
  CHECK(mean.a01 == Catch::Approx(nu * scale.a01).epsilon(0).margin(0.02));
  CHECK(mean.a11 == Catch::Approx(nu * scale.a11).epsilon(0).margin(0.02));
}

TEST_CASE("bivariate normal recovers mean and covariance", "[rng]") {
  Rng rng(37);
  const Vec2 mu{0.3, -0.7};
  const Mat2 cov(0.04, 0.018, 0.018, 0.09);
  Vec2 mean{0, 0};
  double c00 = 0, c01 = 0, c11 = 0;
  const int n = 100000;
  std::vector<Vec2> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Vec2 v = rng.normal2(mu, cov);
    draws.push_back(v);
    mean = mean + v;
  }
  mean = mean * (1.0 / n);
  for (const Vec2& v : draws) {
    c00 += (v.x - mean.x) * (v.x - mean.x);
    c01 += (v.x - mean.x) * (v.y - mean.y);
    c11 += (v.y - mean.y) * (v.y - mean.y);
  }
  CHECK(mean.x == Catch::Approx(mu.x).epsilon(0).margin(0.005));
  CHECK(mean.y == Catch::Approx(mu.y).epsilon(0).margin(0.005));
  CHECK(c00 / n == Catch::Approx(cov.a00).epsilon(0).margin(0.003));
  CHECK(c01 / n == Catch::Approx(cov.a01).epsilon(0).margin(0.003));
  CHECK(c11 / n == Catch::Approx(cov.a11).epsilon(0).margin(0.003));
}
