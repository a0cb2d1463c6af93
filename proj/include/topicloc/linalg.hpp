#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace topicloc {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  bool operator==(const Vec2&) const = default;
};

// 2x2 matrix, row major. Small enough that everything is closed-form.
struct Mat2 {
  double a00 = 0.0, a01 = 0.0, a10 = 0.0, a11 = 0.0;

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 diag(double d0, double d1) { return {d0, 0.0, 0.0, d1}; }
  static Mat2 outer(Vec2 u, Vec2 v) {
    return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y};
  }

  Mat2 operator+(const Mat2& o) const {
    return {a00 + o.a00, a01 + o.a01, a10 + o.a10, a11 + o.a11};
  }
  Mat2 operator-(const Mat2& o) const {
    return {a00 - o.a00, a01 - o.a01, a10 - o.a10, a11 - o.a11};
  }
  Mat2 operator*(double s) const { return {a00 * s, a01 * s, a10 * s, a11 * s}; }
  Vec2 operator*(Vec2 v) const {
    return {a00 * v.x + a01 * v.y, a10 * v.x + a11 * v.y};
  }
  Mat2 operator*(const Mat2& o) const {
    return {a00 * o.a00 + a01 * o.a10, a00 * o.a01 + a01 * o.a11,
            a10 * o.a00 + a11 * o.a10, a10 * o.a01 + a11 * o.a11};
  }
  Mat2 transpose() const { return {a00, a10, a01, a11}; }

  double det() const { return a00 * a11 - a01 * a10; }

  Mat2 inverse() const {
    const double d = det();
    if (d == 0.0 || !std::isfinite(d))
      throw std::runtime_error("Mat2::inverse: singular matrix");
    const double s = 1.0 / d;
    return {a11 * s, -a01 * s, -a10 * s, a00 * s};
  }

  // v' M v
  double quad(Vec2 v) const {
    return v.x * (a00 * v.x + a01 * v.y) + v.y * (a10 * v.x + a11 * v.y);
  }

  Mat2 symmetrized() const {
    const double off = 0.5 * (a01 + a10);
    return {a00, off, off, a11};
  }

  bool is_pd() const { return a00 > 0.0 && det() > 0.0; }

  bool operator==(const Mat2&) const = default;
};

// log|M| for a positive-definite 2x2 matrix.
inline double logdet_pd(const Mat2& m) {
  if (!m.is_pd()) throw std::runtime_error("logdet_pd: matrix not positive-definite");
  return std::log(m.det());
}

// Lower Cholesky factor of a PD 2x2 matrix.
inline Mat2 cholesky2(const Mat2& m) {
  if (!m.is_pd()) throw std::runtime_error("cholesky2: matrix not positive-definite");
  const double l00 = std::sqrt(m.a00);
  const double l10 = m.a10 / l00;
  const double l11 = std::sqrt(m.a11 - l10 * l10);
  return {l00, 0.0, l10, l11};
}

// Fixed-size matrices for the state-space code.
template <std::size_t R, std::size_t C>
struct Mat {
  std::array<double, R * C> a{};

  double& operator()(std::size_t i, std::size_t j) { return a[i * C + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * C + j]; }

  static Mat identity() {
    static_assert(R == C);
    Mat m;
    for (std::size_t i = 0; i < R; ++i) m(i, i) = 1.0;
    return m;
  }

  Mat operator+(const Mat& o) const {
    Mat r;
    for (std::size_t i = 0; i < R * C; ++i) r.a[i] = a[i] + o.a[i];
    return r;
  }
  Mat operator-(const Mat& o) const {
    Mat r;
    for (std::size_t i = 0; i < R * C; ++i) r.a[i] = a[i] - o.a[i];
    return r;
  }
  Mat operator*(double s) const {
    Mat r;
    for (std::size_t i = 0; i < R * C; ++i) r.a[i] = a[i] * s;
    return r;
  }
  Mat<C, R> transpose() const {
    Mat<C, R> r;
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) r(j, i) = (*this)(i, j);
    return r;
  }
};

template <std::size_t R, std::size_t K, std::size_t C>
Mat<R, C> operator*(const Mat<R, K>& a, const Mat<K, C>& b) {
  Mat<R, C> r;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double v = a(i, k);
      for (std::size_t j = 0; j < C; ++j) r(i, j) += v * b(k, j);
    }
  return r;
}

template <std::size_t N>
using VecN = Mat<N, 1>;

// Gauss-Jordan with partial pivoting; fine for the tiny N used here.
template <std::size_t N>
Mat<N, N> inverse(Mat<N, N> m) {
  Mat<N, N> inv = Mat<N, N>::identity();
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < N; ++r)
      if (std::abs(m(r, col)) > std::abs(m(piv, col))) piv = r;
    if (m(piv, col) == 0.0) throw std::runtime_error("inverse: singular matrix");
    if (piv != col)
      for (std::size_t j = 0; j < N; ++j) {
        std::swap(m(piv, j), m(col, j));
        std::swap(inv(piv, j), inv(col, j));
      }
    const double d = 1.0 / m(col, col);
    for (std::size_t j = 0; j < N; ++j) {
      m(col, j) *= d;
      inv(col, j) *= d;
    }
    for (std::size_t r = 0; r < N; ++r) {
      if (r == col) continue;
      const double f = m(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < N; ++j) {
        m(r, j) -= f * m(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

// Symmetric positive semi-definite check via LDL^T (tolerates singular input).
template <std::size_t N>
bool is_symmetric_psd(const Mat<N, N>& m, double tol = 1e-9) {
  double scale = tol;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > tol * (1.0 + std::abs(m(i, j)))) return false;
      scale = std::max(scale, std::abs(m(i, j)));
    }
  Mat<N, N> a = m;
  for (std::size_t k = 0; k < N; ++k) {
    if (a(k, k) < -tol * scale) return false;
    if (a(k, k) <= tol * scale) continue;  // treat as zero pivot
    for (std::size_t i = k + 1; i < N; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < N; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return true;
}

// Dynamic row-major matrix; plain storage plus indexing, no heavy ops.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& at(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }
  double* row(std::size_t r) { return a_.data() + r * cols_; }
  const double* row(std::size_t r) const { return a_.data() + r * cols_; }
  std::vector<double>& data() { return a_; }
  const std::vector<double>& data() const { return a_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> a_;
};

}  // namespace topicloc
