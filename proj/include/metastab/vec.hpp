#ifndef METASTAB_VEC_HPP
#define METASTAB_VEC_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>

namespace metastab {

// Small fixed-dimension vector. Grid code instantiates N=2; flow and
// Monte Carlo routines are dimension-generic.
template <std::size_t N>
struct Vec {
  std::array<double, N> v{};

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  Vec& operator+=(const Vec& o) {
    for (std::size_t i = 0; i < N; ++i) v[i] += o.v[i];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    for (std::size_t i = 0; i < N; ++i) v[i] -= o.v[i];
    return *this;
  }
  Vec& operator*=(double c) {
    for (std::size_t i = 0; i < N; ++i) v[i] *= c;
    return *this;
  }

  friend Vec operator+(Vec a, const Vec& b) { return a += b; }
  friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
  friend Vec operator*(double c, Vec a) { return a *= c; }
  friend Vec operator*(Vec a, double c) { return a *= c; }
  friend Vec operator/(Vec a, double c) { return a *= (1.0 / c); }
  friend Vec operator-(Vec a) { return a *= -1.0; }
  friend bool operator==(const Vec& a, const Vec& b) { return a.v == b.v; }

  friend double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < N; ++i) s += a.v[i] * b.v[i];
    return s;
  }
  friend double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

  friend std::ostream& operator<<(std::ostream& os, const Vec& a) {
    os << '(';
    for (std::size_t i = 0; i < N; ++i) os << (i ? "," : "") << a.v[i];
    return os << ')';
  }
};

using Vec2 = Vec<2>;

inline Vec2 vec2(double x, double y) { return Vec2{{x, y}}; }

// Symmetric matrix in dimension N, dense storage.
template <std::size_t N>
struct Mat {
  std::array<double, N * N> m{};

  double& operator()(std::size_t i, std::size_t j) { return m[i * N + j]; }
  double operator()(std::size_t i, std::size_t j) const { return m[i * N + j]; }

  static Mat identity() {
    Mat a;
    for (std::size_t i = 0; i < N; ++i) a(i, i) = 1.0;
    return a;
  }

  friend Vec<N> operator*(const Mat& a, const Vec<N>& x) {
    Vec<N> y;
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < N; ++j) s += a(i, j) * x[j];
      y[i] = s;
    }
    return y;
  }
};

using Mat2 = Mat<2>;

inline Mat2 mat2(double a11, double a12, double a21, double a22) {
  Mat2 a;
  a(0, 0) = a11;
  a(0, 1) = a12;
  a(1, 0) = a21;
  a(1, 1) = a22;
  return a;
}

inline Mat2 diag2(double a, double b) { return mat2(a, 0, 0, b); }

inline double det(const Mat2& a) { return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0); }
inline double trace(const Mat2& a) { return a(0, 0) + a(1, 1); }

inline Mat2 inverse(const Mat2& a) {
  const double d = det(a);
  return mat2(a(1, 1) / d, -a(0, 1) / d, -a(1, 0) / d, a(0, 0) / d);
}

// Eigenvalues of a symmetric 2x2 matrix, ascending.
inline std::array<double, 2> sym_eigenvalues(const Mat2& a) {
  const double t = 0.5 * trace(a);
  const double d = det(a);
  const double s = std::sqrt(std::max(t * t - d, 0.0));
  return {t - s, t + s};
}

}  // namespace metastab

#endif
