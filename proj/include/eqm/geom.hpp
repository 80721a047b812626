#pragma once

#include <cmath>
#include <stdexcept>

namespace eqm {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double c) const { return {c * x, c * y}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

// row-major 2x2
struct Mat2 {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0;

  static Mat2 identity() { return {}; }
  static Mat2 rotation(double ang) {
    double co = std::cos(ang), si = std::sin(ang);
    return {co, -si, si, co};
  }
  static Mat2 diag(double u, double v) { return {u, 0.0, 0.0, v}; }
  static Mat2 shear(double t) { return {1.0, t, 0.0, 1.0}; }

  Vec2 operator*(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  Mat2 operator*(const Mat2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d,
            c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
  Mat2 operator*(double s) const { return {s * a, s * b, s * c, s * d}; }

  double det() const { return a * d - b * c; }
  double trace() const { return a + d; }
  Mat2 transpose() const { return {a, c, b, d}; }

  Mat2 inverse() const {
    double dt = det();
    if (std::abs(dt) < 1e-300) throw std::invalid_argument("Mat2::inverse: singular matrix");
    double r = 1.0 / dt;
    return {d * r, -b * r, -c * r, a * r};
  }
};

// unit normal direction of the line family at angle phi
inline Vec2 angle_dir(double phi) { return {std::cos(phi), std::sin(phi)}; }

// wrap to (-pi, pi]
inline double wrap_angle(double a) {
  double w = std::remainder(a, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

// wrap to [0, 2*pi)
inline double wrap_angle_2pi(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w;
}

// distance on the angle circle, in [0, pi]
inline double angle_dist(double a, double b) {
  return std::abs(std::remainder(a - b, kTwoPi));
}

// eigendecomposition of a symmetric 2x2 [[a,b],[b,d]]; returns eigenvalues
// l1 >= l2 and the rotation angle of the eigenvector basis.
struct SymEig2 {
  double l1, l2, ang;
};

inline SymEig2 sym_eig2(double a, double b, double d) {
  double tr = a + d;
  double diff = a - d;
  double disc = std::sqrt(diff * diff + 4.0 * b * b);
  double l1 = 0.5 * (tr + disc);
  double l2 = 0.5 * (tr - disc);
  double ang = 0.5 * std::atan2(2.0 * b, diff);  // 0 when b==0 and a>=d
  return {l1, l2, ang};
}

}  // namespace eqm
