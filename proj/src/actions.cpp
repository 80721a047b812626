#include "eqm/actions.hpp"

#include <cmath>
#include <utility>

namespace eqm::actions {

AlphaTheta alpha_theta(const Mat2& A, double phi) {
  Vec2 w = A.transpose() * angle_dir(phi);
  double alpha = w.norm();
  // atan2 covers the full circle; an arccos of the first component would fold
  // the lower half plane onto the upper one
  double theta = wrap_angle_2pi(std::atan2(w.y, w.x));
  return {alpha, theta};
}

Vec2 act_x(const GroupElement& g, Vec2 u) { return g.A * u + g.s; }

Vec2 act_x_inv(const GroupElement& g, Vec2 u) {
  if (g.id == GroupId::SE2) return Mat2::rotation(-g.ang) * (u - g.s);
  return g.A.inverse() * (u - g.s);
}

double jacobian_det_x(const GroupElement& g) {
  return g.id == GroupId::SE2 ? 1.0 : g.A.det();
}

PointY act_y(const GroupElement& g, PointY v) {
  if (g.id == GroupId::SE2) {
    double phi = v.phi + g.ang;
    return {v.r + g.s.dot(angle_dir(phi)), wrap_angle_2pi(phi)};
  }
  Mat2 ainv = g.A.inverse();
  auto [alpha, theta] = alpha_theta(ainv, v.phi);
  double r = (v.r + g.s.dot(ainv.transpose() * angle_dir(v.phi))) / alpha;
  return {r, theta};
}

PointY act_y_inv(const GroupElement& g, PointY v) {
  if (g.id == GroupId::SE2)
    return {v.r - g.s.dot(angle_dir(v.phi)), wrap_angle_2pi(v.phi - g.ang)};
  auto [alpha, theta] = alpha_theta(g.A, v.phi);
  return {(v.r - g.s.dot(angle_dir(v.phi))) / alpha, theta};
}

double multiplier_y(const GroupElement& g, PointY v) {
  if (g.id == GroupId::SE2) return 1.0;
  return g.A.det() / alpha_theta(g.A, v.phi).alpha;
}

double jacobian_det_y(const GroupElement& g, PointY v) {
  if (g.id == GroupId::SE2) return 1.0;
  double alpha = alpha_theta(g.A.inverse(), v.phi).alpha;
  return 1.0 / (g.A.det() * alpha * alpha * alpha);
}

AnalyticSignal transform_signal(const GroupElement& g, AnalyticSignal x) {
  return [g, x = std::move(x)](Vec2 u) { return x(act_x_inv(g, u)); };
}

AnalyticSignal gaussian_blob(Vec2 center, double sigma, double amplitude) {
  double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  return [=](Vec2 u) {
    Vec2 d = u - center;
    return amplitude * std::exp(-(d.x * d.x + d.y * d.y) * inv2s2);
  };
}

}  // namespace eqm::actions
