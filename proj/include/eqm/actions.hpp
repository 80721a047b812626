#pragma once

#include <functional>

#include "eqm/geom.hpp"
#include "eqm/group.hpp"

// Group actions on the image plane and on the sinogram cylinder
// Omega_Y = R x [0, 2pi), plus the multiplier (cocycle) and Jacobian factors
// that make sinogram-side transforms compatible with the projection geometry.

namespace eqm::actions {

using group::GroupElement;
using group::GroupId;

// point of the sinogram cylinder; phi kept in [0, 2pi) by all operations here
struct PointY {
  double r = 0.0;
  double phi = 0.0;
};

// alpha = |A^T dir(phi)|, theta = direction angle of A^T dir(phi) in [0, 2pi).
// Well defined for invertible A; alpha > 0.
struct AlphaTheta {
  double alpha;
  double theta;
};
AlphaTheta alpha_theta(const Mat2& A, double phi);

Vec2 act_x(const GroupElement& g, Vec2 u);      // A u + s
Vec2 act_x_inv(const GroupElement& g, Vec2 u);  // A^-1 (u - s)
double jacobian_det_x(const GroupElement& g);   // det A (1 for SE2)

// SE2:      (r, phi) -> (r + s . dir(phi + ang), phi + ang)
// AffPlus2: (r, phi) -> ((r + s . A^-T dir(phi)) / alpha(A^-1, phi), theta(A^-1, phi))
PointY act_y(const GroupElement& g, PointY v);
// SE2:      (r, phi) -> (r - s . dir(phi), phi - ang)
// AffPlus2: (r, phi) -> ((r - s . dir(phi)) / alpha(A, phi), theta(A, phi))
PointY act_y_inv(const GroupElement& g, PointY v);

// sinogram-side multiplier p[g](v): 1 for SE2, det(A) / alpha(A, phi) for AffPlus2;
// satisfies the cocycle p[gh](v) = p[g](v) * p[h](act_y_inv(g, v))
double multiplier_y(const GroupElement& g, PointY v);

// |det D act_y(g, .)|(v): 1 for SE2, 1 / (det(A) * alpha(A^-1, phi)^3) for AffPlus2
double jacobian_det_y(const GroupElement& g, PointY v);

// Bundles of total functions of (g, point), one per domain.
struct TransformX {
  static Vec2 act(const GroupElement& g, Vec2 u) { return act_x(g, u); }
  static Vec2 act_inv(const GroupElement& g, Vec2 u) { return act_x_inv(g, u); }
  static double multiplier(const GroupElement&, Vec2) { return 1.0; }
  static double jacobian_det(const GroupElement& g, Vec2) { return jacobian_det_x(g); }
};

struct TransformY {
  static PointY act(const GroupElement& g, PointY v) { return act_y(g, v); }
  static PointY act_inv(const GroupElement& g, PointY v) { return act_y_inv(g, v); }
  static double multiplier(const GroupElement& g, PointY v) { return multiplier_y(g, v); }
  static double jacobian_det(const GroupElement& g, PointY v) { return jacobian_det_y(g, v); }
};

// plane signal given in closed form; transform composes with the inverse action
using AnalyticSignal = std::function<double(Vec2)>;

AnalyticSignal transform_signal(const GroupElement& g, AnalyticSignal x);

AnalyticSignal gaussian_blob(Vec2 center, double sigma, double amplitude = 1.0);

}  // namespace eqm::actions
