#include "eqm/group.hpp"

#include <cmath>
#include <stdexcept>

namespace eqm::group {

namespace {

// V(g) = (sin g / g) I + ((1 - cos g) / g) J with J = [[0,-1],[1,0]];
// translation part of the se(2) exponential. Series near g = 0.
Mat2 se2_chart_matrix(double g) {
  double A, B;
  if (std::abs(g) < 1e-4) {
    double g2 = g * g;
    A = 1.0 - g2 / 6.0 + g2 * g2 / 120.0;
    B = 0.5 * g - g2 * g / 24.0;
  } else {
    A = std::sin(g) / g;
    B = (1.0 - std::cos(g)) / g;
  }
  return {A, -B, B, A};
}

Mat2 sym_from_coords(double l11, double l22, double l12, bool exponentiate) {
  SymEig2 e = sym_eig2(l11, l12, l22);
  double m1 = exponentiate ? std::exp(e.l1) : e.l1;
  double m2 = exponentiate ? std::exp(e.l2) : e.l2;
  Mat2 r = Mat2::rotation(e.ang);
  return r * Mat2::diag(m1, m2) * r.transpose();
}

}  // namespace

GroupElement se2(Vec2 s, double gamma) {
  GroupElement g;
  g.id = GroupId::SE2;
  g.s = s;
  g.ang = wrap_angle(gamma);
  g.A = Mat2::rotation(g.ang);
  return g;
}

GroupElement aff(Vec2 s, const Mat2& A) {
  if (!(A.det() > 0.0)) throw std::invalid_argument("aff: linear part must have det > 0");
  GroupElement g;
  g.id = GroupId::AffPlus2;
  g.s = s;
  g.A = A;
  return g;
}

GroupElement identity(GroupId id) {
  return id == GroupId::SE2 ? se2({}, 0.0) : aff({}, Mat2::identity());
}

GroupElement compose(const GroupElement& g, const GroupElement& h) {
  if (g.id != h.id) throw std::invalid_argument("compose: mixed groups");
  if (g.id == GroupId::SE2) return se2(g.s + g.A * h.s, g.ang + h.ang);
  return aff(g.s + g.A * h.s, g.A * h.A);
}

GroupElement inverse(const GroupElement& g) {
  if (g.id == GroupId::SE2) {
    Mat2 rinv = Mat2::rotation(-g.ang);
    return se2(-(rinv * g.s), -g.ang);
  }
  Mat2 ainv = g.A.inverse();
  return aff(-(ainv * g.s), ainv);
}

LogCoords log(const GroupElement& g) {
  LogCoords l;
  l.id = g.id;
  if (g.id == GroupId::SE2) {
    Vec2 v = se2_chart_matrix(g.ang).inverse() * g.s;
    l.c = {v.x, v.y, g.ang, 0.0, 0.0, 0.0};
    return l;
  }
  // polar rotation angle of A (valid for det(A) > 0)
  double theta = std::atan2(g.A.c - g.A.b, g.A.a + g.A.d);
  Mat2 S = Mat2::rotation(-theta) * g.A;
  double s12 = 0.5 * (S.b + S.c);
  SymEig2 e = sym_eig2(S.a, s12, S.d);
  if (!(e.l2 > 0.0)) throw std::invalid_argument("log: polar factor not positive definite");
  Mat2 r = Mat2::rotation(e.ang);
  Mat2 L = r * Mat2::diag(std::log(e.l1), std::log(e.l2)) * r.transpose();
  l.c = {g.s.x, g.s.y, theta, L.a, L.d, 0.5 * (L.b + L.c)};
  return l;
}

GroupElement from_log(const LogCoords& l) {
  if (l.id == GroupId::SE2) {
    double gamma = l.c[2];
    Vec2 s = se2_chart_matrix(gamma) * Vec2{l.c[0], l.c[1]};
    return se2(s, gamma);
  }
  Mat2 S = sym_from_coords(l.c[3], l.c[4], l.c[5], /*exponentiate=*/true);
  return aff({l.c[0], l.c[1]}, Mat2::rotation(l.c[2]) * S);
}

double dist(const GroupElement& g, const GroupElement& h, std::span<const double> w) {
  LogCoords l = log(compose(inverse(g), h));
  int n = l.dim();
  if (!w.empty() && int(w.size()) != n)
    throw std::invalid_argument("dist: weight size must match chart dimension");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double wi = w.empty() ? 1.0 : w[i];
    double t = wi * l.c[i];
    acc += t * t;
  }
  return std::sqrt(acc);
}

GroupElement coset_rep_x(GroupId id, Vec2 u) {
  return id == GroupId::SE2 ? se2(u, 0.0) : aff(u, Mat2::identity());
}

GroupElement sample_stabilizer(GroupId id, Rng& rng) {
  if (id == GroupId::SE2) return se2({}, rng.uniform(0.0, kTwoPi));
  double gamma = rng.uniform(0.0, kTwoPi);
  double sig1 = rng.uniform(0.75, 1.25);
  double sig2 = rng.uniform(0.75, 1.25);
  double tau = rng.uniform(-0.5, 0.5);
  return aff({}, Mat2::rotation(gamma) * Mat2::diag(sig1, sig2) * Mat2::shear(tau));
}

GroupElement sample_group(GroupId id, Rng& rng, const SampleBox& box) {
  GroupElement lin = sample_stabilizer(id, rng);
  Vec2 s{rng.uniform(-box.trans, box.trans), rng.uniform(-box.trans, box.trans)};
  lin.s = s;
  return lin;
}

}  // namespace eqm::group
