#pragma once

#include <array>
#include <span>

#include "eqm/geom.hpp"
#include "eqm/rng.hpp"

// Roto-translations SE(2) and orientation-preserving affinities Aff+(2) of
// the plane, with composition law (s1,A1)*(s2,A2) = (s1 + A1 s2, A1 A2).

namespace eqm::group {

enum class GroupId { SE2, AffPlus2 };

struct GroupElement {
  GroupId id = GroupId::SE2;
  Vec2 s{};          // translation part
  double ang = 0.0;  // SE2 rotation angle in (-pi, pi]; unused for AffPlus2
  Mat2 A{};          // linear part; for SE2 kept in sync with ang
};

GroupElement se2(Vec2 s, double gamma);
// requires det(A) > 0
GroupElement aff(Vec2 s, const Mat2& A);
GroupElement identity(GroupId id);

GroupElement compose(const GroupElement& g, const GroupElement& h);
GroupElement inverse(const GroupElement& g);

// Chart coordinates.
//   SE2:      (v1, v2, gamma) with s = V(gamma) v (exponential chart of se(2)),
//             gamma in (-pi, pi]; gamma = pi sits on the chart boundary and is
//             mapped by the same closed form.
//   AffPlus2: (s1, s2, theta, l11, l22, l12) via polar decomposition
//             A = R(theta) * exp(L), L = [[l11, l12], [l12, l22]] symmetric.
struct LogCoords {
  GroupId id = GroupId::SE2;
  std::array<double, 6> c{};
  int dim() const { return id == GroupId::SE2 ? 3 : 6; }
};

LogCoords log(const GroupElement& g);
GroupElement from_log(const LogCoords& l);

// Left-invariant distance ||w .* log(g^-1 h)||_2; empty w means all ones.
double dist(const GroupElement& g, const GroupElement& h, std::span<const double> w = {});

// Element mapping the domain origin to u (translation with identity linear part).
GroupElement coset_rep_x(GroupId id, Vec2 u);

// Random element of the stabilizer of the domain origin: a rotation for SE2,
// a general positive-determinant linear map for AffPlus2.
GroupElement sample_stabilizer(GroupId id, Rng& rng);

struct SampleBox {
  double trans = 1.0;  // translations uniform in [-trans, trans]^2
};

// Linear part for AffPlus2 is R(gamma) * diag(sig1, sig2) * shear(tau) with
// gamma ~ U[0, 2pi), sig_i ~ U[0.75, 1.25], tau ~ U[-0.5, 0.5].
GroupElement sample_group(GroupId id, Rng& rng, const SampleBox& box = {});

}  // namespace eqm::group
