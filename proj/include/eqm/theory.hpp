#pragma once

#include <functional>
#include <vector>

#include "eqm/actions.hpp"
#include "eqm/group.hpp"
#include "eqm/tomo.hpp"

// Operator-level audits: which discretized forward operators admit an induced
// sinogram-side action (visibility of kernels under the plane action),
// construction of translation-equivariant operators from 1-D kernel profiles,
// and numerical checks of the induced equivariance and of the stabilizer
// constraint on first-layer kernels.

namespace eqm::theory {

using actions::PointY;
using group::GroupElement;

// 1-D kernel profile with compact numerical support: evaluated as fn(t) for
// |t| <= support and treated as 0 beyond it.
struct Kernel1D {
  std::function<double(double)> fn;
  double support = 0.0;
};

// Normalized Gaussian, cut off at support_sigmas * sigma.
Kernel1D gaussian_kernel(double sigma, double support_sigmas = 6.0);

// Dense matrix acting on row-major square-raster values, one row per sensor
// of the (angle-major) parallel geometry.
struct DenseOperator {
  int width = 0;
  int height = 0;
  double half_extent = 1.0;
  tomo::ParallelGeometry geom;
  std::vector<double> matrix;  // rows() x cols(), row-major

  int rows() const { return static_cast<int>(geom.angles.size() * geom.offsets.size()); }
  int cols() const { return width * height; }
};

std::vector<double> apply(const DenseOperator& op, const std::vector<double>& img);

// Rows are exactly the radon_raster quadrature functionals: apply() on image
// values reproduces radon_raster at every sensor.
DenseOperator discretize_radon(int width, int height, double half_extent,
                               const tomo::ParallelGeometry& geom);

// n x n pullback matrix of the plane action on the raster: row j samples the
// image at act_x_inv(g, center_j) by bilinear interpolation, zero outside the
// grid. Row sums are <= 1; the identity element gives the identity matrix.
std::vector<double> discretize_rep(const GroupElement& g, int width, int height,
                                   double half_extent);

struct VisibilityReport {
  bool holds = false;
  double mismatch_angle = 0.0;  // largest principal angle between the nullspaces
  int ker_dim = 0;              // dim Ker(A)
  int ker_dim_p = 0;            // dim Ker(A P)
};

// Compares Ker(A) with Ker(A P) through SVD nullspace bases with the rank cut
// sigma <= rank_tol * sigma_max. holds <=> equal nullspace dimensions and
// largest principal angle <= angle_tol. A is rows x cols, P is cols x cols.
VisibilityReport check_visibility(const std::vector<double>& A, int rows, int cols,
                                  const std::vector<double>& P, double rank_tol = 1e-10,
                                  double angle_tol = 1e-6);

// Entry (i,j) = a(r_i - u_j . dir(phi_i)) * pixel_area, midpoint quadrature
// over pixels. Linear in a.
DenseOperator build_equivariant_op(const Kernel1D& a, int width, int height, double half_extent,
                                   const tomo::ParallelGeometry& geom);

// Operator view for audits: an apply() from raster values to sensor values
// plus the layout, without requiring a materialized matrix.
struct OperatorHandle {
  std::function<std::vector<double>(const std::vector<double>&)> apply;
  int width = 0;
  int height = 0;
  double half_extent = 1.0;
  tomo::ParallelGeometry geom;
};

// Wraps a dense operator (the matrix is moved into the handle).
OperatorHandle handle(DenseOperator op);

// Matrix-free form of build_equivariant_op for large grids: each row visits
// only the pixels inside the kernel's support band, so memory stays O(grid)
// instead of O(sensors * grid).
OperatorHandle band_operator(Kernel1D a, int width, int height, double half_extent,
                             tomo::ParallelGeometry geom);

// Residual of the intertwining identity on the sensor grid:
//   max_i |(op P_X[g] x)(v_i) - p_Y[g](v_i) * (op x)(act_y_inv(g, v_i))|
// relative to sup |op x|, maximized over the test images. The transformed
// evaluation point is bilinearly interpolated on the sensor grid, which must
// be uniform in angle over the full circle and uniform in offset; sensors
// whose pulled-back offset leaves the grid are skipped.
double check_equivariance(const OperatorHandle& op, const GroupElement& g,
                          const std::vector<actions::AnalyticSignal>& images);

// Spread of a sinogram-domain kernel along stabilizer orbits: max over radii
// of (max - min) of kernel({r, phi}) over the probe angles. Zero iff the
// sampled kernel depends on the offset alone, which is the SE(2) form of the
// first-layer constraint.
double check_kernel_constraint(const std::function<double(PointY)>& kernel,
                               const std::vector<double>& radii,
                               const std::vector<double>& angles);

}  // namespace eqm::theory
