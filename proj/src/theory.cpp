#include "eqm/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace eqm::theory {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Uniform step of a sampled axis; throws if the samples are not equispaced.
double uniform_step(const std::vector<double>& xs, const char* what) {
  require(xs.size() >= 2, "sensor grid needs at least two samples per axis");
  double step = xs[1] - xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (std::abs(xs[i] - (xs[0] + double(i) * step)) > 1e-9 * std::max(1.0, std::abs(step))) {
      throw std::invalid_argument(std::string("sensor grid is not uniform in ") + what);
    }
  }
  return step;
}

}  // namespace

Kernel1D gaussian_kernel(double sigma, double support_sigmas) {
  require(sigma > 0.0 && support_sigmas > 0.0, "gaussian_kernel: need positive sigma");
  double norm = 1.0 / (sigma * std::sqrt(2.0 * kPi));
  double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  return Kernel1D{[norm, inv2s2](double t) { return norm * std::exp(-t * t * inv2s2); },
                  support_sigmas * sigma};
}

std::vector<double> apply(const DenseOperator& op, const std::vector<double>& img) {
  require(static_cast<int>(img.size()) == op.cols(), "apply: image size mismatch");
  int m = op.rows(), n = op.cols();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = op.matrix.data() + i * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += row[j] * img[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

DenseOperator discretize_radon(int width, int height, double half_extent,
                               const tomo::ParallelGeometry& geom) {
  require(width > 0 && height > 0 && half_extent > 0.0, "discretize_radon: bad grid");
  DenseOperator op;
  op.width = width;
  op.height = height;
  op.half_extent = half_extent;
  op.geom = geom;
  tomo::SensorSet V = tomo::build_sensors(geom);
  int m = static_cast<int>(V.size()), n = width * height;
  op.matrix.assign(static_cast<std::size_t>(m) * n, 0.0);
  tomo::RasterImage layout(width, height, half_extent);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = op.matrix.data() + i * n;
    tomo::radon_raster_weights(layout, V.points[static_cast<std::size_t>(i)],
                               [row](int j, double w) { row[j] += w; });
  }
  return op;
}

std::vector<double> discretize_rep(const GroupElement& g, int width, int height,
                                   double half_extent) {
  require(width > 0 && height > 0 && half_extent > 0.0, "discretize_rep: bad grid");
  int n = width * height;
  std::vector<double> M(static_cast<std::size_t>(n) * n, 0.0);
  tomo::RasterImage layout(width, height, half_extent);
  double pix = layout.pixel_size();
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < n; ++j) {
    int ix = static_cast<int>(j) % width;
    int iy = static_cast<int>(j) / width;
    Vec2 w = actions::act_x_inv(g, layout.pixel_center(ix, iy));
    double gx = (w.x + half_extent) / pix - 0.5;
    double gy = (w.y + half_extent) / pix - 0.5;
    int x0 = static_cast<int>(std::floor(gx));
    int y0 = static_cast<int>(std::floor(gy));
    double fx = gx - x0, fy = gy - y0;
    double* row = M.data() + j * n;
    const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int tap = 0; tap < 4; ++tap) {
      if (xs[tap] < 0 || xs[tap] >= width || ys[tap] < 0 || ys[tap] >= height) continue;
      row[ys[tap] * width + xs[tap]] += wts[tap];
    }
  }
  return M;
}

VisibilityReport check_visibility(const std::vector<double>& A, int rows, int cols,
                                  const std::vector<double>& P, double rank_tol,
                                  double angle_tol) {
  require(rows > 0 && cols > 0, "check_visibility: bad shape");
  require(static_cast<std::int64_t>(A.size()) == std::int64_t(rows) * cols,
          "check_visibility: A size mismatch");
  require(static_cast<std::int64_t>(P.size()) == std::int64_t(cols) * cols,
          "check_visibility: P must be cols x cols");

  Eigen::Map<const RowMat> ma(A.data(), rows, cols);
  Eigen::Map<const RowMat> mp(P.data(), cols, cols);

  auto nullspace = [&](const Eigen::MatrixXd& m) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    double smax = sv.size() > 0 ? sv(0) : 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > rank_tol * smax) ++rank;
    if (smax == 0.0) rank = 0;
    return Eigen::MatrixXd(svd.matrixV().rightCols(m.cols() - rank));
  };

  Eigen::MatrixXd ka = nullspace(ma);
  Eigen::MatrixXd kap = nullspace(ma * mp);

  VisibilityReport rep;
  rep.ker_dim = static_cast<int>(ka.cols());
  rep.ker_dim_p = static_cast<int>(kap.cols());
  if (ka.cols() == 0 && kap.cols() == 0) {
    rep.mismatch_angle = 0.0;
    rep.holds = true;
    return rep;
  }
  if (ka.cols() == 0 || kap.cols() == 0) {
    rep.mismatch_angle = kPi / 2.0;
    rep.holds = false;
    return rep;
  }
  // cos of the principal angles = singular values of the basis product
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(ka.transpose() * kap));
  double cmin = svd.singularValues()(svd.singularValues().size() - 1);
  cmin = std::clamp(cmin, -1.0, 1.0);
  rep.mismatch_angle = std::acos(cmin);
  rep.holds = (ka.cols() == kap.cols()) && rep.mismatch_angle <= angle_tol;
  return rep;
}

DenseOperator build_equivariant_op(const Kernel1D& a, int width, int height, double half_extent,
                                   const tomo::ParallelGeometry& geom) {
  require(static_cast<bool>(a.fn), "build_equivariant_op: kernel not callable");
  require(width > 0 && height > 0 && half_extent > 0.0, "build_equivariant_op: bad grid");
  DenseOperator op;
  op.width = width;
  op.height = height;
  op.half_extent = half_extent;
  op.geom = geom;
  tomo::SensorSet V = tomo::build_sensors(geom);
  int m = static_cast<int>(V.size()), n = width * height;
  op.matrix.assign(static_cast<std::size_t>(m) * n, 0.0);
  tomo::RasterImage layout(width, height, half_extent);
  double area = layout.pixel_size() * layout.pixel_size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    const PointY v = V.points[static_cast<std::size_t>(i)];
    const Vec2 dir = angle_dir(v.phi);
    double* row = op.matrix.data() + i * n;
    for (int iy = 0; iy < height; ++iy)
      for (int ix = 0; ix < width; ++ix) {
        Vec2 u = layout.pixel_center(ix, iy);
        double t = v.r - (u.x * dir.x + u.y * dir.y);
        if (std::abs(t) > a.support) continue;
        row[iy * width + ix] = a.fn(t) * area;
      }
  }
  return op;
}

OperatorHandle handle(DenseOperator op) {
  OperatorHandle h;
  h.width = op.width;
  h.height = op.height;
  h.half_extent = op.half_extent;
  h.geom = op.geom;
  auto shared = std::make_shared<DenseOperator>(std::move(op));
  h.apply = [shared](const std::vector<double>& img) { return theory::apply(*shared, img); };
  return h;
}

OperatorHandle band_operator(Kernel1D a, int width, int height, double half_extent,
                             tomo::ParallelGeometry geom) {
  require(static_cast<bool>(a.fn), "band_operator: kernel not callable");
  require(width > 0 && height > 0 && half_extent > 0.0, "band_operator: bad grid");
  OperatorHandle h;
  h.width = width;
  h.height = height;
  h.half_extent = half_extent;
  h.geom = geom;
  tomo::SensorSet V = tomo::build_sensors(geom);
  tomo::RasterImage layout(width, height, half_extent);
  double pix = layout.pixel_size();
  double area = pix * pix;
  int n = width * height;
  h.apply = [a = std::move(a), V = std::move(V), width, height, half_extent, pix, area,
             n](const std::vector<double>& img) {
    require(static_cast<int>(img.size()) == n, "band_operator: image size mismatch");
    std::int64_t m = static_cast<std::int64_t>(V.size());
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
      const PointY v = V.points[static_cast<std::size_t>(i)];
      const double c = std::cos(v.phi), s = std::sin(v.phi);
      double acc = 0.0;
      for (int iy = 0; iy < height; ++iy) {
        double y = -half_extent + (iy + 0.5) * pix;
        double rest = v.r - y * s;  // kernel argument is rest - x*c
        int x_lo = 0, x_hi = width - 1;
        if (std::abs(c) * (2.0 * half_extent) > 1e-12) {
          double t1 = (rest - a.support) / c, t2 = (rest + a.support) / c;
          if (t1 > t2) std::swap(t1, t2);
          x_lo = std::max(0, static_cast<int>(std::ceil((t1 + half_extent) / pix - 0.5)));
          x_hi = std::min(width - 1, static_cast<int>(std::floor((t2 + half_extent) / pix - 0.5)));
        } else if (std::abs(rest) > a.support) {
          continue;
        }
        const double* rowpix = img.data() + std::size_t(iy) * width;
        for (int ix = x_lo; ix <= x_hi; ++ix) {
          double x = -half_extent + (ix + 0.5) * pix;
          double t = rest - x * c;
          if (std::abs(t) > a.support) continue;
          acc += a.fn(t) * rowpix[ix];
        }
      }
      out[static_cast<std::size_t>(i)] = acc * area;
    }
    return out;
  };
  return h;
}

double check_equivariance(const OperatorHandle& op, const GroupElement& g,
                          const std::vector<actions::AnalyticSignal>& images) {
  require(static_cast<bool>(op.apply), "check_equivariance: operator not callable");
  require(op.width == op.height, "check_equivariance: grid must be square");
  require(!images.empty(), "check_equivariance: need at least one test image");
  const auto& angles = op.geom.angles;
  const auto& offsets = op.geom.offsets;
  double dphi = uniform_step(angles, "angle");
  double doff = uniform_step(offsets, "offset");
  std::size_t na = angles.size(), no = offsets.size();
  require(std::abs(double(na) * dphi - kTwoPi) < 1e-9,
          "check_equivariance: angles must cover the full circle uniformly");

  tomo::SensorSet V = tomo::build_sensors(op.geom);
  double worst = 0.0;
  for (const auto& image : images) {
    std::vector<double> w = op.apply(tomo::rasterize(image, op.width, op.half_extent).pix);
    std::vector<double> wg = op.apply(
        tomo::rasterize(actions::transform_signal(g, image), op.width, op.half_extent).pix);
    double sup = 0.0;
    for (double v : w) sup = std::max(sup, std::abs(v));
    require(sup > 0.0, "check_equivariance: operator output vanishes on a test image");

    double residual = 0.0;
    for (std::size_t i = 0; i < V.size(); ++i) {
      PointY vt = actions::act_y_inv(g, V.points[i]);
      double of = (vt.r - offsets[0]) / doff;
      int io = static_cast<int>(std::floor(of));
      if (io < 0 || io + 1 >= static_cast<int>(no)) continue;  // left the offset range
      double fo = of - io;
      double af = wrap_angle_2pi(vt.phi - angles[0]) / dphi;
      int ia = static_cast<int>(std::floor(af)) % static_cast<int>(na);
      double fa = af - std::floor(af);
      int ia2 = (ia + 1) % static_cast<int>(na);
      double interp =
          (1 - fa) * ((1 - fo) * w[std::size_t(ia) * no + io] + fo * w[std::size_t(ia) * no + io + 1]) +
          fa * ((1 - fo) * w[std::size_t(ia2) * no + io] + fo * w[std::size_t(ia2) * no + io + 1]);
      double target = actions::multiplier_y(g, V.points[i]) * interp;
      residual = std::max(residual, std::abs(wg[i] - target));
    }
    worst = std::max(worst, residual / sup);
  }
  return worst;
}

double check_kernel_constraint(const std::function<double(PointY)>& kernel,
                               const std::vector<double>& radii,
                               const std::vector<double>& angles) {
  require(static_cast<bool>(kernel), "check_kernel_constraint: kernel not callable");
  require(!radii.empty() && angles.size() >= 2, "check_kernel_constraint: need probe points");
  double worst = 0.0;
  for (double r : radii) {
    double lo = kernel({r, angles[0]});
    double hi = lo;
    for (std::size_t i = 1; i < angles.size(); ++i) {
      double v = kernel({r, angles[i]});
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

}  // namespace eqm::theory
