#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "eqm/actions.hpp"
#include "eqm/geom.hpp"
#include "eqm/group.hpp"
#include "eqm/rng.hpp"

// Parallel-beam Radon transform of ellipse phantoms in closed form, raster
// line integrals, fan-beam conversion, and noisy measurement at sparse
// sinogram sensor sets.

namespace eqm::tomo {

using actions::PointY;
using group::GroupElement;

struct Ellipse {
  Vec2 center{};
  double a = 1.0;    // semi-axis along the psi direction, > 0
  double b = 1.0;    // semi-axis perpendicular to it, > 0
  double psi = 0.0;  // orientation
  double density = 1.0;
};

using Phantom = std::vector<Ellipse>;

// sinogram sample positions in deterministic angle-major order
struct SensorSet {
  std::vector<PointY> points;
  std::size_t size() const { return points.size(); }
};

struct ParallelGeometry {
  std::vector<double> angles;
  std::vector<double> offsets;
};

// sources on a circle of radius source_distance, one detector ray per
// (source angle beta, fan angle) pair; the source sits at
// -source_distance * dir(beta) and the central ray travels along dir(beta)
struct FanGeometry {
  std::vector<double> betas;
  std::vector<double> fan_angles;
  double source_distance = 4.0;
};

// (beta, fan) -> (r, phi) = (D sin(fan), beta + fan + pi/2)
PointY fan_to_parallel(double beta, double fan_angle, double source_distance);

SensorSet build_sensors(const ParallelGeometry& geo);
SensorSet build_sensors(const FanGeometry& geo);

// line integral of the indicator ellipse times density; zero for tangent and
// non-intersecting rays
double radon_ellipse(const Ellipse& e, PointY v);
double radon_phantom(const Phantom& p, PointY v);

// square raster on [-half_extent, half_extent]^2, row-major, pixel centers,
// y axis pointing up
struct RasterImage {
  int width = 0;
  int height = 0;
  double half_extent = 1.0;
  std::vector<double> pix;

  RasterImage() = default;
  RasterImage(int w, int h, double half) : width(w), height(h), half_extent(half), pix(std::size_t(w) * h, 0.0) {}
  double pixel_size() const { return 2.0 * half_extent / width; }
  Vec2 pixel_center(int ix, int iy) const {
    double h = pixel_size();
    return {-half_extent + (ix + 0.5) * h, -half_extent + (iy + 0.5) * h};
  }
  double& at(int ix, int iy) { return pix[std::size_t(iy) * width + ix]; }
  double at(int ix, int iy) const { return pix[std::size_t(iy) * width + ix]; }
};

// line integral over the raster: stepping at pixel_size / 2 with bilinear
// interpolation between pixel centers; samples outside the grid contribute 0
double radon_raster(const RasterImage& img, PointY v);

// the exact quadrature weights used by radon_raster, emitted as
// (flat pixel index, weight) pairs in a fixed order
void radon_raster_weights(const RasterImage& img, PointY v,
                          const std::function<void(int, double)>& emit);

// closed-form measurement at every sensor; OpenMP over rays
std::vector<double> measure(const Phantom& p, const SensorSet& V);
std::vector<double> measure_serial(const Phantom& p, const SensorSet& V);

std::vector<double> measure_raster(const RasterImage& img, const SensorSet& V);
std::vector<double> measure_raster_serial(const RasterImage& img, const SensorSet& V);

// additive Gaussian noise with sigma = level * rms(y); level 0 is exact
std::vector<double> add_noise(const std::vector<double>& y, double level, Rng& rng);

// phantom of the transported signal x(act_x_inv(g, .)): centers move with the
// action, shape matrices transform by congruence with A^-1
Phantom transform_phantom(const GroupElement& g, const Phantom& p);

// supersample > 1 averages a supersample^2 subgrid per pixel
RasterImage rasterize(const Phantom& p, int width, double half_extent, int supersample = 1);
RasterImage rasterize(const actions::AnalyticSignal& f, int width, double half_extent);

void write_sinogram_csv(std::ostream& os, const SensorSet& V, const std::vector<double>& y);

}  // namespace eqm::tomo
