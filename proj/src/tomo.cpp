#include "eqm/tomo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace eqm::tomo {

PointY fan_to_parallel(double beta, double fan_angle, double source_distance) {
  if (!(source_distance > 0.0))
    throw std::invalid_argument("fan_to_parallel: source distance must be positive");
  return {source_distance * std::sin(fan_angle), wrap_angle_2pi(beta + fan_angle + kPi / 2)};
}

SensorSet build_sensors(const ParallelGeometry& geo) {
  SensorSet v;
  v.points.reserve(geo.angles.size() * geo.offsets.size());
  for (double phi : geo.angles)
    for (double r : geo.offsets) v.points.push_back({r, wrap_angle_2pi(phi)});
  return v;
}

SensorSet build_sensors(const FanGeometry& geo) {
  SensorSet v;
  v.points.reserve(geo.betas.size() * geo.fan_angles.size());
  for (double beta : geo.betas)
    for (double fan : geo.fan_angles)
      v.points.push_back(fan_to_parallel(beta, fan, geo.source_distance));
  return v;
}

double radon_ellipse(const Ellipse& e, PointY v) {
  if (!(e.a > 0.0) || !(e.b > 0.0)) throw std::invalid_argument("radon_ellipse: axes must be positive");
  double rr = v.r - e.center.dot(angle_dir(v.phi));
  double cp = std::cos(v.phi - e.psi), sp = std::sin(v.phi - e.psi);
  double s2 = e.a * e.a * cp * cp + e.b * e.b * sp * sp;
  double disc = s2 - rr * rr;
  if (disc <= 0.0) return 0.0;
  return e.density * (2.0 * e.a * e.b / s2) * std::sqrt(disc);
}

double radon_phantom(const Phantom& p, PointY v) {
  double acc = 0.0;
  for (const Ellipse& e : p) acc += radon_ellipse(e, v);
  return acc;
}

namespace {

// walks the ray clipped to the raster square, sampling at pixel_size / 2 and
// handing each bilinear tap to the sink; single source of truth for both
// radon_raster and the discretized operator rows
template <class Sink>
void walk_ray(const RasterImage& img, PointY v, Sink&& sink) {
  const double h = img.pixel_size();
  const double l = img.half_extent + h;  // taps just outside still see zero pixels
  const Vec2 n = angle_dir(v.phi);
  const Vec2 tau{-n.y, n.x};
  const Vec2 base = n * v.r;

  // clip base + t*tau to |x|<=l, |y|<=l
  double t0 = -2.0 * l, t1 = 2.0 * l;
  bool empty = false;
  auto clip = [&](double p0, double d) {
    if (std::abs(d) < 1e-15) {
      if (std::abs(p0) > l) empty = true;
      return;
    }
    double ta = (-l - p0) / d, tb = (l - p0) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  };
  clip(base.x, tau.x);
  clip(base.y, tau.y);
  if (empty || t1 <= t0) return;

  const int steps = std::max(1, int(std::ceil((t1 - t0) / (0.5 * h))));
  const double dt = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) {
    double t = t0 + (i + 0.5) * dt;
    Vec2 u = base + tau * t;
    // continuous pixel coordinates, pixel centers at integers
    double fx = (u.x + img.half_extent) / h - 0.5;
    double fy = (u.y + img.half_extent) / h - 0.5;
    int ix = int(std::floor(fx)), iy = int(std::floor(fy));
    double wx = fx - ix, wy = fy - iy;
    const double w[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
    const int px[4] = {ix, ix + 1, ix, ix + 1};
    const int py[4] = {iy, iy, iy + 1, iy + 1};
    for (int k = 0; k < 4; ++k) {
      if (px[k] < 0 || px[k] >= img.width || py[k] < 0 || py[k] >= img.height) continue;
      sink(py[k] * img.width + px[k], w[k] * dt);
    }
  }
}

double rms(const std::vector<double>& y) {
  double acc = 0.0;
  for (double v : y) acc += v * v;
  return y.empty() ? 0.0 : std::sqrt(acc / double(y.size()));
}

}  // namespace

double radon_raster(const RasterImage& img, PointY v) {
  double acc = 0.0;
  walk_ray(img, v, [&](int idx, double w) { acc += w * img.pix[idx]; });
  return acc;
}

void radon_raster_weights(const RasterImage& img, PointY v,
                          const std::function<void(int, double)>& emit) {
  walk_ray(img, v, emit);
}

std::vector<double> measure(const Phantom& p, const SensorSet& V) {
  std::vector<double> y(V.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < std::int64_t(V.size()); ++i)
    y[i] = radon_phantom(p, V.points[i]);
  return y;
}

std::vector<double> measure_serial(const Phantom& p, const SensorSet& V) {
  std::vector<double> y(V.size());
  for (std::int64_t i = 0; i < std::int64_t(V.size()); ++i)
    y[i] = radon_phantom(p, V.points[i]);
  return y;
}

std::vector<double> measure_raster(const RasterImage& img, const SensorSet& V) {
  std::vector<double> y(V.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < std::int64_t(V.size()); ++i)
    y[i] = radon_raster(img, V.points[i]);
  return y;
}

std::vector<double> measure_raster_serial(const RasterImage& img, const SensorSet& V) {
  std::vector<double> y(V.size());
  for (std::int64_t i = 0; i < std::int64_t(V.size()); ++i)
    y[i] = radon_raster(img, V.points[i]);
  return y;
}

std::vector<double> add_noise(const std::vector<double>& y, double level, Rng& rng) {
  if (level < 0.0) throw std::invalid_argument("add_noise: negative level");
  std::vector<double> out = y;
  if (level == 0.0) return out;
  double sigma = level * rms(y);
  for (double& v : out) v += rng.normal(0.0, sigma);
  return out;
}

Phantom transform_phantom(const GroupElement& g, const Phantom& p) {
  Phantom out;
  out.reserve(p.size());
  if (g.id == group::GroupId::SE2) {
    // rigid motion: axes invariant, orientation shifts; identity is bitwise
    for (const Ellipse& e : p) {
      Ellipse t = e;
      t.center = actions::act_x(g, e.center);
      t.psi = e.psi + g.ang;
      out.push_back(t);
    }
    return out;
  }
  Mat2 ainv = g.A.inverse();
  for (const Ellipse& e : p) {
    // shape matrix M with u in E iff (u-c)^T M (u-c) <= 1
    Mat2 r = Mat2::rotation(e.psi);
    Mat2 m = r * Mat2::diag(1.0 / (e.a * e.a), 1.0 / (e.b * e.b)) * r.transpose();
    Mat2 mt = ainv.transpose() * m * ainv;
    SymEig2 eg = sym_eig2(mt.a, 0.5 * (mt.b + mt.c), mt.d);
    if (!(eg.l2 > 0.0)) throw std::runtime_error("transform_phantom: degenerate shape matrix");
    Ellipse t;
    t.center = actions::act_x(g, e.center);
    t.a = 1.0 / std::sqrt(eg.l1);  // largest eigenvalue is the shortest axis
    t.b = 1.0 / std::sqrt(eg.l2);
    t.psi = eg.ang;
    t.density = e.density;
    out.push_back(t);
  }
  return out;
}

RasterImage rasterize(const Phantom& p, int width, double half_extent, int supersample) {
  if (width <= 0 || supersample <= 0) throw std::invalid_argument("rasterize: bad size");
  RasterImage img(width, width, half_extent);
  const double h = img.pixel_size();
  const double sub = h / supersample;
#pragma omp parallel for schedule(static)
  for (std::int64_t iy = 0; iy < width; ++iy) {
    for (int ix = 0; ix < width; ++ix) {
      Vec2 c = img.pixel_center(ix, int(iy));
      double acc = 0.0;
      for (int sy = 0; sy < supersample; ++sy) {
        for (int sx = 0; sx < supersample; ++sx) {
          Vec2 u{c.x + (sx + 0.5) * sub - 0.5 * h, c.y + (sy + 0.5) * sub - 0.5 * h};
          double val = 0.0;
          for (const Ellipse& e : p) {
            Vec2 d = Mat2::rotation(-e.psi) * (u - e.center);
            double q = (d.x * d.x) / (e.a * e.a) + (d.y * d.y) / (e.b * e.b);
            if (q <= 1.0) val += e.density;
          }
          acc += val;
        }
      }
      img.at(ix, int(iy)) = acc / double(supersample * supersample);
    }
  }
  return img;
}

RasterImage rasterize(const actions::AnalyticSignal& f, int width, double half_extent) {
  RasterImage img(width, width, half_extent);
  for (int iy = 0; iy < width; ++iy)
    for (int ix = 0; ix < width; ++ix) img.at(ix, iy) = f(img.pixel_center(ix, iy));
  return img;
}

void write_sinogram_csv(std::ostream& os, const SensorSet& V, const std::vector<double>& y) {
  if (V.size() != y.size()) throw std::invalid_argument("write_sinogram_csv: size mismatch");
  os << "r,phi,value\n";
  char buf[96];
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", V.points[i].r, V.points[i].phi, y[i]);
    os << buf;
  }
}

}  // namespace eqm::tomo
