#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "eqm/rng.hpp"
#include "eqm/tomo.hpp"

// Ring-phantom regression datasets: an outer ellipse of density +1 minus an
// inner ellipse of density -1 around a shared center, labelled with the
// minimal and maximal tube thickness, measured at a sparse sensor set with
// optional noise. Plus IDX raster ingestion for externally supplied images.

namespace eqm::data {

using tomo::Ellipse;
using tomo::Phantom;

struct RingParams {
  double outer_lo = 0.5, outer_hi = 1.0;  // outer semi-axis range
  double frac_lo = 0.35, frac_hi = 0.8;   // inner axes as per-axis fractions of outer
  double center_jitter = 0.15;            // shared center uniform in the +-jitter box
  int max_tries = 1000;                   // rejection cap for the containment test
};

struct RingSample {
  Phantom phantom;  // [outer, inner], densities +1 and -1, equal centers
  double d_min = 0.0, d_max = 0.0;
  std::vector<double> y;  // empty until measured
};

// Self-describing dataset: the header alone regenerates the records
// bit-exactly via build_dataset.
struct Dataset {
  std::uint32_t version = 1;
  std::vector<actions::PointY> sensors;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  RingParams params;
  std::vector<RingSample> samples;
};

// Strict containment probed at 720 inner boundary points: true iff the outer
// quadratic form stays below 1 on all of them. Sampling is conservative only
// up to the ~0.5 degree spacing; tangency reads as false.
bool containment(const Ellipse& inner, const Ellipse& outer);

// (d_min, d_max) of the tube: along direction t through the shared center the
// thickness is rho_out(t) - rho_in(t) with rho the radial boundary distance
// (cos^2(t-psi)/a^2 + sin^2(t-psi)/b^2)^(-1/2); extremized over a 3600-point
// grid, each extremum refined by golden-section search to width 1e-10.
std::pair<double, double> thickness(const Phantom& ring);

// Draw order (fixed, part of the regeneration contract): outer a, b, psi,
// then per rejection try inner fraction a, fraction b, psi, then center
// jitter x, y. Throws when max_tries rejections pass without containment.
RingSample gen_ring(Rng& rng, const RingParams& p = {});

// n samples with per-sample rng streams derived from the seed by index, so
// the records are independent of thread count; measurement via the exact
// ellipse transform plus add_noise.
Dataset build_dataset(int n, const tomo::SensorSet& V, double noise_level, std::uint64_t seed,
                      const RingParams& params = {});

// Binary layout: magic "EQMD", u32 version, u64 sensor count, per sensor
// (r, phi) as little-endian 64-bit doubles, noise level, u64 seed, the five
// RingParams reals, u32 max_tries, u64 record count, then per record the two
// ellipses as (cx, cy, a, b, psi, density), d_min, d_max, u64 |y|, y values.
// Round trips bit-exactly.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// one row per record: thickness labels and ellipse parameters
void write_dataset_csv(std::ostream& os, const Dataset& ds);

// IDX rasters (big-endian magic 0x00000803, dims n x rows x cols, unsigned
// bytes) normalized to [0,1] on [-half_extent, half_extent]^2 with the first
// byte row on top; labels from the 0x00000801 single-dimension variant.
std::vector<tomo::RasterImage> load_idx_images(const std::string& path, double half_extent = 1.0);
std::vector<int> load_idx_labels(const std::string& path);

}  // namespace eqm::data
