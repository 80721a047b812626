#include "eqm/data.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace eqm::data {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

constexpr char kMagic[4] = {'E', 'Q', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("dataset: truncated file");
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

// IDX headers are big-endian
std::uint32_t get_u32_be(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | b[i];
  return v;
}

double radial_boundary(const Ellipse& e, double t) {
  double c = std::cos(t - e.psi), s = std::sin(t - e.psi);
  return 1.0 / std::sqrt(c * c / (e.a * e.a) + s * s / (e.b * e.b));
}

// minimizer location of a unimodal f on [lo, hi] to interval width 1e-10
double golden_min(const std::function<double(double)>& f, double lo, double hi) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = f(c), fd = f(d);
  while (hi - lo > 1e-10) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = f(d);
    }
  }
  return 0.5 * (lo + hi);
}

void put_ellipse(std::ostream& os, const Ellipse& e) {
  put_f64(os, e.center.x);
  put_f64(os, e.center.y);
  put_f64(os, e.a);
  put_f64(os, e.b);
  put_f64(os, e.psi);
  put_f64(os, e.density);
}

Ellipse get_ellipse(std::istream& is) {
  Ellipse e;
  e.center.x = get_f64(is);
  e.center.y = get_f64(is);
  e.a = get_f64(is);
  e.b = get_f64(is);
  e.psi = get_f64(is);
  e.density = get_f64(is);
  return e;
}

}  // namespace

bool containment(const Ellipse& inner, const Ellipse& outer) {
  Mat2 rin = Mat2::rotation(inner.psi);
  Mat2 rout = Mat2::rotation(-outer.psi);
  double worst = 0.0;
  for (int i = 0; i < 720; ++i) {
    double s = kTwoPi * i / 720;
    Vec2 b = rin * Vec2{inner.a * std::cos(s), inner.b * std::sin(s)} + inner.center;
    Vec2 rel = rout * (b - outer.center);
    double qx = rel.x / outer.a, qy = rel.y / outer.b;
    worst = std::max(worst, qx * qx + qy * qy);
  }
  return worst < 1.0;
}

std::pair<double, double> thickness(const Phantom& ring) {
  require(ring.size() == 2, "thickness: a ring is exactly two ellipses");
  const Ellipse& out = ring[0];
  const Ellipse& inn = ring[1];
  require(out.center.x == inn.center.x && out.center.y == inn.center.y,
          "thickness: the ellipses must share a center");
  require(out.density > 0.0 && inn.density < 0.0,
          "thickness: outer adds density, inner removes it");

  auto d = [&](double t) { return radial_boundary(out, t) - radial_boundary(inn, t); };

  const int N = 3600;
  const double h = kTwoPi / N;
  int imin = 0, imax = 0;
  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  for (int i = 0; i < N; ++i) {
    double v = d(h * i);
    if (v < vmin) {
      vmin = v;
      imin = i;
    }
    if (v > vmax) {
      vmax = v;
      imax = i;
    }
  }
  double tmin = golden_min(d, h * imin - h, h * imin + h);
  double tmax = golden_min([&](double t) { return -d(t); }, h * imax - h, h * imax + h);
  // refinement only sharpens the grid extremum
  return {std::min(vmin, d(tmin)), std::max(vmax, d(tmax))};
}

RingSample gen_ring(Rng& rng, const RingParams& p) {
  require(p.outer_lo > 0.0 && p.outer_hi >= p.outer_lo, "gen_ring: bad outer axis range");
  require(p.frac_lo > 0.0 && p.frac_hi >= p.frac_lo && p.frac_hi < 1.0,
          "gen_ring: inner fractions must sit strictly inside (0, 1)");
  require(p.center_jitter >= 0.0, "gen_ring: negative center jitter");
  require(p.max_tries >= 1, "gen_ring: max_tries must be positive");

  Ellipse outer;
  outer.a = rng.uniform(p.outer_lo, p.outer_hi);
  outer.b = rng.uniform(p.outer_lo, p.outer_hi);
  outer.psi = rng.uniform(0.0, kTwoPi);
  outer.density = 1.0;

  Ellipse inner;
  inner.density = -1.0;
  bool ok = false;
  for (int t = 0; t < p.max_tries && !ok; ++t) {
    inner.a = outer.a * rng.uniform(p.frac_lo, p.frac_hi);
    inner.b = outer.b * rng.uniform(p.frac_lo, p.frac_hi);
    inner.psi = rng.uniform(0.0, kTwoPi);
    ok = containment(inner, outer);
  }
  if (!ok)
    throw std::runtime_error("gen_ring: no contained inner ellipse within the rejection cap");

  Vec2 c{rng.uniform(-p.center_jitter, p.center_jitter),
         rng.uniform(-p.center_jitter, p.center_jitter)};
  outer.center = c;
  inner.center = c;

  RingSample s;
  s.phantom = {outer, inner};
  auto [dmin, dmax] = thickness(s.phantom);
  s.d_min = dmin;
  s.d_max = dmax;
  return s;
}

Dataset build_dataset(int n, const tomo::SensorSet& V, double noise_level, std::uint64_t seed,
                      const RingParams& params) {
  require(n >= 0, "build_dataset: negative sample count");
  require(!V.points.empty(), "build_dataset: empty sensor set");
  require(noise_level >= 0.0, "build_dataset: negative noise level");

  Dataset ds;
  ds.sensors = V.points;
  ds.noise_level = noise_level;
  ds.seed = seed;
  ds.params = params;
  ds.samples.resize(static_cast<std::size_t>(n));

  std::atomic<bool> failed{false};
  std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      RingSample s = gen_ring(rng, params);
      // the serial measurement; the parallelism lives out here
      s.y = tomo::add_noise(tomo::measure_serial(s.phantom, V), noise_level, rng);
      ds.samples[static_cast<std::size_t>(i)] = std::move(s);
    } catch (...) {
#pragma omp critical
      {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    }
  }
  if (err) std::rethrow_exception(err);
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  put_bytes(os, kMagic, 4);
  put_u32(os, ds.version);
  put_u64(os, ds.sensors.size());
  for (const auto& v : ds.sensors) {
    put_f64(os, v.r);
    put_f64(os, v.phi);
  }
  put_f64(os, ds.noise_level);
  put_u64(os, ds.seed);
  put_f64(os, ds.params.outer_lo);
  put_f64(os, ds.params.outer_hi);
  put_f64(os, ds.params.frac_lo);
  put_f64(os, ds.params.frac_hi);
  put_f64(os, ds.params.center_jitter);
  put_u32(os, static_cast<std::uint32_t>(ds.params.max_tries));
  put_u64(os, ds.samples.size());
  for (const auto& s : ds.samples) {
    require(s.phantom.size() == 2, "save_dataset: malformed ring record");
    put_ellipse(os, s.phantom[0]);
    put_ellipse(os, s.phantom[1]);
    put_f64(os, s.d_min);
    put_f64(os, s.d_max);
    put_u64(os, s.y.size());
    for (double v : s.y) put_f64(os, v);
  }
  os.flush();
  if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("dataset: bad magic");
  Dataset ds;
  ds.version = get_u32(is);
  if (ds.version != kVersion)
    throw std::runtime_error("dataset: unsupported format version " + std::to_string(ds.version));
  std::uint64_t nv = get_u64(is);
  ds.sensors.resize(nv);
  for (auto& v : ds.sensors) {
    v.r = get_f64(is);
    v.phi = get_f64(is);
  }
  ds.noise_level = get_f64(is);
  ds.seed = get_u64(is);
  ds.params.outer_lo = get_f64(is);
  ds.params.outer_hi = get_f64(is);
  ds.params.frac_lo = get_f64(is);
  ds.params.frac_hi = get_f64(is);
  ds.params.center_jitter = get_f64(is);
  ds.params.max_tries = static_cast<int>(get_u32(is));
  std::uint64_t n = get_u64(is);
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    Ellipse outer = get_ellipse(is);
    Ellipse inner = get_ellipse(is);
    s.phantom = {outer, inner};
    s.d_min = get_f64(is);
    s.d_max = get_f64(is);
    std::uint64_t ny = get_u64(is);
    s.y.resize(ny);
    for (auto& v : s.y) v = get_f64(is);
  }
  return ds;
}

void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  os << "index,d_min,d_max,center_x,center_y,outer_a,outer_b,outer_psi,inner_a,inner_b,"
        "inner_psi\n";
  char buf[256];
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const RingSample& s = ds.samples[i];
    const Ellipse& o = s.phantom[0];
    const Ellipse& n = s.phantom[1];
    std::snprintf(buf, sizeof buf,
                  "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i,
                  s.d_min, s.d_max, o.center.x, o.center.y, o.a, o.b, o.psi, n.a, n.b, n.psi);
    os << buf;
  }
}

std::vector<tomo::RasterImage> load_idx_images(const std::string& path, double half_extent) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  std::uint32_t magic = get_u32_be(is);
  if (magic != 0x00000803u)
    throw std::runtime_error("idx: expected an unsigned-byte rank-3 image file");
  std::uint32_t n = get_u32_be(is);
  std::uint32_t rows = get_u32_be(is);
  std::uint32_t cols = get_u32_be(is);
  if (rows == 0 || cols == 0) throw std::runtime_error("idx: degenerate image dimensions");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(rows) * cols);
  std::vector<tomo::RasterImage> imgs;
  imgs.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    get_bytes(is, bytes.data(), bytes.size());
    tomo::RasterImage img(static_cast<int>(cols), static_cast<int>(rows), half_extent);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        // first byte row on top of the y-up raster
        img.at(static_cast<int>(c), static_cast<int>(rows - 1 - r)) =
            bytes[static_cast<std::size_t>(r) * cols + c] / 255.0;
    imgs.push_back(std::move(img));
  }
  return imgs;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  std::uint32_t magic = get_u32_be(is);
  if (magic != 0x00000801u)
    throw std::runtime_error("idx: expected an unsigned-byte rank-1 label file");
  std::uint32_t n = get_u32_be(is);
  std::vector<unsigned char> bytes(n);
  if (n > 0) get_bytes(is, bytes.data(), n);
  return std::vector<int>(bytes.begin(), bytes.end());
}

}  // namespace eqm::data
