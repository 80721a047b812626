#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "eqm/data.hpp"
#include "eqm/kernels.hpp"
#include "eqm/layers.hpp"
#include "eqm/rng.hpp"
#include "eqm/tomo.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Times every OpenMP kernel against its serial reference and checks that the
// results are bit-identical, which the parallel variants guarantee by
// preserving the serial accumulation order per output element.

using namespace eqm;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double time_best_ms(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

bool report(const char* name, const std::function<void()>& serial,
            const std::function<void()>& parallel, const std::function<bool()>& identical,
            int reps) {
  double ts = time_best_ms(serial, reps);
  double tp = time_best_ms(parallel, reps);
  bool ok = identical();
  std::printf("%-18s %10.3f ms %10.3f ms %7.2fx  %s\n", name, ts, tp, ts / tp,
              ok ? "bit-identical" : "MISMATCH");
  return ok;
}

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 3;
  if (reps < 1) reps = 1;
#ifdef _OPENMP
  std::printf("threads: %d, best of %d reps\n", omp_get_max_threads(), reps);
#else
  std::printf("threads: 1 (OpenMP off), best of %d reps\n", reps);
#endif
  std::printf("%-18s %13s %13s %8s\n", "kernel", "serial", "parallel", "speedup");

  Rng rng(2024);
  bool all_ok = true;

  {
    const int m = 384, k = 384, n = 384;
    std::vector<double> a = rand_vec(rng, std::size_t(m) * k);
    std::vector<double> b = rand_vec(rng, std::size_t(k) * n);
    std::vector<double> os(std::size_t(m) * n), op(std::size_t(m) * n);
    auto bench_mm = [&](const char* name, auto fs, auto fp) {
      all_ok &= report(
          name,
          [&] { std::fill(os.begin(), os.end(), 0.0); fs(a.data(), b.data(), os.data(), m, k, n); },
          [&] { std::fill(op.begin(), op.end(), 0.0); fp(a.data(), b.data(), op.data(), m, k, n); },
          [&] { return same(os, op); }, reps);
    };
    bench_mm("mm_nn", kernels::mm_nn_serial, kernels::mm_nn);
    bench_mm("mm_nt", kernels::mm_nt_serial, kernels::mm_nt);
    bench_mm("mm_tn", kernels::mm_tn_serial, kernels::mm_tn);
  }

  {
    const int J = 8192, T = 27, B = 16, C = 22, Cp = 22;
    std::vector<double> kk = rand_vec(rng, std::size_t(J) * T * B);
    std::vector<double> z = rand_vec(rng, std::size_t(J) * T * C);
    std::vector<double> q = rand_vec(rng, std::size_t(J) * T, 0.1, 1.0);
    std::vector<double> w = rand_vec(rng, std::size_t(Cp) * C * B);
    std::vector<double> s = rand_vec(rng, std::size_t(J) * B * C);
    std::vector<double> dout = rand_vec(rng, std::size_t(J) * Cp);
    std::vector<double> ds = rand_vec(rng, std::size_t(J) * B * C);

    std::vector<double> o1(std::size_t(J) * B * C), o2(o1.size());
    all_ok &= report(
        "pc_stage",
        [&] { std::fill(o1.begin(), o1.end(), 0.0);
              kernels::pc_stage_serial(kk.data(), z.data(), q.data(), o1.data(), J, T, B, C); },
        [&] { std::fill(o2.begin(), o2.end(), 0.0);
              kernels::pc_stage(kk.data(), z.data(), q.data(), o2.data(), J, T, B, C); },
        [&] { return same(o1, o2); }, reps);

    std::vector<double> m1(std::size_t(J) * Cp), m2(m1.size());
    all_ok &= report(
        "pc_mix",
        [&] { std::fill(m1.begin(), m1.end(), 0.0);
              kernels::pc_mix_serial(w.data(), s.data(), m1.data(), J, B, C, Cp); },
        [&] { std::fill(m2.begin(), m2.end(), 0.0);
              kernels::pc_mix(w.data(), s.data(), m2.data(), J, B, C, Cp); },
        [&] { return same(m1, m2); }, reps);

    std::vector<double> b1(std::size_t(J) * B * C), b2(b1.size());
    all_ok &= report(
        "pc_back_stage",
        [&] { std::fill(b1.begin(), b1.end(), 0.0);
              kernels::pc_back_stage_serial(w.data(), dout.data(), b1.data(), J, B, C, Cp); },
        [&] { std::fill(b2.begin(), b2.end(), 0.0);
              kernels::pc_back_stage(w.data(), dout.data(), b2.data(), J, B, C, Cp); },
        [&] { return same(b1, b2); }, reps);

    std::vector<double> w1(std::size_t(Cp) * C * B), w2(w1.size());
    all_ok &= report(
        "pc_back_w",
        [&] { std::fill(w1.begin(), w1.end(), 0.0);
              kernels::pc_back_w_serial(dout.data(), s.data(), w1.data(), J, B, C, Cp); },
        [&] { std::fill(w2.begin(), w2.end(), 0.0);
              kernels::pc_back_w(dout.data(), s.data(), w2.data(), J, B, C, Cp); },
        [&] { return same(w1, w2); }, reps);

    std::vector<double> dk1(kk.size()), dz1(z.size()), dq1(q.size());
    std::vector<double> dk2(kk.size()), dz2(z.size()), dq2(q.size());
    all_ok &= report(
        "pc_back_inputs",
        [&] { std::fill(dk1.begin(), dk1.end(), 0.0);
              std::fill(dz1.begin(), dz1.end(), 0.0);
              std::fill(dq1.begin(), dq1.end(), 0.0);
              kernels::pc_back_inputs_serial(ds.data(), kk.data(), z.data(), q.data(), dk1.data(),
                                             dz1.data(), dq1.data(), J, T, B, C); },
        [&] { std::fill(dk2.begin(), dk2.end(), 0.0);
              std::fill(dz2.begin(), dz2.end(), 0.0);
              std::fill(dq2.begin(), dq2.end(), 0.0);
              kernels::pc_back_inputs(ds.data(), kk.data(), z.data(), q.data(), dk2.data(),
                                      dz2.data(), dq2.data(), J, T, B, C); },
        [&] { return same(dk1, dk2) && same(dz1, dz2) && same(dq1, dq2); }, reps);
  }

  {
    const int n = 3000, k = 27;
    std::vector<double> px = rand_vec(rng, n), py = rand_vec(rng, n);
    auto dist = [&](int i, int j) {
      double dx = px[std::size_t(i)] - px[std::size_t(j)];
      double dy = py[std::size_t(i)] - py[std::size_t(j)];
      return dx * dx + dy * dy;
    };
    std::vector<int> r1, r2;
    all_ok &= report(
        "knn",
        [&] { r1 = layers::knn_serial(n, n, k, dist); },
        [&] { r2 = layers::knn(n, n, k, dist); },
        [&] { return r1 == r2; }, reps);
  }

  {
    Rng ring_rng(7);
    tomo::Phantom p = data::gen_ring(ring_rng).phantom;
    tomo::ParallelGeometry geo;
    for (int a = 0; a < 256; ++a) geo.angles.push_back(kTwoPi * a / 256);
    for (int i = 0; i < 257; ++i) geo.offsets.push_back(-1.4 + 2.8 * i / 256);
    tomo::SensorSet V = tomo::build_sensors(geo);

    std::vector<double> y1, y2;
    all_ok &= report(
        "measure",
        [&] { y1 = tomo::measure_serial(p, V); },
        [&] { y2 = tomo::measure(p, V); },
        [&] { return same(y1, y2); }, reps);

    tomo::RasterImage img = tomo::rasterize(p, 128, 1.0, 2);
    std::vector<double> m1, m2;
    all_ok &= report(
        "measure_raster",
        [&] { m1 = tomo::measure_raster_serial(img, V); },
        [&] { m2 = tomo::measure_raster(img, V); },
        [&] { return same(m1, m2); }, reps);
  }

  std::printf("%s\n", all_ok ? "all kernels bit-identical" : "kernel mismatch detected");
  return all_ok ? 0 : 1;
}
