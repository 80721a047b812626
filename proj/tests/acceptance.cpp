#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "eqm/actions.hpp"
#include "eqm/data.hpp"
#include "eqm/group.hpp"
#include "eqm/layers.hpp"
#include "eqm/tensor.hpp"
#include "eqm/theory.hpp"
#include "eqm/tomo.hpp"
#include "eqm/train.hpp"

// Release gate: one criterion per invocation (argv[1] in 1..9), one PASS/FAIL
// line on stdout, exit 0/1. Each criterion pins its tolerances inline.

using namespace eqm;
using actions::PointY;
using group::GroupElement;
using group::GroupId;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Vec2 disc_sample(Rng& rng, double radius) {
  double r = radius * std::sqrt(rng.uniform());
  double t = rng.uniform(0.0, kTwoPi);
  return {r * std::cos(t), r * std::sin(t)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

PointY random_ray(Rng& rng) {
  return {rng.uniform(-1.5, 1.5), rng.uniform(0.0, kTwoPi)};
}

tomo::SensorSet sensors_deg(const std::vector<double>& angles_deg, int n_offsets, double lo,
                            double hi) {
  tomo::ParallelGeometry geo;
  for (double d : angles_deg) geo.angles.push_back(d * kPi / 180.0);
  for (int i = 0; i < n_offsets; ++i)
    geo.offsets.push_back(lo + (hi - lo) * i / (n_offsets - 1));
  return tomo::build_sensors(geo);
}

tomo::SensorSet uniform_sensors(int n_angles, int n_offsets, double lo, double hi) {
  std::vector<double> deg;
  for (int a = 0; a < n_angles; ++a) deg.push_back(180.0 * a / n_angles);
  return sensors_deg(deg, n_offsets, lo, hi);
}

int pass(int n, const std::string& detail) {
  std::printf("criterion %d: PASS - %s\n", n, detail.c_str());
  return 0;
}

int fail(int n, const std::string& detail) {
  std::printf("criterion %d: FAIL - %s\n", n, detail.c_str());
  return 1;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ------------------------------------------------------------- criterion 1
// Sinogram reparametrization under rigid motions is exact: the projection of
// a moved phantom equals the projection of the original at the pulled-back
// ray, to full double precision.

int criterion1() {
  constexpr double kTol = 1e-12;
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    tomo::Phantom p = data::gen_ring(rng).phantom;
    GroupElement g = group::se2(disc_sample(rng, 0.3), rng.uniform(0.0, kTwoPi));
    tomo::Phantom gp = tomo::transform_phantom(g, p);
    for (int ray = 0; ray < 200; ++ray) {
      PointY v = random_ray(rng);
      double lhs = tomo::radon_phantom(gp, v);
      double rhs = tomo::radon_phantom(p, actions::act_y_inv(g, v));
      worst = std::max(worst,
                       std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)}));
    }
  }
  std::string d = "se2 sinogram intertwining, max rel residual " + num(worst) + " (tol " +
                  num(kTol) + ", 100 phantoms x 200 rays)";
  return worst < kTol ? pass(1, d) : fail(1, d);
}

// ------------------------------------------------------------- criterion 2
// Same identity for orientation-preserving affine maps, now with the ray
// multiplier carrying the length distortion.

int criterion2() {
  constexpr double kTol = 1e-10;
  Rng rng(102);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    tomo::Phantom p = data::gen_ring(rng).phantom;
    GroupElement g = group::sample_group(GroupId::AffPlus2, rng, {.trans = 0.3});
    tomo::Phantom gp = tomo::transform_phantom(g, p);
    for (int ray = 0; ray < 200; ++ray) {
      PointY v = random_ray(rng);
      double lhs = tomo::radon_phantom(gp, v);
      double rhs = actions::multiplier_y(g, v) * tomo::radon_phantom(p, actions::act_y_inv(g, v));
      worst = std::max(worst,
                       std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)}));
    }
  }
  std::string d = "affine sinogram intertwining with multiplier, max rel residual " + num(worst) +
                  " (tol " + num(kTol) + ")";
  return worst < kTol ? pass(2, d) : fail(2, d);
}

// ------------------------------------------------------------- criterion 3
// An offset-only 1-D kernel induces an operator that commutes with rigid
// motions up to discretization; the residual shrinks as grid and sensors are
// refined together.

int criterion3() {
  constexpr double kTol = 1e-2;
  const double half = 1.5;
  std::vector<actions::AnalyticSignal> images = {actions::gaussian_blob({0.25, 0.1}, 0.3),
                                                 actions::gaussian_blob({-0.2, -0.15}, 0.22)};
  std::vector<GroupElement> gs;
  Rng rng(103);
  for (int i = 0; i < 20; ++i)
    gs.push_back(group::se2(disc_sample(rng, 0.2), rng.uniform(0.0, kTwoPi)));

  std::vector<int> widths = {64, 128, 192};
  std::vector<double> medians;
  double max128 = 0.0;
  for (int w : widths) {
    tomo::ParallelGeometry geom;
    for (int a = 0; a < w / 2; ++a) geom.angles.push_back(kTwoPi * a / (w / 2));
    for (int i = 0; i <= w; ++i) geom.offsets.push_back(-1.8 + 3.6 * i / w);
    double sigma = 3.0 * 2.0 * half / w;
    theory::OperatorHandle op =
        theory::band_operator(theory::gaussian_kernel(sigma), w, w, half, geom);
    std::vector<double> res;
    for (const GroupElement& g : gs) res.push_back(theory::check_equivariance(op, g, images));
    if (w == 128)
      for (double r : res) max128 = std::max(max128, r);
    medians.push_back(median(res));
  }
  bool decreasing = medians[0] > medians[1] && medians[1] > medians[2];
  std::string d = "induced operator residual: medians " + num(medians[0]) + " -> " +
                  num(medians[1]) + " -> " + num(medians[2]) + " over 64/128/192 grids, max at 128 " +
                  num(max128) + " (tol " + num(kTol) + ")";
  return (max128 < kTol && decreasing) ? pass(3, d) : fail(3, d);
}

// ------------------------------------------------------------- criterion 4
// The first-layer kernel of the rigid-motion network depends on the ray
// offset alone, for any weights: its spread along the probe angles vanishes.

int criterion4() {
  constexpr double kTol = 1e-12;
  std::vector<double> radii = {0.0, 0.2, 0.45, 0.8, 1.1};
  std::vector<double> angles;
  for (int i = 0; i < 16; ++i) angles.push_back(kTwoPi * i / 16);
  double worst = 0.0;
  for (int seed : {1401, 1402, 1403}) {
    Rng rng(static_cast<std::uint64_t>(seed));
    layers::KernelNet net("k", 1, 8, 6, 1, 4, rng);
    auto ks = layers::kernel_section(net, GroupId::SE2, 1.0);
    double dev = theory::check_kernel_constraint(
        [&](PointY v) { return ks(v.r, v.phi); }, radii, angles);
    worst = std::max(worst, dev);
  }
  std::string d = "lifting kernel angle spread " + num(worst) + " over 3 random nets (tol " +
                  num(kTol) + ")";
  return worst < kTol ? pass(4, d) : fail(4, d);
}

// ------------------------------------------------------------- criterion 5
// Nullspace audit: the quarter-turn maps the dense 24-angle geometry onto
// itself (audit holds), while the two-angle 0/85 degree geometry loses rays
// (audit fails with a large principal angle).

int criterion5() {
  constexpr double kHoldTol = 1e-6;
  constexpr double kFailFloor = 0.1;
  const int grid = 16, n_offsets = 33;
  std::vector<double> P = theory::discretize_rep(group::se2({0.0, 0.0}, kPi / 2), grid, grid, 1.0);

  auto audit = [&](const std::vector<double>& deg) {
    tomo::ParallelGeometry geo;
    for (double d : deg) geo.angles.push_back(d * kPi / 180.0);
    for (int i = 0; i < n_offsets; ++i) geo.offsets.push_back(-1.0 + 2.0 * i / (n_offsets - 1));
    theory::DenseOperator A = theory::discretize_radon(grid, grid, 1.0, geo);
    return theory::check_visibility(A.matrix, A.rows(), A.cols(), P, 1e-10, kHoldTol);
  };

  std::vector<double> dense;
  for (int a = 0; a < 24; ++a) dense.push_back(180.0 * a / 24);
  theory::VisibilityReport rd = audit(dense);
  theory::VisibilityReport r2 = audit({0.0, 85.0});

  bool ok = rd.holds && rd.mismatch_angle < kHoldTol && !r2.holds &&
            r2.mismatch_angle > kFailFloor;
  std::string d = "24 angles: holds=" + std::string(rd.holds ? "yes" : "no") + " angle " +
                  num(rd.mismatch_angle) + "; 2 angles: holds=" +
                  std::string(r2.holds ? "yes" : "no") + " angle " + num(r2.mismatch_angle) +
                  " (need < " + num(kHoldTol) + " and > " + num(kFailFloor) + ")";
  return ok ? pass(5, d) : fail(5, d);
}

// ------------------------------------------------------------- criterion 6
// The gradient audit of every op and layer passes through the installed
// binary, and the injected wrong gradient makes it fail.

int run_cmd(const std::string& cmd) {
  int st = std::system(cmd.c_str());
  if (st == -1 || !WIFEXITED(st)) return -1;
  return WEXITSTATUS(st);
}

int criterion6() {
  int clean = run_cmd("./eqm audit-gradients > acceptance_c6_clean.log 2>&1");
  int flipped = run_cmd("./eqm audit-gradients --inject-sign-flip > acceptance_c6_flip.log 2>&1");
  bool ok = clean == 0 && flipped == 2;
  std::string d = "gradient audit exit " + std::to_string(clean) +
                  " (want 0), sign-flip control exit " + std::to_string(flipped) + " (want 2)";
  return ok ? pass(6, d) : fail(6, d);
}

// ------------------------------------------------------------- criterion 7
// The discrete symmetries that hold exactly, not just to tolerance.

std::vector<GroupElement> rand_se2_cloud(Rng& rng, int n) {
  std::vector<GroupElement> v;
  for (int i = 0; i < n; ++i)
    v.push_back(group::se2({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)},
                           rng.uniform(0.0, kTwoPi)));
  return v;
}

layers::ModelConfig tiny_arch() {
  layers::ModelConfig cfg;
  cfg.channels = 2;
  cfg.k = 3;
  cfg.basis = 2;
  cfg.hidden = 3;
  cfg.lift_points = 6;
  return cfg;
}

train::Examples tiny_examples(const tomo::SensorSet& V, int n, std::uint64_t seed) {
  data::Dataset ds = data::build_dataset(n, V, 0.05, seed);
  return train::regression_examples(ds);
}

int criterion7() {
  constexpr double kConvTol = 1e-12;

  // group conv commutes with left translation of all points
  double conv_dev = 0.0;
  {
    Rng rng(701);
    int M = 14, J = 9, c_in = 3, c_out = 2;
    std::vector<GroupElement> in = rand_se2_cloud(rng, M);
    std::vector<GroupElement> out = rand_se2_cloud(rng, J);
    std::vector<double> feats = rand_vec(rng, static_cast<std::size_t>(M) * c_in);
    std::vector<double> qw = rand_vec(rng, static_cast<std::size_t>(M), 0.05, 0.3);
    layers::KernelNet net("k", 3, 5, 4, c_in, c_out, rng);
    layers::LayerConfig cfg;
    cfg.k = 5;
    auto run = [&](const std::vector<GroupElement>& ip, const std::vector<GroupElement>& op) {
      tensor::Tape tape;
      layers::PointCloudFeature z;
      z.on_group = true;
      z.group_points = ip;
      z.batch = 1;
      z.feats = tape.leaf({M, c_in}, feats);
      z.quad_weights = tape.leaf({M}, qw);
      return layers::group_conv(z, op, layers::bind(tape, net), cfg, false).feats.val();
    };
    std::vector<double> base = run(in, out);
    GroupElement h = group::se2({0.6, -1.1}, 2.3);
    std::vector<GroupElement> in2, out2;
    for (const auto& g : in) in2.push_back(group::compose(h, g));
    for (const auto& g : out) out2.push_back(group::compose(h, g));
    std::vector<double> moved = run(in2, out2);
    for (std::size_t i = 0; i < base.size(); ++i)
      conv_dev = std::max(conv_dev, std::abs(base[i] - moved[i]));
  }
  if (!(conv_dev < kConvTol))
    return fail(7, "group conv left-translation deviation " + num(conv_dev));

  // weighted global pool is bitwise invariant to point order
  bool pool_exact = true;
  {
    Rng rng(702);
    int M = 11, C = 3;
    std::vector<GroupElement> pts = rand_se2_cloud(rng, M);
    std::vector<double> feats = rand_vec(rng, static_cast<std::size_t>(M) * C);
    std::vector<double> qw = rand_vec(rng, static_cast<std::size_t>(M), 0.1, 1.0);
    std::vector<std::size_t> perm(static_cast<std::size_t>(M));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    auto pool = [&](const std::vector<std::size_t>& order) {
      tensor::Tape tape;
      layers::PointCloudFeature z;
      z.on_group = true;
      z.batch = 1;
      std::vector<double> f, q;
      for (std::size_t i : order) {
        z.group_points.push_back(pts[i]);
        for (int c = 0; c < C; ++c) f.push_back(feats[i * C + static_cast<std::size_t>(c)]);
        q.push_back(qw[i]);
      }
      z.feats = tape.leaf({M, C}, f);
      z.quad_weights = tape.leaf({M}, q);
      return layers::global_pool(z).val();
    };
    std::vector<std::size_t> identity_order(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) identity_order[i] = i;
    std::vector<double> a = pool(identity_order);
    std::vector<double> b = pool(perm);
    for (std::size_t i = 0; i < a.size(); ++i) pool_exact = pool_exact && a[i] == b[i];
  }
  if (!pool_exact) return fail(7, "global pool changed under a point permutation");

  // checkpoint round trip is byte-exact
  tomo::SensorSet V = sensors_deg({0.0, 85.0}, 17, -1.4, 1.4);
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 4;
  tc.seed = 11;
  tc.arch = tiny_arch();
  train::Examples ex = tiny_examples(V, 12, 77);
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  {
    layers::Model m = layers::build_model(tc.arch, V.points, 5);
    train::Trainer tr = train::make_trainer(train::as_trainable(m), tc);
    train::train_epochs(tr, ex, {}, 2);
    train::checkpoint_save("acceptance_c7_a.bin", tr);
    layers::Model m2 = layers::build_model(tc.arch, V.points, 5);
    train::Trainer tr2 = train::make_trainer(train::as_trainable(m2), tc);
    train::checkpoint_load("acceptance_c7_a.bin", tr2);
    train::checkpoint_save("acceptance_c7_b.bin", tr2);
    if (slurp("acceptance_c7_a.bin") != slurp("acceptance_c7_b.bin"))
      return fail(7, "checkpoint round trip changed bytes");
  }

  // fixed-seed training is reproducible to the byte
  auto run_fit = [&](const std::string& path) {
    layers::Model m = layers::build_model(tc.arch, V.points, 5);
    train::MetricsLog log = train::fit(train::as_trainable(m), ex, ex, tc);
    train::write_metrics_csv(path, log);
    return slurp(path);
  };
  std::string log1 = run_fit("acceptance_c7_log1.csv");
  std::string log2 = run_fit("acceptance_c7_log2.csv");
  if (log1 != log2 || log1.empty()) return fail(7, "fixed-seed runs produced different logs");

  return pass(7, "left translation " + num(conv_dev) +
                     ", pool bitwise, checkpoint byte-exact, fixed-seed logs byte-identical");
}

// ------------------------------------------------------------- criterion 8
// Invariance improves with angular coverage: the rotation residual median
// strictly drops across 2 -> 8 -> 32 measurement angles, before and after a
// short training run.

int criterion8() {
  // enough collocation points and neighbors that quadrature noise stays well
  // below the geometry effect under test
  layers::ModelConfig arch;
  arch.channels = 4;
  arch.k = 27;
  arch.basis = 8;
  arch.hidden = 16;
  arch.lift_points = 384;

  Rng grng(801);
  std::vector<GroupElement> rotations;
  std::vector<tomo::Phantom> phantoms;
  for (int i = 0; i < 20; ++i) {
    rotations.push_back(group::se2({0.0, 0.0}, grng.uniform(0.0, kTwoPi)));
    phantoms.push_back(data::gen_ring(grng).phantom);
  }

  auto medians_for = [&](bool trained) {
    std::vector<double> meds;
    for (int n_angles : {2, 8, 32}) {
      tomo::SensorSet V = uniform_sensors(n_angles, 17, -1.4, 1.4);
      layers::Model m = layers::build_model(arch, V.points, 42);
      if (trained) {
        train::TrainConfig tc;
        tc.epochs = 3;
        tc.batch = 8;
        tc.seed = 8;
        tc.arch = arch;
        train::Examples ex = tiny_examples(V, 200, 880 + static_cast<std::uint64_t>(n_angles));
        train::fit(train::as_trainable(m), ex, {}, tc);
      }
      std::vector<double> res;
      for (std::size_t i = 0; i < rotations.size(); ++i)
        res.push_back(layers::model_equivariance_residual(m, phantoms[i], rotations[i], 900));
      meds.push_back(median(res));
    }
    return meds;
  };

  std::vector<double> u = medians_for(false);
  std::vector<double> t = medians_for(true);
  bool ok = u[0] > u[1] && u[1] > u[2] && t[0] > t[1] && t[1] > t[2];
  std::string d = "rotation residual medians, untrained " + num(u[0]) + " -> " + num(u[1]) +
                  " -> " + num(u[2]) + ", trained " + num(t[0]) + " -> " + num(t[1]) + " -> " +
                  num(t[2]) + " over 2/8/32 angles";
  return ok ? pass(8, d) : fail(8, d);
}

// ------------------------------------------------------------- criterion 9
// Thickness regression from two noisy projection angles: the trained network
// must at least halve the mean-predictor error and beat a parameter-matched
// fully connected net trained identically. The cited full-scale reference
// result for this task is 9.3e-4; matching it is out of scope at this size.

int criterion9() {
  // Full recipe is 2000 epochs; this gate trains far fewer because the
  // sandbox runs on one core (~0.9 s per step, 125 steps per epoch). The
  // error bars below must still hold.
  constexpr int kEpochs = 20;

  tomo::SensorSet V = sensors_deg({0.0, 85.0}, 17, -1.4, 1.4);
  data::Dataset train_ds = data::build_dataset(1000, V, 0.05, derive_seed(900, 1));
  data::Dataset test_ds = data::build_dataset(200, V, 0.05, derive_seed(900, 2));
  train::Examples tr = train::regression_examples(train_ds);
  train::Examples te = train::regression_examples(test_ds);

  train::TrainConfig tc = train::preset("desk");
  tc.epochs = kEpochs;

  layers::Model model = layers::build_model(tc.arch, V.points, derive_seed(tc.seed, 0x4d4f44));
  std::int64_t model_params = layers::param_count(model.trainable());

  // parameter-matched fully connected control: in -> H -> H -> out
  int in_dim = static_cast<int>(V.points.size()), out_dim = 2;
  int best_h = 1;
  std::int64_t best_gap = -1;
  for (int h = 1; h <= 2048; ++h) {
    std::int64_t p = static_cast<std::int64_t>(in_dim) * h + h + static_cast<std::int64_t>(h) * h +
                     h + static_cast<std::int64_t>(h) * out_dim + out_dim;
    std::int64_t gap = std::llabs(p - model_params);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best_h = h;
    }
  }
  layers::BaselineMlp mlp = layers::build_baseline(in_dim, best_h, 3, out_dim, 77);
  std::int64_t mlp_params = layers::param_count(mlp.trainable());

  train::fit(train::as_trainable(model), tr, {}, tc);
  train::fit(train::as_trainable(mlp), tr, {}, tc);

  std::uint64_t eval_seed = derive_seed(tc.seed, 0x4556);
  double model_mse = train::evaluate(train::as_trainable(model), te, "mse", eval_seed, tc.batch).mse;
  double mlp_mse = train::evaluate(train::as_trainable(mlp), te, "mse", eval_seed, tc.batch).mse;

  double mean[2] = {0.0, 0.0};
  for (const auto& t : te.targets)
    for (int d = 0; d < 2; ++d) mean[d] += t[static_cast<std::size_t>(d)] / double(te.targets.size());
  double base_mse = 0.0;
  for (const auto& t : te.targets)
    for (int d = 0; d < 2; ++d) {
      double e = t[static_cast<std::size_t>(d)] - mean[d];
      base_mse += e * e / (2.0 * double(te.targets.size()));
    }

  bool ok = model_mse <= 0.5 * base_mse && model_mse <= mlp_mse;
  std::ostringstream d;
  d << "test mse " << num(model_mse) << " vs mean-predictor " << num(base_mse)
    << " (need <= " << num(0.5 * base_mse) << ") and fully-connected control " << num(mlp_mse)
    << " (params " << model_params << " vs " << mlp_params << ", " << kEpochs
    << " epochs; full-scale reference 9.3e-4)";
  return ok ? pass(9, d.str()) : fail(9, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <criterion 1..9>\n");
    return 1;
  }
  int n = std::atoi(argv[1]);
  switch (n) {
    case 1: return criterion1();
    case 2: return criterion2();
    case 3: return criterion3();
    case 4: return criterion4();
    case 5: return criterion5();
    case 6: return criterion6();
    case 7: return criterion7();
    case 8: return criterion8();
    case 9: return criterion9();
    default:
      std::fprintf(stderr, "usage: acceptance <criterion 1..9>\n");
      return 1;
  }
}
