#include "eqm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "json.hpp"

namespace eqm::layers {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// LeCun-uniform: variance 1/fan_in
void fill_uniform(Parameter& p, Rng& rng, int fan_in) {
  double a = std::sqrt(3.0 / fan_in);
  for (auto& v : p.value) v = rng.uniform(-a, a);
}

int lift_in_dim(GroupId gid) { return gid == GroupId::SE2 ? 1 : 3; }
int log_dim(GroupId gid) { return gid == GroupId::SE2 ? 3 : 6; }

// The SE2 kernel may depend on the offset only (the stabilizer constraint on
// the lifted kernel); AffPlus2 takes the full cylinder point, with the group
// factors handled explicitly in lifting_geometry.
void lift_coords(GroupId gid, PointY vt, double* dst) {
  if (gid == GroupId::SE2) {
    dst[0] = vt.r;
  } else {
    dst[0] = vt.r;
    dst[1] = std::cos(vt.phi);
    dst[2] = std::sin(vt.phi);
  }
}

double lift_env_dist(GroupId gid, PointY vt, double rho) {
  if (gid == GroupId::SE2) return std::abs(vt.r);
  double da = angle_dist(vt.phi, 0.0);
  return std::sqrt(vt.r * vt.r + rho * rho * da * da);
}

}  // namespace

double sensor_dist(PointY a, PointY b, double rho) {
  double dr = a.r - b.r;
  double da = rho * angle_dist(a.phi, b.phi);
  return std::sqrt(dr * dr + da * da);
}

double envelope(double d, double r) { return std::exp(-(d * d) / (r * r)); }

std::vector<int> knn_serial(int n_query, int n_base, int k, const DistFn& dist) {
  require(n_query >= 0 && n_base >= 1, "knn: empty base cloud");
  require(k >= 1 && k <= n_base, "knn: k must be in [1, n_base]");
  std::vector<int> out(static_cast<std::size_t>(n_query) * k);
  std::vector<std::pair<double, int>> d(static_cast<std::size_t>(n_base));
  for (int j = 0; j < n_query; ++j) {
    for (int i = 0; i < n_base; ++i) d[static_cast<std::size_t>(i)] = {dist(j, i), i};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (int t = 0; t < k; ++t) out[static_cast<std::size_t>(j) * k + t] = d[static_cast<std::size_t>(t)].second;
  }
  return out;
}

std::vector<int> knn(int n_query, int n_base, int k, const DistFn& dist) {
  require(n_query >= 0 && n_base >= 1, "knn: empty base cloud");
  require(k >= 1 && k <= n_base, "knn: k must be in [1, n_base]");
  std::vector<int> out(static_cast<std::size_t>(n_query) * k);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n_query; ++j) {
    std::vector<std::pair<double, int>> d(static_cast<std::size_t>(n_base));
    for (int i = 0; i < n_base; ++i) d[static_cast<std::size_t>(i)] = {dist(j, i), i};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (int t = 0; t < k; ++t) out[static_cast<std::size_t>(j) * k + t] = d[static_cast<std::size_t>(t)].second;
  }
  return out;
}

KernelNet::KernelNet(const std::string& prefix, int in_dim_, int hidden_, int basis_, int c_in_,
                     int c_out_, Rng& rng)
    : in_dim(in_dim_),
      hidden(hidden_),
      basis(basis_),
      c_in(c_in_),
      c_out(c_out_),
      w1(prefix + ".w1", {in_dim_, hidden_}),
      b1(prefix + ".b1", {hidden_}),
      gamma(prefix + ".gamma", {hidden_}, 1.0),
      beta(prefix + ".beta", {hidden_}),
      w2(prefix + ".w2", {hidden_, basis_}),
      b2(prefix + ".b2", {basis_}),
      mix(prefix + ".mix", {c_out_, c_in_, basis_}),
      bn(prefix + ".bn", hidden_) {
  require(in_dim_ >= 1 && hidden_ >= 1 && basis_ >= 1 && c_in_ >= 1 && c_out_ >= 1,
          "KernelNet: all sizes must be positive");
  fill_uniform(w1, rng, in_dim_);
  fill_uniform(w2, rng, hidden_);
  fill_uniform(mix, rng, c_in_ * basis_);
}

void KernelNet::trainable(std::vector<Parameter*>& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&w2);
  out.push_back(&b2);
  out.push_back(&mix);
}

void KernelNet::state(std::vector<Parameter*>& out) {
  trainable(out);
  out.push_back(&bn.mean);
  out.push_back(&bn.var);
}

KernelNetBound bind(Tape& tape, KernelNet& net) {
  KernelNetBound b;
  b.in_dim = net.in_dim;
  b.hidden = net.hidden;
  b.basis = net.basis;
  b.c_in = net.c_in;
  b.c_out = net.c_out;
  b.w1 = tape.use(net.w1);
  b.b1 = tape.use(net.b1);
  b.gamma = tape.use(net.gamma);
  b.beta = tape.use(net.beta);
  b.w2 = tape.use(net.w2);
  b.b2 = tape.use(net.b2);
  b.mix = tape.use(net.mix);
  b.bn = &net.bn;
  return b;
}

Tensor kernel_basis(Tensor coords, const KernelNetBound& net, bool train) {
  require(coords.shape().size() == 2 && coords.shape()[1] == net.in_dim,
          "kernel_basis: coords must be [N, in_dim]");
  require(net.bn != nullptr, "kernel_basis: unbound net");
  Tensor h = tensor::add_rowvec(tensor::matmul(coords, net.w1), net.b1);
  h = tensor::batchnorm(h, net.gamma, net.beta, *net.bn, train);
  h = tensor::swish(h);
  return tensor::add_rowvec(tensor::matmul(h, net.w2), net.b2);
}

NeighborGeometry lifting_geometry(const std::vector<PointY>& sensors,
                                  const std::vector<GroupElement>& out_points,
                                  const LayerConfig& cfg) {
  int M = static_cast<int>(sensors.size());
  int J = static_cast<int>(out_points.size());
  require(J >= 1, "lifting_geometry: no output points");
  GroupId gid = out_points[0].id;
  for (const auto& g : out_points) require(g.id == gid, "lifting_geometry: mixed group ids");
  const PointY v0{0.0, 0.0};

  std::vector<PointY> anchor(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) anchor[static_cast<std::size_t>(j)] = actions::act_y(out_points[static_cast<std::size_t>(j)], v0);

  NeighborGeometry geo;
  geo.n_out = J;
  geo.k = cfg.k;
  geo.in_dim = lift_in_dim(gid);
  geo.idx = knn(J, M, cfg.k, [&](int j, int i) {
    return sensor_dist(anchor[static_cast<std::size_t>(j)], sensors[static_cast<std::size_t>(i)], cfg.rho);
  });
  geo.coords.resize(static_cast<std::size_t>(J) * cfg.k * geo.in_dim);
  geo.factor.resize(static_cast<std::size_t>(J) * cfg.k);
  for (int j = 0; j < J; ++j) {
    const GroupElement& g = out_points[static_cast<std::size_t>(j)];
    // constant per output point: multiplier of g^-1 and inverse Jacobian of g
    // at the base point (both 1 for SE2)
    double pf = actions::multiplier_y(group::inverse(g), v0) / actions::jacobian_det_y(g, v0);
    for (int t = 0; t < cfg.k; ++t) {
      std::size_t n = static_cast<std::size_t>(j) * cfg.k + t;
      PointY vt = actions::act_y_inv(g, sensors[static_cast<std::size_t>(geo.idx[n])]);
      lift_coords(gid, vt, geo.coords.data() + n * geo.in_dim);
      geo.factor[n] = envelope(lift_env_dist(gid, vt, cfg.rho), cfg.envelope_radius) * pf;
    }
  }
  return geo;
}

NeighborGeometry group_geometry(const std::vector<GroupElement>& in_points,
                                const std::vector<GroupElement>& out_points,
                                const LayerConfig& cfg) {
  int M = static_cast<int>(in_points.size());
  int J = static_cast<int>(out_points.size());
  require(M >= 1 && J >= 1, "group_geometry: empty cloud");
  GroupId gid = out_points[0].id;
  for (const auto& g : out_points) require(g.id == gid, "group_geometry: mixed group ids");
  for (const auto& g : in_points) require(g.id == gid, "group_geometry: mixed group ids");

  NeighborGeometry geo;
  geo.n_out = J;
  geo.k = cfg.k;
  geo.in_dim = log_dim(gid);
  geo.idx = knn(J, M, cfg.k, [&](int j, int i) {
    return group::dist(in_points[static_cast<std::size_t>(i)], out_points[static_cast<std::size_t>(j)]);
  });
  geo.coords.resize(static_cast<std::size_t>(J) * cfg.k * geo.in_dim);
  geo.factor.resize(static_cast<std::size_t>(J) * cfg.k);
  for (int j = 0; j < J; ++j) {
    for (int t = 0; t < cfg.k; ++t) {
      std::size_t n = static_cast<std::size_t>(j) * cfg.k + t;
      GroupElement h = group::compose(group::inverse(in_points[static_cast<std::size_t>(geo.idx[n])]),
                                      out_points[static_cast<std::size_t>(j)]);
      group::LogCoords lc = group::log(h);
      double d2 = 0.0;
      for (int c = 0; c < geo.in_dim; ++c) {
        geo.coords[n * geo.in_dim + c] = lc.c[static_cast<std::size_t>(c)];
        d2 += lc.c[static_cast<std::size_t>(c)] * lc.c[static_cast<std::size_t>(c)];
      }
      geo.factor[n] = envelope(std::sqrt(d2), cfg.envelope_radius);
    }
  }
  return geo;
}

Tensor conv_apply(const NeighborGeometry& geo, const PointCloudFeature& in,
                  const KernelNetBound& net, bool train) {
  require(in.feats.tape != nullptr, "conv_apply: cloud carries no tensors");
  Tape& tape = *in.feats.tape;
  int M = in.points(), b = in.batch, J = geo.n_out, T = geo.k;
  require(geo.in_dim == net.in_dim, "conv_apply: coordinate arity mismatch");
  require(in.feats.shape() == std::vector<int>{b * M, net.c_in},
          "conv_apply: feature shape mismatch");
  require(in.quad_weights.shape() == std::vector<int>{M},
          "conv_apply: quadrature weight shape mismatch");

  Tensor coords = tape.leaf({J * T, geo.in_dim}, geo.coords);
  Tensor kb = tensor::reshape(kernel_basis(coords, net, train), {J, T, net.basis});
  Tensor fac = tape.leaf({J, T}, geo.factor);
  Tensor q = tensor::mul(
      tensor::reshape(tensor::gather(tensor::reshape(in.quad_weights, {M, 1}), geo.idx, J, T),
                      {J, T}),
      fac);
  if (b > 1) {
    kb = tensor::repeat_rows(kb, b);
    q = tensor::repeat_rows(q, b);
  }
  std::vector<int> idxb(static_cast<std::size_t>(b) * J * T);
  for (int i = 0; i < b; ++i)
    for (std::size_t n = 0; n < geo.idx.size(); ++n)
      idxb[static_cast<std::size_t>(i) * geo.idx.size() + n] = geo.idx[n] + i * M;
  Tensor z = tensor::gather(in.feats, idxb, b * J, T);
  return tensor::pointconv(net.mix, kb, z, q);
}

PointCloudFeature lifting_conv(const PointCloudFeature& y,
                               const std::vector<GroupElement>& out_points,
                               const KernelNetBound& net, const LayerConfig& cfg, bool train) {
  require(!y.on_group, "lifting_conv: input must be a sensor cloud");
  NeighborGeometry geo = lifting_geometry(y.sensor_points, out_points, cfg);
  PointCloudFeature out;
  out.on_group = true;
  out.group_points = out_points;
  out.batch = y.batch;
  out.feats = conv_apply(geo, y, net, train);
  out.quad_weights =
      y.feats.tape->fill({static_cast<int>(out_points.size())}, cfg.out_quad_weight);
  return out;
}

PointCloudFeature group_conv(const PointCloudFeature& z,
                             const std::vector<GroupElement>& out_points,
                             const KernelNetBound& net, const LayerConfig& cfg, bool train) {
  require(z.on_group, "group_conv: input must be a group cloud");
  NeighborGeometry geo = group_geometry(z.group_points, out_points, cfg);
  PointCloudFeature out;
  out.on_group = true;
  out.group_points = out_points;
  out.batch = z.batch;
  out.feats = conv_apply(geo, z, net, train);
  out.quad_weights =
      z.feats.tape->fill({static_cast<int>(out_points.size())}, cfg.out_quad_weight);
  return out;
}

std::function<double(double, double)> kernel_section(KernelNet& net, GroupId gid,
                                                     double envelope_radius, double rho) {
  require(net.in_dim == lift_in_dim(gid), "kernel_section: net arity does not match the group");
  return [&net, gid, envelope_radius, rho](double r, double phi) {
    Tape tape;
    KernelNetBound nb = bind(tape, net);
    std::vector<double> row(static_cast<std::size_t>(net.in_dim));
    lift_coords(gid, PointY{r, phi}, row.data());
    Tensor kb = kernel_basis(tape.leaf({1, net.in_dim}, row), nb, false);
    const auto& kv = kb.val();
    double acc = 0.0;
    for (int bb = 0; bb < net.basis; ++bb) acc += net.mix.value[static_cast<std::size_t>(bb)] * kv[static_cast<std::size_t>(bb)];
    return acc * envelope(lift_env_dist(gid, PointY{r, phi}, rho), envelope_radius);
  };
}

std::vector<GroupElement> sample_group_points(GroupId gid, int M, double support_radius,
                                              Rng& rng) {
  require(M >= 0, "sample_group_points: negative count");
  require(support_radius > 0.0, "sample_group_points: support radius must be positive");
  std::vector<GroupElement> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    double rr = support_radius * std::sqrt(rng.uniform());
    double th = rng.uniform(0.0, kTwoPi);
    Vec2 s{rr * std::cos(th), rr * std::sin(th)};
    if (gid == GroupId::SE2) {
      out.push_back(group::se2(s, rng.uniform(0.0, kTwoPi)));
    } else {
      GroupElement a = group::sample_group(gid, rng);  // linear part only
      out.push_back(group::aff(s, a.A));
    }
  }
  return out;
}

double group_domain_volume(GroupId gid, double support_radius) {
  double disc = kPi * support_radius * support_radius;
  if (gid == GroupId::SE2) return disc * kTwoPi;
  // translation disc x angle x sig1 x sig2 x tau sampling box
  return disc * kTwoPi * 0.5 * 0.5 * 1.0;
}

PointCloudFeature downsample(const PointCloudFeature& z, int factor, Rng& rng) {
  require(z.on_group, "downsample: input layer clouds are never downsampled");
  require(factor >= 1, "downsample: factor must be at least 1");
  int M = z.points();
  require(M >= 1, "downsample: empty cloud");
  int Mp = (M + factor - 1) / factor;

  std::vector<int> pool(static_cast<std::size_t>(M));
  std::iota(pool.begin(), pool.end(), 0);
  for (int t = 0; t < Mp; ++t) {
    int j = t + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(M - t)));
    std::swap(pool[static_cast<std::size_t>(t)], pool[static_cast<std::size_t>(j)]);
  }
  std::vector<int> keep(pool.begin(), pool.begin() + Mp);
  std::sort(keep.begin(), keep.end());

  PointCloudFeature out;
  out.on_group = true;
  out.batch = z.batch;
  out.group_points.reserve(static_cast<std::size_t>(Mp));
  for (int i : keep) out.group_points.push_back(z.group_points[static_cast<std::size_t>(i)]);

  int C = z.feats.shape()[1];
  std::vector<int> idxb(static_cast<std::size_t>(z.batch) * Mp);
  for (int i = 0; i < z.batch; ++i)
    for (int m = 0; m < Mp; ++m)
      idxb[static_cast<std::size_t>(i) * Mp + m] = i * M + keep[static_cast<std::size_t>(m)];
  out.feats =
      tensor::reshape(tensor::gather(z.feats, idxb, z.batch * Mp, 1), {z.batch * Mp, C});
  out.quad_weights = tensor::scale(
      tensor::reshape(tensor::gather(tensor::reshape(z.quad_weights, {M, 1}), keep, Mp, 1), {Mp}),
      static_cast<double>(M) / Mp);
  return out;
}

Tensor global_pool(const PointCloudFeature& z) {
  int M = z.points(), b = z.batch;
  require(M >= 1, "global_pool: empty cloud");
  Tensor w = z.quad_weights;
  if (b > 1) w = tensor::reshape(tensor::repeat_rows(tensor::reshape(w, {M, 1}), b), {b * M});
  std::vector<int> seg(static_cast<std::size_t>(b) * M);
  for (int i = 0; i < b; ++i)
    for (int m = 0; m < M; ++m) seg[static_cast<std::size_t>(i) * M + m] = i;
  return tensor::pool_mean_sorted(z.feats, w, seg, b);
}

ResidualBlockParams::ResidualBlockParams(const std::string& prefix, GroupId gid, int c_in_,
                                         int c_out_, int hidden, int basis, Rng& rng)
    : c_in(c_in_),
      c_out(c_out_),
      conv1(prefix + ".conv1", log_dim(gid), hidden, basis, c_in_, c_out_, rng),
      conv2(prefix + ".conv2", log_dim(gid), hidden, basis, c_out_, c_out_, rng),
      conv3(prefix + ".conv3", log_dim(gid), hidden, basis, c_out_, c_out_, rng),
      g1(prefix + ".bn1.gamma", {c_out_}, 1.0),
      be1(prefix + ".bn1.beta", {c_out_}),
      g2(prefix + ".bn2.gamma", {c_out_}, 1.0),
      be2(prefix + ".bn2.beta", {c_out_}),
      g3(prefix + ".bn3.gamma", {c_out_}, 1.0),
      be3(prefix + ".bn3.beta", {c_out_}),
      bn1(prefix + ".bn1", c_out_),
      bn2(prefix + ".bn2", c_out_),
      bn3(prefix + ".bn3", c_out_) {
  if (c_in_ != c_out_) {
    skip = Parameter(prefix + ".skip", {c_in_, c_out_});
    fill_uniform(skip, rng, c_in_);
  }
}

void ResidualBlockParams::trainable(std::vector<Parameter*>& out) {
  conv1.trainable(out);
  conv2.trainable(out);
  conv3.trainable(out);
  out.push_back(&g1);
  out.push_back(&be1);
  out.push_back(&g2);
  out.push_back(&be2);
  out.push_back(&g3);
  out.push_back(&be3);
  if (c_in != c_out) out.push_back(&skip);
}

void ResidualBlockParams::state(std::vector<Parameter*>& out) {
  trainable(out);
  out.push_back(&conv1.bn.mean);
  out.push_back(&conv1.bn.var);
  out.push_back(&conv2.bn.mean);
  out.push_back(&conv2.bn.var);
  out.push_back(&conv3.bn.mean);
  out.push_back(&conv3.bn.var);
  out.push_back(&bn1.mean);
  out.push_back(&bn1.var);
  out.push_back(&bn2.mean);
  out.push_back(&bn2.var);
  out.push_back(&bn3.mean);
  out.push_back(&bn3.var);
}

ResidualBlockBound bind(Tape& tape, ResidualBlockParams& p) {
  ResidualBlockBound b;
  b.c_in = p.c_in;
  b.c_out = p.c_out;
  b.conv1 = bind(tape, p.conv1);
  b.conv2 = bind(tape, p.conv2);
  b.conv3 = bind(tape, p.conv3);
  b.g1 = tape.use(p.g1);
  b.be1 = tape.use(p.be1);
  b.g2 = tape.use(p.g2);
  b.be2 = tape.use(p.be2);
  b.g3 = tape.use(p.g3);
  b.be3 = tape.use(p.be3);
  b.bn1 = &p.bn1;
  b.bn2 = &p.bn2;
  b.bn3 = &p.bn3;
  b.has_skip = (p.c_in != p.c_out);
  if (b.has_skip) b.skip = tape.use(p.skip);
  return b;
}

PointCloudFeature residual_block(const PointCloudFeature& z, const ResidualBlockBound& p,
                                 const LayerConfig& cfg, bool train) {
  require(z.on_group, "residual_block: needs a group cloud");
  require(z.feats.shape()[1] == p.c_in, "residual_block: channel mismatch");
  NeighborGeometry geo = group_geometry(z.group_points, z.group_points, cfg);

  auto convbn = [&](const KernelNetBound& net, Tensor g, Tensor be, tensor::BatchNormState* st,
                    Tensor x) {
    PointCloudFeature tmp = z;
    tmp.feats = x;
    Tensor c = conv_apply(geo, tmp, net, train);
    return tensor::relu(tensor::batchnorm(c, g, be, *st, train));
  };
  Tensor a = convbn(p.conv1, p.g1, p.be1, p.bn1, z.feats);
  a = convbn(p.conv2, p.g2, p.be2, p.bn2, a);
  a = convbn(p.conv3, p.g3, p.be3, p.bn3, a);
  Tensor sk = p.has_skip ? tensor::matmul(z.feats, p.skip) : z.feats;

  PointCloudFeature out = z;
  out.feats = tensor::add(a, sk);
  return out;
}

Model build_model(const ModelConfig& cfg, const std::vector<PointY>& sensors,
                  std::uint64_t seed) {
  require(!sensors.empty(), "build_model: no sensors");
  require(cfg.channels >= 1 && cfg.k >= 1 && cfg.basis >= 1 && cfg.hidden >= 1 &&
              cfg.lift_points >= 1 && cfg.head_outputs >= 1,
          "build_model: all sizes must be positive");
  require(cfg.support_radius > 0.0 && cfg.envelope_radius_lift > 0.0 &&
              cfg.envelope_radius_group > 0.0 && cfg.rho > 0.0,
          "build_model: all radii must be positive");
  Rng rng(seed);
  Model m;
  m.cfg = cfg;
  m.sensors = sensors;
  int V = static_cast<int>(sensors.size());
  // softplus(raw) == 1/V at init
  m.raw_quad = Parameter("quad.raw", {V}, std::log(std::expm1(1.0 / V)));
  m.lift = KernelNet("lift", lift_in_dim(cfg.gid), cfg.hidden, cfg.basis, 1, cfg.channels, rng);
  int c = cfg.channels;
  m.block[0] = ResidualBlockParams("block1", cfg.gid, c, c, cfg.hidden, cfg.basis, rng);
  m.block[1] = ResidualBlockParams("block2", cfg.gid, c, 2 * c, cfg.hidden, cfg.basis, rng);
  m.block[2] = ResidualBlockParams("block3", cfg.gid, 2 * c, 4 * c, cfg.hidden, cfg.basis, rng);
  m.head_w = Parameter("head.w", {4 * c, cfg.head_outputs});
  fill_uniform(m.head_w, rng, 4 * c);
  m.head_b = Parameter("head.b", {cfg.head_outputs});
  return m;
}

std::vector<Parameter*> Model::trainable() {
  std::vector<Parameter*> out;
  out.push_back(&raw_quad);
  lift.trainable(out);
  for (auto& b : block) b.trainable(out);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<Parameter*> Model::state() {
  std::vector<Parameter*> out;
  out.push_back(&raw_quad);
  lift.state(out);
  for (auto& b : block) b.state(out);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

ModelBound bind(Tape& tape, Model& m) {
  ModelBound b;
  b.cfg = &m.cfg;
  b.sensors = &m.sensors;
  b.raw_quad = tape.use(m.raw_quad);
  b.lift = bind(tape, m.lift);
  for (int i = 0; i < 3; ++i) b.block[static_cast<std::size_t>(i)] = bind(tape, m.block[static_cast<std::size_t>(i)]);
  b.head_w = tape.use(m.head_w);
  b.head_b = tape.use(m.head_b);
  return b;
}

Tensor model_forward(const ModelBound& m, const std::vector<std::vector<double>>& ys,
                     Rng& colloc_rng, bool train) {
  require(m.cfg != nullptr && m.sensors != nullptr, "model_forward: unbound model");
  const ModelConfig& cfg = *m.cfg;
  const auto& sensors = *m.sensors;
  int V = static_cast<int>(sensors.size());
  int b = static_cast<int>(ys.size());
  require(b >= 1, "model_forward: empty batch");
  for (const auto& y : ys)
    require(static_cast<int>(y.size()) == V, "model_forward: measurement size mismatch");
  require(m.raw_quad.tape != nullptr, "model_forward: unbound model");
  Tape& tape = *m.raw_quad.tape;

  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(b) * V);
  for (const auto& y : ys) flat.insert(flat.end(), y.begin(), y.end());

  PointCloudFeature y0;
  y0.on_group = false;
  y0.sensor_points = sensors;
  y0.batch = b;
  y0.feats = tape.leaf({b * V, 1}, std::move(flat));
  y0.quad_weights = tensor::softplus(m.raw_quad);

  auto pts = sample_group_points(cfg.gid, cfg.lift_points, cfg.support_radius, colloc_rng);
  LayerConfig lift_cfg;
  lift_cfg.k = std::min(cfg.k, V);
  lift_cfg.envelope_radius = cfg.envelope_radius_lift;
  lift_cfg.rho = cfg.rho;
  lift_cfg.out_quad_weight =
      group_domain_volume(cfg.gid, cfg.support_radius) / cfg.lift_points;
  PointCloudFeature z = lifting_conv(y0, pts, m.lift, lift_cfg, train);

  for (int i = 0; i < 3; ++i) {
    if (i > 0) z = downsample(z, 2, colloc_rng);
    LayerConfig bc;
    bc.k = std::min(cfg.k, z.points());
    bc.envelope_radius = cfg.envelope_radius_group;
    z = residual_block(z, m.block[static_cast<std::size_t>(i)], bc, train);
  }
  Tensor pooled = global_pool(z);
  return tensor::add_rowvec(tensor::matmul(pooled, m.head_w), m.head_b);
}

Tensor model_forward(Tape& tape, Model& m, const std::vector<std::vector<double>>& ys,
                     Rng& colloc_rng, bool train) {
  ModelBound b = bind(tape, m);
  return model_forward(b, ys, colloc_rng, train);
}

std::int64_t param_count(const std::vector<Parameter*>& ps) {
  std::int64_t n = 0;
  for (const Parameter* p : ps) n += tensor::numel_of(p->shape);
  return n;
}

BaselineMlp build_baseline(int in_dim, int hidden, int depth, int out_dim, std::uint64_t seed) {
  require(in_dim >= 1 && hidden >= 1 && depth >= 1 && out_dim >= 1,
          "build_baseline: all sizes must be positive");
  Rng rng(seed);
  BaselineMlp m;
  m.in_dim = in_dim;
  m.hidden = hidden;
  m.depth = depth;
  m.out_dim = out_dim;
  for (int i = 0; i <= depth; ++i) {
    int ni = (i == 0) ? in_dim : hidden;
    int no = (i == depth) ? out_dim : hidden;
    m.w.emplace_back("mlp.w" + std::to_string(i), std::vector<int>{ni, no});
    fill_uniform(m.w.back(), rng, ni);
    m.b.emplace_back("mlp.b" + std::to_string(i), std::vector<int>{no});
  }
  return m;
}

std::vector<Parameter*> BaselineMlp::trainable() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.push_back(&w[i]);
    out.push_back(&b[i]);
  }
  return out;
}

Tensor baseline_forward(Tape& tape, BaselineMlp& m, const std::vector<std::vector<double>>& ys) {
  int b = static_cast<int>(ys.size());
  require(b >= 1, "baseline_forward: empty batch");
  for (const auto& y : ys)
    require(static_cast<int>(y.size()) == m.in_dim, "baseline_forward: input size mismatch");
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(b) * m.in_dim);
  for (const auto& y : ys) flat.insert(flat.end(), y.begin(), y.end());
  Tensor x = tape.leaf({b, m.in_dim}, std::move(flat));
  for (int i = 0; i <= m.depth; ++i) {
    x = tensor::add_rowvec(tensor::matmul(x, tape.use(m.w[static_cast<std::size_t>(i)])),
                           tape.use(m.b[static_cast<std::size_t>(i)]));
    if (i < m.depth) x = tensor::relu(x);
  }
  return x;
}

double invariance_residual(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                           const tomo::Phantom& p, const GroupElement& g,
                           const std::vector<PointY>& sensors) {
  tomo::SensorSet V{sensors};
  std::vector<double> y = tomo::measure(p, V);
  std::vector<double> yg = tomo::measure(tomo::transform_phantom(g, p), V);
  std::vector<double> a = f(y);
  std::vector<double> bt = f(yg);
  require(a.size() == bt.size() && !a.empty(), "invariance_residual: output size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - bt[i]) * (a[i] - bt[i]);
    den += a[i] * a[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

double model_equivariance_residual(Model& m, const tomo::Phantom& p, const GroupElement& g,
                                   std::uint64_t colloc_seed) {
  auto f = [&m, colloc_seed](const std::vector<double>& y) {
    Tape tape;
    Rng cr(colloc_seed);
    Tensor out = model_forward(tape, m, {y}, cr, false);
    return out.val();
  };
  return invariance_residual(f, p, g, m.sensors);
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["group"] = cfg.gid == GroupId::SE2 ? "se2" : "aff2";
  j["channels"] = cfg.channels;
  j["k"] = cfg.k;
  j["basis"] = cfg.basis;
  j["hidden"] = cfg.hidden;
  j["lift_points"] = cfg.lift_points;
  j["support_radius"] = cfg.support_radius;
  j["envelope_radius_lift"] = cfg.envelope_radius_lift;
  j["envelope_radius_group"] = cfg.envelope_radius_group;
  j["rho"] = cfg.rho;
  j["head_outputs"] = cfg.head_outputs;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  require(j.is_object(), "model config: document must be an object");
  static const std::unordered_set<std::string> known = {
      "group",          "channels",
      "k",              "basis",
      "hidden",         "lift_points",
      "support_radius", "envelope_radius_lift",
      "envelope_radius_group", "rho",
      "head_outputs"};
  for (const auto& item : j.items())
    if (known.find(item.key()) == known.end())
      throw std::invalid_argument("model config: unknown key '" + item.key() + "'");
  ModelConfig cfg;
  try {
    if (j.contains("group")) {
      std::string s = j.at("group").get<std::string>();
      if (s == "se2")
        cfg.gid = GroupId::SE2;
      else if (s == "aff2")
        cfg.gid = GroupId::AffPlus2;
      else
        throw std::invalid_argument("model config: group must be 'se2' or 'aff2'");
    }
    cfg.channels = j.value("channels", cfg.channels);
    cfg.k = j.value("k", cfg.k);
    cfg.basis = j.value("basis", cfg.basis);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.lift_points = j.value("lift_points", cfg.lift_points);
    cfg.support_radius = j.value("support_radius", cfg.support_radius);
    cfg.envelope_radius_lift = j.value("envelope_radius_lift", cfg.envelope_radius_lift);
    cfg.envelope_radius_group = j.value("envelope_radius_group", cfg.envelope_radius_group);
    cfg.rho = j.value("rho", cfg.rho);
    cfg.head_outputs = j.value("head_outputs", cfg.head_outputs);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  require(cfg.channels >= 1 && cfg.k >= 1 && cfg.basis >= 1 && cfg.hidden >= 1 &&
              cfg.lift_points >= 1 && cfg.head_outputs >= 1,
          "model config: all sizes must be positive");
  require(cfg.support_radius > 0.0 && cfg.envelope_radius_lift > 0.0 &&
              cfg.envelope_radius_group > 0.0 && cfg.rho > 0.0,
          "model config: all radii must be positive");
  return cfg;
}

}  // namespace eqm::layers
