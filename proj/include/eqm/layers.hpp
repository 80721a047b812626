#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eqm/actions.hpp"
#include "eqm/group.hpp"
#include "eqm/rng.hpp"
#include "eqm/tensor.hpp"
#include "eqm/tomo.hpp"

// Convolution layers on irregular point clouds: a lifting layer from sparse
// sinogram samples to a cloud on the group, group convolutions between such
// clouds, and an invariant pooling head. Kernels are small MLPs evaluated on
// relative coordinates; each output point sums over its k nearest neighbors
// with a smooth locality envelope (PointConv-style contraction).

namespace eqm::layers {

using actions::PointY;
using group::GroupElement;
using group::GroupId;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;

// Activation flowing through the network: M locations shared by every batch
// item, features stacked item-major as [batch*M, C], quadrature weights [M].
struct PointCloudFeature {
  bool on_group = false;
  std::vector<PointY> sensor_points;       // input layer (on_group == false)
  std::vector<GroupElement> group_points;  // inner layers
  int batch = 1;
  Tensor feats;         // [batch * M, C]
  Tensor quad_weights;  // [M]
  int points() const {
    return on_group ? static_cast<int>(group_points.size())
                    : static_cast<int>(sensor_points.size());
  }
};

// Neighbor metric on the sinogram cylinder:
// d^2 = (r1-r2)^2 + rho^2 * angdist(phi1,phi2)^2, rho = phantom support
// radius. Approximate by necessity (no exact SE(2)-invariant metric separates
// cylinder points); used for neighbor selection only, never as a kernel
// argument.
double sensor_dist(PointY a, PointY b, double rho);

// Exact k nearest neighbors of each query: the k smallest distances, ties
// broken by lower base index; row j lists base indices ordered by
// (distance, index). dist(query j, base i) must be pure and safe to call
// concurrently.
using DistFn = std::function<double(int, int)>;
std::vector<int> knn(int n_query, int n_base, int k, const DistFn& dist);
std::vector<int> knn_serial(int n_query, int n_base, int k, const DistFn& dist);

// exp(-d^2 / r^2); r = infinity turns the envelope off.
double envelope(double d, double r);

// Kernel network: a two-layer MLP (linear, batchnorm, swish, linear) mapping
// relative coordinates to B basis values, plus mixing weights [c_out,c_in,B]
// that combine the basis across channel pairs.
struct KernelNet {
  int in_dim = 1, hidden = 32, basis = 16, c_in = 1, c_out = 1;
  Parameter w1, b1, gamma, beta, w2, b2, mix;
  tensor::BatchNormState bn;

  KernelNet() = default;
  KernelNet(const std::string& prefix, int in_dim, int hidden, int basis, int c_in, int c_out,
            Rng& rng);
  void trainable(std::vector<Parameter*>& out);
  void state(std::vector<Parameter*>& out);  // trainable plus running stats
};

// Per-tape view of a kernel net: parameters bound as leaves, or free leaves
// during gradient checks.
struct KernelNetBound {
  int in_dim = 1, hidden = 32, basis = 16, c_in = 1, c_out = 1;
  Tensor w1, b1, gamma, beta, w2, b2, mix;
  tensor::BatchNormState* bn = nullptr;
};
KernelNetBound bind(Tape& tape, KernelNet& net);

// coords [N, in_dim] -> basis values [N, B].
Tensor kernel_basis(Tensor coords, const KernelNetBound& net, bool train);

struct LayerConfig {
  int k = 27;
  double envelope_radius = 1.0;  // infinity disables the envelope
  double rho = 1.0;              // sensor metric angular weight (layer 1)
  double out_quad_weight = 1.0;  // |domain| / M for the produced cloud
};

// Geometry shared by the convolutions of one layer (or one residual block):
// per output point the neighbor indices, the kernel coordinates of each
// neighbor, and a constant scalar factor (envelope times group factors).
struct NeighborGeometry {
  int n_out = 0, k = 0, in_dim = 0;
  std::vector<int> idx;        // [n_out * k] indices into the input cloud
  std::vector<double> coords;  // [n_out * k, in_dim] kernel arguments
  std::vector<double> factor;  // [n_out * k] envelope * multiplier / jacobian
};

// Layer-1 geometry: neighbors of act_y(g, v0) among the sensors. The kernel
// sees v~ = act_y_inv(g, v) as (r~) for SE2 and (r~, cos phi~, sin phi~) for
// AffPlus2; the SE2 reduction keeps the kernel angle-free, which is exactly
// the stabilizer constraint on the lifted kernel. factor carries the envelope
// in v~ coordinates and, for AffPlus2, the base-point multiplier and inverse
// Jacobian of the output element.
NeighborGeometry lifting_geometry(const std::vector<PointY>& sensors,
                                  const std::vector<GroupElement>& out_points,
                                  const LayerConfig& cfg);

// Inner geometry: neighbors under the left-invariant group distance; the
// kernel sees log(g_i^-1 g'), so the layer commutes with left translation of
// all points exactly.
NeighborGeometry group_geometry(const std::vector<GroupElement>& in_points,
                                const std::vector<GroupElement>& out_points,
                                const LayerConfig& cfg);

// The shared contraction over a geometry:
// out[j,c'] = sum_{t,c,b} mix[c',c,b] K_b(coords[j,t]) factor[j,t]
//             qw[idx[j,t]] feats[idx[j,t], c], batched over items.
Tensor conv_apply(const NeighborGeometry& geo, const PointCloudFeature& in,
                  const KernelNetBound& net, bool train);

PointCloudFeature lifting_conv(const PointCloudFeature& y,
                               const std::vector<GroupElement>& out_points,
                               const KernelNetBound& net, const LayerConfig& cfg, bool train);

PointCloudFeature group_conv(const PointCloudFeature& z,
                             const std::vector<GroupElement>& out_points,
                             const KernelNetBound& net, const LayerConfig& cfg, bool train);

// The effective layer-1 kernel (first channel pair, envelope included,
// eval-mode batchnorm) as a plain function on the cylinder, for constraint
// audits.
std::function<double(double, double)> kernel_section(KernelNet& net, GroupId gid,
                                                     double envelope_radius, double rho = 1.0);

// Collocation points: translations uniform on the disc of the given radius;
// SE2 angle uniform over the circle; AffPlus2 linear part per
// group::sample_group defaults.
std::vector<GroupElement> sample_group_points(GroupId gid, int M, double support_radius,
                                              Rng& rng);

// Sampling volume matching sample_group_points, used for the Monte-Carlo
// quadrature weights |domain| / M of inner clouds.
double group_domain_volume(GroupId gid, double support_radius);

// Random subset of ceil(M / factor) locations (uniform without replacement,
// kept in ascending index order); quadrature weights rescaled by M / M' so
// the total mass is preserved.
PointCloudFeature downsample(const PointCloudFeature& z, int factor, Rng& rng);

// Quadrature-weighted mean of the features over each item's points
// -> [batch, C]. Sums run in sorted order, so the result is exactly invariant
// under permutations of the points.
Tensor global_pool(const PointCloudFeature& z);

// Three convolutions (each followed by batchnorm and relu) plus an identity
// skip; the skip gets a 1x1 linear map when the channel counts differ.
struct ResidualBlockParams {
  int c_in = 1, c_out = 1;
  KernelNet conv1, conv2, conv3;
  Parameter g1, be1, g2, be2, g3, be3;
  tensor::BatchNormState bn1, bn2, bn3;
  Parameter skip;  // [c_in, c_out] iff c_in != c_out

  ResidualBlockParams() = default;
  ResidualBlockParams(const std::string& prefix, GroupId gid, int c_in, int c_out, int hidden,
                      int basis, Rng& rng);
  void trainable(std::vector<Parameter*>& out);
  void state(std::vector<Parameter*>& out);
};

struct ResidualBlockBound {
  int c_in = 1, c_out = 1;
  KernelNetBound conv1, conv2, conv3;
  Tensor g1, be1, g2, be2, g3, be3;
  tensor::BatchNormState* bn1 = nullptr;
  tensor::BatchNormState* bn2 = nullptr;
  tensor::BatchNormState* bn3 = nullptr;
  bool has_skip = false;
  Tensor skip;
};
ResidualBlockBound bind(Tape& tape, ResidualBlockParams& p);

// in and out locations coincide; the block's three convolutions share one
// neighbor geometry.
PointCloudFeature residual_block(const PointCloudFeature& z, const ResidualBlockBound& p,
                                 const LayerConfig& cfg, bool train);

struct ModelConfig {
  GroupId gid = GroupId::SE2;
  int channels = 8;  // lifting output channels; doubled at each downsampling
  int k = 27;
  int basis = 16;
  int hidden = 32;
  int lift_points = 512;
  double support_radius = 1.0;
  double envelope_radius_lift = 1.0;
  double envelope_radius_group = 1.0;
  double rho = 1.0;
  int head_outputs = 2;
};

// lifting -> block(C) -> halve points -> block(2C) -> halve -> block(4C)
// -> weighted global mean -> linear head.
struct Model {
  ModelConfig cfg;
  std::vector<PointY> sensors;
  Parameter raw_quad;  // softplus(raw_quad) are the learned layer-1 weights
  KernelNet lift;
  std::array<ResidualBlockParams, 3> block;
  Parameter head_w, head_b;

  std::vector<Parameter*> trainable();
  std::vector<Parameter*> state();  // trainable plus batchnorm running stats
};

Model build_model(const ModelConfig& cfg, const std::vector<PointY>& sensors,
                  std::uint64_t seed);

struct ModelBound {
  const ModelConfig* cfg = nullptr;
  const std::vector<PointY>* sensors = nullptr;
  Tensor raw_quad;
  KernelNetBound lift;
  std::array<ResidualBlockBound, 3> block;
  Tensor head_w, head_b;
};
ModelBound bind(Tape& tape, Model& m);

// Forward over a batch of measured vectors (each of size |sensors|).
// Collocation points and downsampling subsets are drawn from colloc_rng, so a
// fixed seed fixes the evaluation exactly. k is clamped to the cloud size on
// the small inner clouds.
Tensor model_forward(const ModelBound& m, const std::vector<std::vector<double>>& ys,
                     Rng& colloc_rng, bool train);
Tensor model_forward(Tape& tape, Model& m, const std::vector<std::vector<double>>& ys,
                     Rng& colloc_rng, bool train);

std::int64_t param_count(const std::vector<Parameter*>& ps);

// Plain fully-connected relu network on the raw measurement vector; the
// non-equivariant control.
struct BaselineMlp {
  int in_dim = 1, hidden = 1, depth = 2, out_dim = 1;
  std::vector<Parameter> w, b;
  std::vector<Parameter*> trainable();
};
BaselineMlp build_baseline(int in_dim, int hidden, int depth, int out_dim, std::uint64_t seed);
Tensor baseline_forward(Tape& tape, BaselineMlp& m, const std::vector<std::vector<double>>& ys);

// ||f(measure(g p)) - f(measure(p))|| / ||f(measure(p))|| for any vector
// map f of the measurements.
double invariance_residual(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                           const tomo::Phantom& p, const GroupElement& g,
                           const std::vector<PointY>& sensors);

// The invariant-head deviation of the model between a phantom and its
// transform, eval-mode batchnorm, identical collocation draws on both sides.
double model_equivariance_residual(Model& m, const tomo::Phantom& p, const GroupElement& g,
                                   std::uint64_t colloc_seed);

// Architecture configuration as a JSON document; unknown keys are rejected.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace eqm::layers
