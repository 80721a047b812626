#pragma once

// Reverse-mode autodiff over dense 64-bit arrays. Deliberately small: only
// the ops the network needs, each with a hand-written backward. Heavy
// contractions route through eqm::kernels, so outputs and gradients are
// bit-identical for any thread count.
//
// Usage pattern: Parameters live outside any tape (persistent identity for
// the optimizer and checkpoint files). Each forward pass builds a fresh
// Tape, binds parameters as leaves via use(), and backward() fills node
// grads and then accumulates them into Parameter::grad. A tape sweeps once;
// a second backward() throws.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace eqm::tensor {

std::int64_t numel_of(const std::vector<int>& shape);

// Persistent weight array with a stable name for optimizer state and
// checkpoint files. grad accumulates across backward() calls until the
// optimizer clears it.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_, double fill = 0.0);
};

class Tape;

// Handle into a tape; copy freely, validity is tied to the tape's lifetime.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;

  const std::vector<int>& shape() const;
  std::int64_t numel() const;
  std::vector<double>& val() const;
  std::vector<double>& grad() const;
};

struct Node {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::function<void(Tape&)> back;  // empty for leaves
};

class Tape {
 public:
  Tensor leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  Tensor fill(std::vector<int> shape, double value, bool requires_grad = false);
  // Leaf initialized from p.value; backward() adds the node grad to p.grad.
  Tensor use(Parameter& p);

  // Seeds d(loss) = 1 and sweeps nodes in reverse creation order, which is a
  // reverse topological order by construction. loss must be scalar. Throws
  // std::logic_error on a second call (tape consumed).
  void backward(Tensor loss);

  Node& node(int id) { return *nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return *nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  Tensor make(std::vector<int> shape, bool requires_grad);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<int, Parameter*>> bound_;
  bool consumed_ = false;
};

// Elementwise; a and b must have identical shapes.
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double c);
Tensor relu(Tensor a);
Tensor swish(Tensor a);  // x * sigmoid(x)
Tensor exp(Tensor a);
Tensor square(Tensor a);
Tensor softplus(Tensor a);  // log(1 + e^x), overflow-safe

// [m,k] x [k,n] -> [m,n]
Tensor matmul(Tensor a, Tensor b);
// out[i,c] = a[i,c] + b[c]
Tensor add_rowvec(Tensor a, Tensor b);
// out[i,c] = a[i,c] * w[i]
Tensor mul_rows(Tensor a, Tensor w);
// Same data, new shape; numel must match.
Tensor reshape(Tensor a, std::vector<int> shape);
// out is a stacked [n*R, ...] copy of a [R, ...]; backward sums over copies.
Tensor repeat_rows(Tensor a, int n);
// src [M,C], idx values in [0,M), |idx| = J*k -> out [J,k,C].
Tensor gather(Tensor src, const std::vector<int>& idx, int J, int k);
// x [J,k,C], idx as above -> out [M,C] with out[idx[j,t],:] += x[j,t,:],
// accumulated in fixed (j,t) order.
Tensor scatter_sum(Tensor x, const std::vector<int>& idx, int M);

// Neighbor-weighted kernel application, the fixed contraction pattern of the
// convolution layers: out[j,cp] = sum_{t,c,b} w[cp,c,b] k[j,t,b] z[j,t,c] q[j,t].
// Shapes: w [Cp,C,B], k [J,T,B], z [J,T,C], q [J,T] -> out [J,Cp].
Tensor pointconv(Tensor w, Tensor k, Tensor z, Tensor q);

// Running statistics for batchnorm; wrapped as Parameters so they ride along
// in checkpoints, but they carry no gradients and must not be given to the
// optimizer.
struct BatchNormState {
  Parameter mean;
  Parameter var;
  BatchNormState() = default;
  BatchNormState(const std::string& prefix, int channels);
};

// Train mode normalizes by batch statistics (biased variance) and updates the
// running stats in place: r <- momentum*r + (1-momentum)*batch. Eval mode
// normalizes by the running stats. x [N,C], gamma/beta [C].
Tensor batchnorm(Tensor x, Tensor gamma, Tensor beta, BatchNormState& st, bool train,
                 double momentum = 0.9, double eps = 1e-5);

// out[s,c] = sum_{i: seg[i]=s} w[i] x[i,c] / sum_{i: seg[i]=s} w[i].
// Every segment id in [0,S) must occur at least once.
Tensor segment_mean_weighted(Tensor x, Tensor w, const std::vector<int>& seg, int S);
// Same mean, but each sum adds its terms in ascending value order, so the
// result is exactly invariant under permutations of the rows of a segment.
Tensor pool_mean_sorted(Tensor x, Tensor w, const std::vector<int>& seg, int S);

// Mean over rows of (logsumexp(row) - logit[label]); labels in [0,K).
Tensor softmax_cross_entropy(Tensor logits, const std::vector<int>& labels);
// Mean of squared differences over all elements.
Tensor mse(Tensor pred, Tensor target);
// Sum of all elements.
Tensor sum(Tensor a);

// Central-difference audit. f rebuilds the graph from fresh leaves on each
// call and returns a scalar. Returns the worst |analytic - fd| over
// max(1, |analytic|, |fd|) across every input coordinate.
struct GradInput {
  std::vector<int> shape;
  std::vector<double> value;
};
double grad_check(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                  std::vector<GradInput> inputs, double eps = 1e-5);

// Versioned binary parameter file. Layout: magic "EQMC", u32 version, u64
// parameter count, then per parameter: u64 name length + bytes, u32 rank,
// u64 dims, values as little-endian 64-bit doubles. Round trips bit-exactly.
void save_params(const std::string& path, const std::vector<const Parameter*>& params);
// Matches each requested parameter by name; missing names, shape mismatches,
// bad magic, and version mismatches all throw.
void load_params(const std::string& path, std::vector<Parameter*> params);

}  // namespace eqm::tensor
