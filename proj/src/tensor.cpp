#include "eqm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "eqm/kernels.hpp"

namespace eqm::tensor {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_same_tape(Tensor a, Tensor b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands must live on one tape");
  }
}

template <class F, class D>
Tensor unary_op(Tensor a, F f, D dfdx) {
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad;
  Tensor out = t.make(t.node(a.id).shape, rg);
  const auto& av = t.node(a.id).val;
  auto& ov = t.node(out.id).val;
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  if (rg) {
    t.node(out.id).back = [aid = a.id, oid = out.id, dfdx](Tape& tp) {
      const auto& x = tp.node(aid).val;
      const auto& og = tp.node(oid).grad;
      auto& ag = tp.node(aid).grad;
      for (std::size_t i = 0; i < x.size(); ++i) ag[i] += og[i] * dfdx(x[i]);
    };
  }
  return out;
}

}  // namespace

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    require(d >= 0, "shape: negative dimension");
    n *= d;
  }
  return n;
}

Parameter::Parameter(std::string name_, std::vector<int> shape_, double fill)
    : name(std::move(name_)),
      shape(std::move(shape_)),
      value(static_cast<std::size_t>(numel_of(shape)), fill),
      grad(value.size(), 0.0) {}

const std::vector<int>& Tensor::shape() const { return tape->node(id).shape; }
std::int64_t Tensor::numel() const { return numel_of(shape()); }
std::vector<double>& Tensor::val() const { return tape->node(id).val; }
std::vector<double>& Tensor::grad() const { return tape->node(id).grad; }

Tensor Tape::make(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_unique<Node>();
  std::size_t count = static_cast<std::size_t>(numel_of(shape));
  n->shape = std::move(shape);
  n->val.assign(count, 0.0);
  n->grad.assign(count, 0.0);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  require(static_cast<std::int64_t>(values.size()) == numel_of(shape),
          "leaf: value count does not match shape");
  Tensor out = make(std::move(shape), requires_grad);
  node(out.id).val = std::move(values);
  return out;
}

Tensor Tape::fill(std::vector<int> shape, double value, bool requires_grad) {
  Tensor out = make(std::move(shape), requires_grad);
  auto& v = node(out.id).val;
  std::fill(v.begin(), v.end(), value);
  return out;
}

Tensor Tape::use(Parameter& p) {
  require(static_cast<std::int64_t>(p.value.size()) == numel_of(p.shape),
          "use: parameter value count does not match its shape");
  Tensor out = leaf(p.shape, p.value, true);
  bound_.emplace_back(out.id, &p);
  return out;
}

void Tape::backward(Tensor loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  require(loss.tape == this, "backward: loss lives on another tape");
  require(loss.numel() == 1, "backward: loss must be scalar");
  consumed_ = true;
  node(loss.id).grad[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = *nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad && n.back) n.back(*this);
  }
  for (const auto& [id, p] : bound_) {
    const auto& g = node(id).grad;
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  }
}

Tensor add(Tensor a, Tensor b) {
  check_same_tape(a, b, "add");
  require(a.shape() == b.shape(), "add: shape mismatch");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
  Tensor out = t.make(a.shape(), rg);
  const auto& av = a.val();
  const auto& bv = b.val();
  auto& ov = out.val();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (rg) {
    t.node(out.id).back = [aid = a.id, bid = b.id, oid = out.id](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      if (tp.node(aid).requires_grad) {
        auto& ag = tp.node(aid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (tp.node(bid).requires_grad) {
        auto& bg = tp.node(bid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
      }
    };
  }
  return out;
}

Tensor sub(Tensor a, Tensor b) {
  check_same_tape(a, b, "sub");
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
  Tensor out = t.make(a.shape(), rg);
  const auto& av = a.val();
  const auto& bv = b.val();
  auto& ov = out.val();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (rg) {
    t.node(out.id).back = [aid = a.id, bid = b.id, oid = out.id](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      if (tp.node(aid).requires_grad) {
        auto& ag = tp.node(aid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (tp.node(bid).requires_grad) {
        auto& bg = tp.node(bid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
      }
    };
  }
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  check_same_tape(a, b, "mul");
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
  Tensor out = t.make(a.shape(), rg);
  const auto& av = a.val();
  const auto& bv = b.val();
  auto& ov = out.val();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (rg) {
    t.node(out.id).back = [aid = a.id, bid = b.id, oid = out.id](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      const auto& av2 = tp.node(aid).val;
      const auto& bv2 = tp.node(bid).val;
      if (tp.node(aid).requires_grad) {
        auto& ag = tp.node(aid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv2[i];
      }
      if (tp.node(bid).requires_grad) {
        auto& bg = tp.node(bid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av2[i];
      }
    };
  }
  return out;
}

Tensor scale(Tensor a, double c) {
  return unary_op(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Tensor relu(Tensor a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor swish(Tensor a) {
  return unary_op(a, [](double x) { return x * sigmoid(x); },
                  [](double x) {
                    double s = sigmoid(x);
                    return s * (1.0 + x * (1.0 - s));
                  });
}

Tensor exp(Tensor a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double x) { return std::exp(x); });
}

Tensor square(Tensor a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor softplus(Tensor a) {
  return unary_op(a,
                  [](double x) {
                    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
                  },
                  [](double x) { return sigmoid(x); });
}

Tensor matmul(Tensor a, Tensor b) {
  check_same_tape(a, b, "matmul");
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be rank 2");
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul: inner dimensions differ");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
  Tensor out = t.make({m, n}, rg);
  kernels::mm_nn(a.val().data(), b.val().data(), out.val().data(), m, k, n);
  if (rg) {
    t.node(out.id).back = [aid = a.id, bid = b.id, oid = out.id, m, k, n](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      if (tp.node(aid).requires_grad) {
        kernels::mm_nt(og.data(), tp.node(bid).val.data(), tp.node(aid).grad.data(), m, n, k);
      }
      if (tp.node(bid).requires_grad) {
        kernels::mm_tn(tp.node(aid).val.data(), og.data(), tp.node(bid).grad.data(), k, m, n);
      }
    };
  }
  return out;
}

Tensor add_rowvec(Tensor a, Tensor b) {
  check_same_tape(a, b, "add_rowvec");
  require(a.shape().size() == 2 && b.shape().size() == 1, "add_rowvec: need [N,C] and [C]");
  int n = a.shape()[0], c = a.shape()[1];
  require(b.shape()[0] == c, "add_rowvec: channel mismatch");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
  Tensor out = t.make(a.shape(), rg);
  const auto& av = a.val();
  const auto& bv = b.val();
  auto& ov = out.val();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) ov[std::size_t(i) * c + j] = av[std::size_t(i) * c + j] + bv[j];
  if (rg) {
    t.node(out.id).back = [aid = a.id, bid = b.id, oid = out.id, n, c](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      if (tp.node(aid).requires_grad) {
        auto& ag = tp.node(aid).grad;
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (tp.node(bid).requires_grad) {
        auto& bg = tp.node(bid).grad;
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += og[std::size_t(i) * c + j];
          bg[j] += acc;
        }
      }
    };
  }
  return out;
}

Tensor mul_rows(Tensor a, Tensor w) {
  check_same_tape(a, w, "mul_rows");
  require(a.shape().size() == 2 && w.shape().size() == 1, "mul_rows: need [N,C] and [N]");
  int n = a.shape()[0], c = a.shape()[1];
  require(w.shape()[0] == n, "mul_rows: row count mismatch");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad || t.node(w.id).requires_grad;
  Tensor out = t.make(a.shape(), rg);
  const auto& av = a.val();
  const auto& wv = w.val();
  auto& ov = out.val();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) ov[std::size_t(i) * c + j] = av[std::size_t(i) * c + j] * wv[i];
  if (rg) {
    t.node(out.id).back = [aid = a.id, wid = w.id, oid = out.id, n, c](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      const auto& av2 = tp.node(aid).val;
      const auto& wv2 = tp.node(wid).val;
      if (tp.node(aid).requires_grad) {
        auto& ag = tp.node(aid).grad;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) ag[std::size_t(i) * c + j] += og[std::size_t(i) * c + j] * wv2[i];
      }
      if (tp.node(wid).requires_grad) {
        auto& wg = tp.node(wid).grad;
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += og[std::size_t(i) * c + j] * av2[std::size_t(i) * c + j];
          wg[i] += acc;
        }
      }
    };
  }
  return out;
}

Tensor reshape(Tensor a, std::vector<int> shape) {
  require(numel_of(shape) == a.numel(), "reshape: element count changes");
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad;
  Tensor out = t.make(std::move(shape), rg);
  out.val() = a.val();
  if (rg) {
    t.node(out.id).back = [aid = a.id, oid = out.id](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      auto& ag = tp.node(aid).grad;
      for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
    };
  }
  return out;
}

Tensor repeat_rows(Tensor a, int n) {
  require(n >= 1, "repeat_rows: need n >= 1");
  require(!a.shape().empty(), "repeat_rows: need rank >= 1");
  Tape& t = *a.tape;
  std::vector<int> shape = a.shape();
  std::size_t block = a.val().size();
  shape[0] *= n;
  bool rg = t.node(a.id).requires_grad;
  Tensor out = t.make(std::move(shape), rg);
  const auto& av = a.val();
  auto& ov = out.val();
  for (int rep = 0; rep < n; ++rep)
    std::copy(av.begin(), av.end(), ov.begin() + static_cast<std::ptrdiff_t>(rep * block));
  if (rg) {
    t.node(out.id).back = [aid = a.id, oid = out.id, n, block](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      auto& ag = tp.node(aid).grad;
      for (int rep = 0; rep < n; ++rep) {
        const double* src = og.data() + std::size_t(rep) * block;
        for (std::size_t i = 0; i < block; ++i) ag[i] += src[i];
      }
    };
  }
  return out;
}

Tensor gather(Tensor src, const std::vector<int>& idx, int J, int k) {
  require(src.shape().size() == 2, "gather: src must be [M,C]");
  require(static_cast<std::int64_t>(idx.size()) == std::int64_t(J) * k,
          "gather: index count must be J*k");
  int M = src.shape()[0], C = src.shape()[1];
  for (int v : idx) require(v >= 0 && v < M, "gather: index out of range");
  Tape& t = *src.tape;
  bool rg = t.node(src.id).requires_grad;
  Tensor out = t.make({J, k, C}, rg);
  const auto& sv = src.val();
  auto& ov = out.val();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(sv.begin() + std::ptrdiff_t(idx[r]) * C, C, ov.begin() + std::ptrdiff_t(r) * C);
  if (rg) {
    t.node(out.id).back = [sid = src.id, oid = out.id, idx, C](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      auto& sg = tp.node(sid).grad;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dst = sg.data() + std::size_t(idx[r]) * C;
        const double* g = og.data() + r * C;
        for (int c = 0; c < C; ++c) dst[c] += g[c];
      }
    };
  }
  return out;
}

Tensor scatter_sum(Tensor x, const std::vector<int>& idx, int M) {
  require(x.shape().size() == 3, "scatter_sum: x must be [J,k,C]");
  int J = x.shape()[0], k = x.shape()[1], C = x.shape()[2];
  require(static_cast<std::int64_t>(idx.size()) == std::int64_t(J) * k,
          "scatter_sum: index count must be J*k");
  for (int v : idx) require(v >= 0 && v < M, "scatter_sum: index out of range");
  Tape& t = *x.tape;
  bool rg = t.node(x.id).requires_grad;
  Tensor out = t.make({M, C}, rg);
  const auto& xv = x.val();
  auto& ov = out.val();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    double* dst = ov.data() + std::size_t(idx[r]) * C;
    const double* srcp = xv.data() + r * C;
    for (int c = 0; c < C; ++c) dst[c] += srcp[c];
  }
  if (rg) {
    t.node(out.id).back = [xid = x.id, oid = out.id, idx, C](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      auto& xg = tp.node(xid).grad;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* g = og.data() + std::size_t(idx[r]) * C;
        double* dst = xg.data() + r * C;
        for (int c = 0; c < C; ++c) dst[c] += g[c];
      }
    };
  }
  return out;
}

Tensor pointconv(Tensor w, Tensor k, Tensor z, Tensor q) {
  check_same_tape(w, k, "pointconv");
  check_same_tape(w, z, "pointconv");
  check_same_tape(w, q, "pointconv");
  require(w.shape().size() == 3, "pointconv: w must be [Cp,C,B]");
  require(k.shape().size() == 3, "pointconv: k must be [J,T,B]");
  require(z.shape().size() == 3, "pointconv: z must be [J,T,C]");
  require(q.shape().size() == 2, "pointconv: q must be [J,T]");
  int Cp = w.shape()[0], C = w.shape()[1], B = w.shape()[2];
  int J = k.shape()[0], T = k.shape()[1];
  require(k.shape()[2] == B, "pointconv: basis sizes differ");
  require(z.shape()[0] == J && z.shape()[1] == T && z.shape()[2] == C,
          "pointconv: z shape mismatch");
  require(q.shape()[0] == J && q.shape()[1] == T, "pointconv: q shape mismatch");
  Tape& t = *w.tape;
  bool rg = t.node(w.id).requires_grad || t.node(k.id).requires_grad ||
            t.node(z.id).requires_grad || t.node(q.id).requires_grad;
  Tensor out = t.make({J, Cp}, rg);
  std::vector<double> stage(std::size_t(J) * B * C, 0.0);
  kernels::pc_stage(k.val().data(), z.val().data(), q.val().data(), stage.data(), J, T, B, C);
  kernels::pc_mix(w.val().data(), stage.data(), out.val().data(), J, B, C, Cp);
  if (rg) {
    t.node(out.id).back = [wid = w.id, kid = k.id, zid = z.id, qid = q.id, oid = out.id,
                           stage = std::move(stage), J, T, B, C, Cp](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      if (tp.node(wid).requires_grad) {
        kernels::pc_back_w(og.data(), stage.data(), tp.node(wid).grad.data(), J, B, C, Cp);
      }
      if (tp.node(kid).requires_grad || tp.node(zid).requires_grad ||
          tp.node(qid).requires_grad) {
        std::vector<double> ds(std::size_t(J) * B * C, 0.0);
        kernels::pc_back_stage(tp.node(wid).val.data(), og.data(), ds.data(), J, B, C, Cp);
        kernels::pc_back_inputs(ds.data(), tp.node(kid).val.data(), tp.node(zid).val.data(),
                                tp.node(qid).val.data(), tp.node(kid).grad.data(),
                                tp.node(zid).grad.data(), tp.node(qid).grad.data(), J, T, B, C);
      }
    };
  }
  return out;
}

BatchNormState::BatchNormState(const std::string& prefix, int channels)
    : mean(prefix + ".running_mean", {channels}, 0.0),
      var(prefix + ".running_var", {channels}, 1.0) {}

Tensor batchnorm(Tensor x, Tensor gamma, Tensor beta, BatchNormState& st, bool train,
                 double momentum, double eps) {
  check_same_tape(x, gamma, "batchnorm");
  check_same_tape(x, beta, "batchnorm");
  require(x.shape().size() == 2, "batchnorm: x must be [N,C]");
  int N = x.shape()[0], C = x.shape()[1];
  require(N >= 1, "batchnorm: empty batch");
  require(gamma.shape() == std::vector<int>{C} && beta.shape() == std::vector<int>{C},
          "batchnorm: gamma/beta must be [C]");
  require(static_cast<int>(st.mean.value.size()) == C, "batchnorm: state channel mismatch");
  Tape& t = *x.tape;
  const auto& xv = x.val();

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (train) {
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) mean[c] += xv[std::size_t(i) * C + c];
    for (int c = 0; c < C; ++c) mean[c] /= N;
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) {
        double d = xv[std::size_t(i) * C + c] - mean[c];
        var[c] += d * d;
      }
    for (int c = 0; c < C; ++c) var[c] /= N;
    for (int c = 0; c < C; ++c) {
      st.mean.value[c] = momentum * st.mean.value[c] + (1.0 - momentum) * mean[c];
      st.var.value[c] = momentum * st.var.value[c] + (1.0 - momentum) * var[c];
    }
  } else {
    mean = st.mean.value;
    var = st.var.value;
  }

  std::vector<double> istd(C);
  for (int c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> xhat(std::size_t(N) * C);
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      xhat[std::size_t(i) * C + c] = (xv[std::size_t(i) * C + c] - mean[c]) * istd[c];

  bool rg = t.node(x.id).requires_grad || t.node(gamma.id).requires_grad ||
            t.node(beta.id).requires_grad;
  Tensor out = t.make({N, C}, rg);
  const auto& gv = gamma.val();
  const auto& bv = beta.val();
  auto& ov = out.val();
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      ov[std::size_t(i) * C + c] = gv[c] * xhat[std::size_t(i) * C + c] + bv[c];

  if (rg) {
    t.node(out.id).back = [xid = x.id, gid = gamma.id, bid = beta.id, oid = out.id,
                           xhat = std::move(xhat), istd = std::move(istd), N, C,
                           train](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      const auto& gv2 = tp.node(gid).val;
      if (tp.node(gid).requires_grad) {
        auto& gg = tp.node(gid).grad;
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int i = 0; i < N; ++i) acc += og[std::size_t(i) * C + c] * xhat[std::size_t(i) * C + c];
          gg[c] += acc;
        }
      }
      if (tp.node(bid).requires_grad) {
        auto& bg = tp.node(bid).grad;
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int i = 0; i < N; ++i) acc += og[std::size_t(i) * C + c];
          bg[c] += acc;
        }
      }
      if (tp.node(xid).requires_grad) {
        auto& xg = tp.node(xid).grad;
        if (train) {
          // dxhat = og*gamma; dx = istd/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
          for (int c = 0; c < C; ++c) {
            double s1 = 0.0, s2 = 0.0;
            for (int i = 0; i < N; ++i) {
              double dxh = og[std::size_t(i) * C + c] * gv2[c];
              s1 += dxh;
              s2 += dxh * xhat[std::size_t(i) * C + c];
            }
            for (int i = 0; i < N; ++i) {
              double dxh = og[std::size_t(i) * C + c] * gv2[c];
              xg[std::size_t(i) * C + c] +=
                  istd[c] / N * (N * dxh - s1 - xhat[std::size_t(i) * C + c] * s2);
            }
          }
        } else {
          for (int i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c)
              xg[std::size_t(i) * C + c] += og[std::size_t(i) * C + c] * gv2[c] * istd[c];
        }
      }
    };
  }
  return out;
}

Tensor segment_mean_weighted(Tensor x, Tensor w, const std::vector<int>& seg, int S) {
  check_same_tape(x, w, "segment_mean_weighted");
  require(x.shape().size() == 2, "segment_mean_weighted: x must be [N,C]");
  int N = x.shape()[0], C = x.shape()[1];
  require(w.shape() == std::vector<int>{N}, "segment_mean_weighted: w must be [N]");
  require(static_cast<int>(seg.size()) == N, "segment_mean_weighted: segment ids must cover rows");
  std::vector<int> count(static_cast<std::size_t>(S), 0);
  for (int s : seg) {
    require(s >= 0 && s < S, "segment_mean_weighted: segment id out of range");
    ++count[static_cast<std::size_t>(s)];
  }
  for (int c : count) require(c > 0, "segment_mean_weighted: empty segment");

  Tape& t = *x.tape;
  const auto& xv = x.val();
  const auto& wv = w.val();
  std::vector<double> wsum(static_cast<std::size_t>(S), 0.0);
  for (int i = 0; i < N; ++i) wsum[static_cast<std::size_t>(seg[i])] += wv[i];
  for (double s : wsum) require(s != 0.0, "segment_mean_weighted: zero total weight");

  bool rg = t.node(x.id).requires_grad || t.node(w.id).requires_grad;
  Tensor out = t.make({S, C}, rg);
  auto& ov = out.val();
  for (int i = 0; i < N; ++i) {
    double* dst = ov.data() + std::size_t(seg[i]) * C;
    for (int c = 0; c < C; ++c) dst[c] += wv[i] * xv[std::size_t(i) * C + c];
  }
  for (int s = 0; s < S; ++s)
    for (int c = 0; c < C; ++c) ov[std::size_t(s) * C + c] /= wsum[static_cast<std::size_t>(s)];

  if (rg) {
    t.node(out.id).back = [xid = x.id, wid = w.id, oid = out.id, seg, wsum, N, C](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      const auto& ovv = tp.node(oid).val;
      const auto& xv2 = tp.node(xid).val;
      const auto& wv2 = tp.node(wid).val;
      if (tp.node(xid).requires_grad) {
        auto& xg = tp.node(xid).grad;
        for (int i = 0; i < N; ++i) {
          double f = wv2[i] / wsum[static_cast<std::size_t>(seg[i])];
          const double* g = og.data() + std::size_t(seg[i]) * C;
          for (int c = 0; c < C; ++c) xg[std::size_t(i) * C + c] += f * g[c];
        }
      }
      if (tp.node(wid).requires_grad) {
        auto& wg = tp.node(wid).grad;
        for (int i = 0; i < N; ++i) {
          const double* g = og.data() + std::size_t(seg[i]) * C;
          const double* o = ovv.data() + std::size_t(seg[i]) * C;
          double acc = 0.0;
          for (int c = 0; c < C; ++c) acc += g[c] * (xv2[std::size_t(i) * C + c] - o[c]);
          wg[i] += acc / wsum[static_cast<std::size_t>(seg[i])];
        }
      }
    };
  }
  return out;
}

Tensor pool_mean_sorted(Tensor x, Tensor w, const std::vector<int>& seg, int S) {
  check_same_tape(x, w, "pool_mean_sorted");
  require(x.shape().size() == 2, "pool_mean_sorted: x must be [N,C]");
  int N = x.shape()[0], C = x.shape()[1];
  require(w.shape() == std::vector<int>{N}, "pool_mean_sorted: w must be [N]");
  require(static_cast<int>(seg.size()) == N, "pool_mean_sorted: segment ids must cover rows");
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(S));
  for (int i = 0; i < N; ++i) {
    require(seg[i] >= 0 && seg[i] < S, "pool_mean_sorted: segment id out of range");
    rows[static_cast<std::size_t>(seg[i])].push_back(i);
  }
  for (const auto& r : rows) require(!r.empty(), "pool_mean_sorted: empty segment");

  Tape& t = *x.tape;
  const auto& xv = x.val();
  const auto& wv = w.val();
  // Sorting the addends fixes the accumulation order for any row permutation.
  auto sorted_sum = [](std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double v : terms) acc += v;
    return acc;
  };
  std::vector<double> wsum(static_cast<std::size_t>(S), 0.0);
  std::vector<double> terms;
  for (int s = 0; s < S; ++s) {
    terms.clear();
    for (int i : rows[static_cast<std::size_t>(s)]) terms.push_back(wv[i]);
    wsum[static_cast<std::size_t>(s)] = sorted_sum(terms);
    require(wsum[static_cast<std::size_t>(s)] != 0.0, "pool_mean_sorted: zero total weight");
  }

  bool rg = t.node(x.id).requires_grad || t.node(w.id).requires_grad;
  Tensor out = t.make({S, C}, rg);
  auto& ov = out.val();
  for (int s = 0; s < S; ++s)
    for (int c = 0; c < C; ++c) {
      terms.clear();
      for (int i : rows[static_cast<std::size_t>(s)])
        terms.push_back(wv[i] * xv[std::size_t(i) * C + c]);
      ov[std::size_t(s) * C + c] = sorted_sum(terms) / wsum[static_cast<std::size_t>(s)];
    }

  if (rg) {
    t.node(out.id).back = [xid = x.id, wid = w.id, oid = out.id, seg, wsum, N, C](Tape& tp) {
      const auto& og = tp.node(oid).grad;
      const auto& ovv = tp.node(oid).val;
      const auto& xv2 = tp.node(xid).val;
      const auto& wv2 = tp.node(wid).val;
      if (tp.node(xid).requires_grad) {
        auto& xg = tp.node(xid).grad;
        for (int i = 0; i < N; ++i) {
          double f = wv2[i] / wsum[static_cast<std::size_t>(seg[i])];
          const double* g = og.data() + std::size_t(seg[i]) * C;
          for (int c = 0; c < C; ++c) xg[std::size_t(i) * C + c] += f * g[c];
        }
      }
      if (tp.node(wid).requires_grad) {
        auto& wg = tp.node(wid).grad;
        for (int i = 0; i < N; ++i) {
          const double* g = og.data() + std::size_t(seg[i]) * C;
          const double* o = ovv.data() + std::size_t(seg[i]) * C;
          double acc = 0.0;
          for (int c = 0; c < C; ++c) acc += g[c] * (xv2[std::size_t(i) * C + c] - o[c]);
          wg[i] += acc / wsum[static_cast<std::size_t>(seg[i])];
        }
      }
    };
  }
  return out;
}

Tensor softmax_cross_entropy(Tensor logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "softmax_cross_entropy: logits must be [N,K]");
  int N = logits.shape()[0], K = logits.shape()[1];
  require(static_cast<int>(labels.size()) == N, "softmax_cross_entropy: one label per row");
  for (int l : labels) require(l >= 0 && l < K, "softmax_cross_entropy: label out of range");
  Tape& t = *logits.tape;
  const auto& lv = logits.val();
  std::vector<double> prob(std::size_t(N) * K);
  double loss = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* row = lv.data() + std::size_t(i) * K;
    double m = row[0];
    for (int j = 1; j < K; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < K; ++j) z += std::exp(row[j] - m);
    double lse = m + std::log(z);
    for (int j = 0; j < K; ++j) prob[std::size_t(i) * K + j] = std::exp(row[j] - m) / z;
    loss += lse - row[labels[static_cast<std::size_t>(i)]];
  }
  loss /= N;
  bool rg = t.node(logits.id).requires_grad;
  Tensor out = t.make({}, rg);
  out.val()[0] = loss;
  if (rg) {
    t.node(out.id).back = [lid = logits.id, oid = out.id, prob = std::move(prob), labels, N,
                           K](Tape& tp) {
      double g = tp.node(oid).grad[0];
      auto& lg = tp.node(lid).grad;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < K; ++j) {
          double p = prob[std::size_t(i) * K + j];
          double y = (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
          lg[std::size_t(i) * K + j] += g * (p - y) / N;
        }
    };
  }
  return out;
}

Tensor mse(Tensor pred, Tensor target) {
  check_same_tape(pred, target, "mse");
  require(pred.shape() == target.shape(), "mse: shape mismatch");
  Tape& t = *pred.tape;
  const auto& pv = pred.val();
  const auto& tv = target.val();
  double n = static_cast<double>(pv.size());
  require(n > 0, "mse: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    double d = pv[i] - tv[i];
    loss += d * d;
  }
  loss /= n;
  bool rg = t.node(pred.id).requires_grad || t.node(target.id).requires_grad;
  Tensor out = t.make({}, rg);
  out.val()[0] = loss;
  if (rg) {
    t.node(out.id).back = [pid = pred.id, tid = target.id, oid = out.id, n](Tape& tp) {
      double g = tp.node(oid).grad[0];
      const auto& pv2 = tp.node(pid).val;
      const auto& tv2 = tp.node(tid).val;
      if (tp.node(pid).requires_grad) {
        auto& pg = tp.node(pid).grad;
        for (std::size_t i = 0; i < pv2.size(); ++i) pg[i] += g * 2.0 * (pv2[i] - tv2[i]) / n;
      }
      if (tp.node(tid).requires_grad) {
        auto& tg = tp.node(tid).grad;
        for (std::size_t i = 0; i < pv2.size(); ++i) tg[i] -= g * 2.0 * (pv2[i] - tv2[i]) / n;
      }
    };
  }
  return out;
}

Tensor sum(Tensor a) {
  Tape& t = *a.tape;
  bool rg = t.node(a.id).requires_grad;
  Tensor out = t.make({}, rg);
  const auto& av = a.val();
  double acc = 0.0;
  for (double v : av) acc += v;
  out.val()[0] = acc;
  if (rg) {
    t.node(out.id).back = [aid = a.id, oid = out.id](Tape& tp) {
      double g = tp.node(oid).grad[0];
      auto& ag = tp.node(aid).grad;
      for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += g;
    };
  }
  return out;
}

double grad_check(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                  std::vector<GradInput> inputs, double eps) {
  auto eval = [&f](const std::vector<GradInput>& ins, bool with_grad,
                   std::vector<std::vector<double>>* grads) -> double {
    Tape t;
    std::vector<Tensor> xs;
    xs.reserve(ins.size());
    for (const auto& in : ins) xs.push_back(t.leaf(in.shape, in.value, with_grad));
    Tensor y = f(t, xs);
    require(y.numel() == 1, "grad_check: f must return a scalar");
    double out = y.val()[0];
    if (with_grad) {
      t.backward(y);
      grads->clear();
      for (const auto& x : xs) grads->push_back(x.grad());
    }
    return out;
  };

  std::vector<std::vector<double>> analytic;
  eval(inputs, true, &analytic);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].value.size(); ++j) {
      double saved = inputs[i].value[j];
      inputs[i].value[j] = saved + eps;
      double fp = eval(inputs, false, nullptr);
      inputs[i].value[j] = saved - eps;
      double fm = eval(inputs, false, nullptr);
      inputs[i].value[j] = saved;
      double fd = (fp - fm) / (2.0 * eps);
      double a = analytic[i][j];
      double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

constexpr char kMagic[4] = {'E', 'Q', 'M', 'C'};
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
  if (!is) throw std::runtime_error("checkpoint: truncated file");
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

}  // namespace

void save_params(const std::string& path, const std::vector<const Parameter*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  put_bytes(os, kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, params.size());
  for (const Parameter* p : params) {
    require(p != nullptr, "save_params: null parameter");
    require(static_cast<std::int64_t>(p->value.size()) == numel_of(p->shape),
            "save_params: parameter value count does not match its shape");
    put_u64(os, p->name.size());
    put_bytes(os, p->name.data(), p->name.size());
    put_u32(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put_u64(os, static_cast<std::uint64_t>(d));
    for (double v : p->value) put_f64(os, v);
  }
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void load_params(const std::string& path, std::vector<Parameter*> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  std::uint64_t count = get_u64(is);
  struct Entry {
    std::vector<int> shape;
    std::vector<double> value;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t name_len = get_u64(is);
    std::string name(name_len, '\0');
    if (name_len > 0) get_bytes(is, name.data(), name_len);
    std::uint32_t rank = get_u32(is);
    Entry e;
    e.shape.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) e.shape[d] = static_cast<int>(get_u64(is));
    std::int64_t n = numel_of(e.shape);
    e.value.resize(static_cast<std::size_t>(n));
    for (auto& v : e.value) v = get_f64(is);
    entries.emplace_back(std::move(name), std::move(e));
  }
  for (Parameter* p : params) {
    require(p != nullptr, "load_params: null parameter");
    const Entry* found = nullptr;
    for (const auto& [name, e] : entries)
      if (name == p->name) {
        found = &e;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint: missing parameter " + p->name);
    if (found->shape != p->shape) {
      throw std::runtime_error("checkpoint: shape mismatch for parameter " + p->name);
    }
    p->value = found->value;
  }
}

}  // namespace eqm::tensor
