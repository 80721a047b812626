#include "eqm/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace eqm::train {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

constexpr char kMagic[4] = {'E', 'Q', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

// Stream tags for the independent rng streams derived from the run seed.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kCollocStream = 0x434f;
constexpr std::uint64_t kEvalStream = 0x4556;

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

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  put_bytes(os, s.data(), s.size());
}

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

std::string get_str(std::istream& is) {
  std::uint64_t n = get_u64(is);
  std::string s(n, '\0');
  if (n > 0) get_bytes(is, s.data(), n);
  return s;
}

void check_loss_kind(const std::string& kind) {
  require(kind == "mse" || kind == "cross_entropy",
          "train: loss must be 'mse' or 'cross_entropy'");
}

// n samples, dim target columns (0 for classification).
void check_examples(const Examples& ex, const std::string& loss_kind) {
  require(!ex.ys.empty(), "train: examples are empty");
  std::size_t v = ex.ys[0].size();
  require(v > 0, "train: measurement vectors are empty");
  for (const auto& y : ex.ys) require(y.size() == v, "train: ragged measurement vectors");
  if (loss_kind == "mse") {
    require(ex.targets.size() == ex.ys.size(), "train: targets count mismatch");
    std::size_t d = ex.targets[0].size();
    require(d > 0, "train: targets are empty");
    for (const auto& t : ex.targets) require(t.size() == d, "train: ragged targets");
  } else {
    require(ex.labels.size() == ex.ys.size(), "train: labels count mismatch");
    for (int l : ex.labels) require(l >= 0, "train: negative label");
  }
}

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

// Sorted before summing so the result is exactly permutation invariant.
double sorted_mean(std::vector<double>& vals, double denom) {
  std::sort(vals.begin(), vals.end());
  double s = 0.0;
  for (double v : vals) s += v;
  return s / denom;
}

std::int64_t steps_per_epoch(std::int64_t n, int batch) { return (n + batch - 1) / batch; }

}  // namespace

void adam_step(const std::vector<Parameter*>& params, OptimState& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i]->value.size(), 0.0);
      st.v[i].assign(params[i]->value.size(), 0.0);
    }
  }
  require(st.m.size() == params.size() && st.v.size() == params.size(),
          "adam_step: moment count does not match the parameter list");
  st.t += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    require(st.m[i].size() == p.value.size() && st.v[i].size() == p.value.size(),
            "adam_step: moment shape does not match its parameter");
    require(p.grad.size() == p.value.size(), "adam_step: gradient size mismatch");
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      double g = p.grad[j];
      if (st.coupled_l2) g += st.weight_decay * p.value[j];
      st.m[i][j] = st.beta1 * st.m[i][j] + (1.0 - st.beta1) * g;
      st.v[i][j] = st.beta2 * st.v[i][j] + (1.0 - st.beta2) * g * g;
      double mhat = st.m[i][j] / bc1;
      double vhat = st.v[i][j] / bc2;
      double step = st.lr * mhat / (std::sqrt(vhat) + st.eps);
      if (!st.coupled_l2) step += st.lr * st.weight_decay * p.value[j];
      p.value[j] -= step;
    }
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

double lr_schedule(int epoch, int epochs, double base_lr, const std::string& kind) {
  require(epochs > 0, "lr_schedule: epochs must be positive");
  if (kind == "constant") return base_lr;
  require(kind == "step", "lr_schedule: kind must be 'step' or 'constant'");
  double frac = static_cast<double>(epoch) / epochs;
  if (frac >= 0.85) return base_lr * 0.01;
  if (frac >= 0.6) return base_lr * 0.1;
  return base_lr;
}

TrainConfig preset(const std::string& name) {
  TrainConfig cfg;
  if (name == "desk") return cfg;
  if (name == "full") {
    cfg.epochs = 3000;
    cfg.arch.lift_points = 2700;
    cfg.arch.channels = 22;
    return cfg;
  }
  throw std::invalid_argument("train: preset must be 'desk' or 'full'");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["seed"] = cfg.seed;
  j["base_lr"] = cfg.base_lr;
  j["weight_decay"] = cfg.weight_decay;
  j["coupled_l2"] = cfg.coupled_l2;
  j["schedule"] = cfg.schedule;
  j["loss"] = cfg.loss;
  j["train_path"] = cfg.train_path;
  j["test_path"] = cfg.test_path;
  j["arch"] = nlohmann::json::parse(layers::model_config_to_json(cfg.arch));
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  require(j.is_object(), "train config: document must be an object");
  static const std::unordered_set<std::string> known = {
      "epochs",     "batch",      "seed",       "base_lr", "weight_decay", "coupled_l2",
      "schedule",   "loss",       "train_path", "test_path", "arch"};
  for (const auto& item : j.items())
    if (known.find(item.key()) == known.end())
      throw std::invalid_argument("train config: unknown key '" + item.key() + "'");
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.base_lr = j.value("base_lr", cfg.base_lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.coupled_l2 = j.value("coupled_l2", cfg.coupled_l2);
    cfg.schedule = j.value("schedule", cfg.schedule);
    cfg.loss = j.value("loss", cfg.loss);
    cfg.train_path = j.value("train_path", cfg.train_path);
    cfg.test_path = j.value("test_path", cfg.test_path);
    if (j.contains("arch")) cfg.arch = layers::model_config_from_json(j.at("arch").dump());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  require(cfg.epochs >= 1, "train config: epochs must be positive");
  require(cfg.batch >= 1, "train config: batch must be positive");
  require(cfg.base_lr >= 0.0, "train config: base_lr must be nonnegative");
  require(cfg.weight_decay >= 0.0, "train config: weight_decay must be nonnegative");
  require(cfg.schedule == "step" || cfg.schedule == "constant",
          "train config: schedule must be 'step' or 'constant'");
  check_loss_kind(cfg.loss);
  return cfg;
}

Examples regression_examples(const data::Dataset& ds) {
  Examples ex;
  ex.ys.reserve(ds.samples.size());
  ex.targets.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    ex.ys.push_back(s.y);
    ex.targets.push_back({s.d_min, s.d_max});
  }
  return ex;
}

Trainable as_trainable(layers::Model& m) {
  Trainable t;
  t.trainable = m.trainable();
  t.state = m.state();
  layers::Model* pm = &m;
  t.forward = [pm](Tape& tape, const std::vector<std::vector<double>>& ys, Rng& rng,
                   bool train_mode) {
    return layers::model_forward(tape, *pm, ys, rng, train_mode);
  };
  return t;
}

Trainable as_trainable(layers::BaselineMlp& m) {
  Trainable t;
  t.trainable = m.trainable();
  t.state = t.trainable;
  layers::BaselineMlp* pm = &m;
  t.forward = [pm](Tape& tape, const std::vector<std::vector<double>>& ys, Rng&, bool) {
    return layers::baseline_forward(tape, *pm, ys);
  };
  return t;
}

void write_metrics_csv(const std::string& path, const MetricsLog& log) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  os << "epoch,split,metric,value\n";
  char buf[64];
  for (const MetricRow& r : log) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.epoch << ',' << r.split << ',' << r.metric << ',' << buf << '\n';
  }
  os.flush();
  if (!os) throw std::runtime_error("metrics: write failed for " + path);
}

EvalMetrics evaluate(const Trainable& map, const Examples& ex, const std::string& loss_kind,
                     std::uint64_t colloc_seed, int batch) {
  check_loss_kind(loss_kind);
  check_examples(ex, loss_kind);
  require(batch >= 1, "evaluate: batch must be positive");
  std::int64_t n = static_cast<std::int64_t>(ex.ys.size());
  bool regression = loss_kind == "mse";
  std::size_t dim = regression ? ex.targets[0].size() : 0;

  std::vector<double> sq(static_cast<std::size_t>(n)), a_min, a_max, acc;
  if (regression) {
    a_min.resize(static_cast<std::size_t>(n));
    a_max.resize(static_cast<std::size_t>(n));
  } else {
    acc.resize(static_cast<std::size_t>(n));
  }
  for (std::int64_t lo = 0; lo < n; lo += batch) {
    std::int64_t hi = std::min(n, lo + batch);
    std::vector<std::vector<double>> ys(ex.ys.begin() + lo, ex.ys.begin() + hi);
    Tape tape;
    Rng rng(colloc_seed);
    Tensor pred = map.forward(tape, ys, rng, false);
    const std::vector<double>& pv = pred.val();
    std::int64_t b = hi - lo;
    std::int64_t out = static_cast<std::int64_t>(pv.size()) / b;
    for (std::int64_t i = 0; i < b; ++i) {
      std::size_t s = static_cast<std::size_t>(lo + i);
      if (regression) {
        require(static_cast<std::size_t>(out) == dim, "evaluate: prediction width mismatch");
        double ssq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          double e = pv[static_cast<std::size_t>(i * out) + d] - ex.targets[s][d];
          ssq += e * e;
        }
        sq[s] = ssq;
        a_min[s] = std::abs(pv[static_cast<std::size_t>(i * out)] - ex.targets[s][0]);
        std::size_t last = dim >= 2 ? 1 : 0;
        a_max[s] = std::abs(pv[static_cast<std::size_t>(i * out) + last] - ex.targets[s][last]);
      } else {
        int best = 0;
        for (int c = 1; c < out; ++c)
          if (pv[static_cast<std::size_t>(i * out + c)] > pv[static_cast<std::size_t>(i * out + best)])
            best = c;
        acc[s] = best == ex.labels[s] ? 1.0 : 0.0;
      }
    }
  }
  EvalMetrics m;
  if (regression) {
    m.mse = sorted_mean(sq, static_cast<double>(n) * static_cast<double>(dim));
    m.mae_min = sorted_mean(a_min, static_cast<double>(n));
    m.mae_max = sorted_mean(a_max, static_cast<double>(n));
  } else {
    m.accuracy = sorted_mean(acc, static_cast<double>(n));
  }
  return m;
}

EvalMetrics evaluate(layers::Model& m, const Examples& ex, std::uint64_t colloc_seed, int batch) {
  return evaluate(as_trainable(m), ex, ex.labels.empty() ? "mse" : "cross_entropy", colloc_seed,
                  batch);
}

Trainer make_trainer(Trainable map, const TrainConfig& cfg) {
  require(cfg.epochs >= 1, "train: epochs must be positive");
  require(cfg.batch >= 1, "train: batch must be positive");
  require(cfg.base_lr >= 0.0, "train: base_lr must be nonnegative");
  require(cfg.weight_decay >= 0.0, "train: weight_decay must be nonnegative");
  require(cfg.schedule == "step" || cfg.schedule == "constant",
          "train: schedule must be 'step' or 'constant'");
  check_loss_kind(cfg.loss);
  require(!map.trainable.empty() && map.forward != nullptr, "train: map is not bound");
  Trainer tr;
  tr.map = std::move(map);
  tr.cfg = cfg;
  tr.opt.lr = cfg.base_lr;
  tr.opt.weight_decay = cfg.weight_decay;
  tr.opt.coupled_l2 = cfg.coupled_l2;
  tr.data_rng = Rng(derive_seed(cfg.seed, kShuffleStream));
  tr.colloc_rng = Rng(derive_seed(cfg.seed, kCollocStream));
  return tr;
}

double train_step(Trainer& tr, const Examples& train_ex, const Examples& test_ex) {
  const Examples& ex = train_ex;
  check_examples(ex, tr.cfg.loss);
  std::int64_t n = static_cast<std::int64_t>(ex.ys.size());
  if (tr.step_in_epoch == 0) {
    tr.perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) tr.perm[static_cast<std::size_t>(i)] =
        static_cast<std::uint32_t>(i);
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::uint64_t j = tr.data_rng.uniform_index(static_cast<std::uint64_t>(i + 1));
      std::swap(tr.perm[static_cast<std::size_t>(i)], tr.perm[static_cast<std::size_t>(j)]);
    }
    tr.epoch_loss_sum = 0.0;
  }
  require(tr.perm.size() == static_cast<std::size_t>(n),
          "train: dataset size changed mid-epoch");
  std::int64_t lo = tr.step_in_epoch * tr.cfg.batch;
  std::int64_t hi = std::min(n, lo + tr.cfg.batch);
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<double>> targets;
  std::vector<int> labels;
  ys.reserve(static_cast<std::size_t>(hi - lo));
  for (std::int64_t i = lo; i < hi; ++i) {
    std::size_t s = tr.perm[static_cast<std::size_t>(i)];
    ys.push_back(ex.ys[s]);
    if (tr.cfg.loss == "mse")
      targets.push_back(ex.targets[s]);
    else
      labels.push_back(ex.labels[s]);
  }

  tr.opt.lr = lr_schedule(static_cast<int>(tr.epoch), tr.cfg.epochs, tr.cfg.base_lr,
                          tr.cfg.schedule);
  zero_grads(tr.map.trainable);
  Tape tape;
  Tensor pred = tr.map.forward(tape, ys, tr.colloc_rng, true);
  Tensor loss;
  if (tr.cfg.loss == "mse") {
    std::size_t dim = targets[0].size();
    std::vector<double> flat;
    flat.reserve(targets.size() * dim);
    for (const auto& t : targets) flat.insert(flat.end(), t.begin(), t.end());
    Tensor tgt = tape.leaf({static_cast<int>(targets.size()), static_cast<int>(dim)},
                           std::move(flat));
    loss = tensor::mse(pred, tgt);
  } else {
    loss = tensor::softmax_cross_entropy(pred, labels);
  }
  double lval = loss.val()[0];
  tape.backward(loss);
  if (!std::isfinite(lval)) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "train: non-finite loss at epoch %lld step %lld (lr=%.3g, grad norm=%.3g)",
                  static_cast<long long>(tr.epoch), static_cast<long long>(tr.step_in_epoch),
                  tr.opt.lr, grad_norm(tr.map.trainable));
    throw std::runtime_error(buf);
  }
  adam_step(tr.map.trainable, tr.opt);

  tr.epoch_loss_sum += lval;
  tr.global_step += 1;
  tr.step_in_epoch += 1;
  std::int64_t spe = steps_per_epoch(n, tr.cfg.batch);
  if (tr.step_in_epoch >= spe) {
    tr.log.push_back({tr.epoch, "train", "loss", tr.epoch_loss_sum / static_cast<double>(spe)});
    if (!test_ex.ys.empty()) {
      EvalMetrics m = evaluate(tr.map, test_ex, tr.cfg.loss,
                               derive_seed(tr.cfg.seed, kEvalStream), tr.cfg.batch);
      if (tr.cfg.loss == "mse") {
        tr.log.push_back({tr.epoch, "test", "mse", m.mse});
        tr.log.push_back({tr.epoch, "test", "mae_dmin", m.mae_min});
        tr.log.push_back({tr.epoch, "test", "mae_dmax", m.mae_max});
      } else {
        tr.log.push_back({tr.epoch, "test", "accuracy", m.accuracy});
      }
    }
    tr.step_in_epoch = 0;
    tr.epoch += 1;
  }
  return lval;
}

void train_epochs(Trainer& tr, const Examples& train_ex, const Examples& test_ex,
                  std::int64_t n) {
  std::int64_t target = std::min<std::int64_t>(tr.cfg.epochs, tr.epoch + n);
  while (tr.epoch < target) train_step(tr, train_ex, test_ex);
}

MetricsLog fit(Trainable map, const Examples& train_ex, const Examples& test_ex,
               const TrainConfig& cfg) {
  Trainer tr = make_trainer(std::move(map), cfg);
  train_epochs(tr, train_ex, test_ex, cfg.epochs);
  return tr.log;
}

void checkpoint_save(const std::string& path, const Trainer& tr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  put_bytes(os, kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, static_cast<std::uint64_t>(tr.epoch));
  put_u64(os, static_cast<std::uint64_t>(tr.step_in_epoch));
  put_u64(os, static_cast<std::uint64_t>(tr.global_step));
  put_f64(os, tr.epoch_loss_sum);

  put_u64(os, static_cast<std::uint64_t>(tr.opt.t));
  put_f64(os, tr.opt.lr);
  put_u64(os, tr.opt.m.size());
  for (std::size_t i = 0; i < tr.opt.m.size(); ++i) {
    put_u64(os, tr.opt.m[i].size());
    for (double v : tr.opt.m[i]) put_f64(os, v);
    for (double v : tr.opt.v[i]) put_f64(os, v);
  }

  put_u64(os, tr.map.state.size());
  for (const Parameter* p : tr.map.state) {
    put_str(os, p->name);
    put_u64(os, p->value.size());
    for (double v : p->value) put_f64(os, v);
  }

  put_u64(os, tr.perm.size());
  for (std::uint32_t i : tr.perm) put_u32(os, i);
  put_str(os, tr.data_rng.save_state());
  put_str(os, tr.colloc_rng.save_state());

  put_u64(os, tr.log.size());
  for (const MetricRow& r : tr.log) {
    put_u64(os, static_cast<std::uint64_t>(r.epoch));
    put_str(os, r.split);
    put_str(os, r.metric);
    put_f64(os, r.value);
  }
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void checkpoint_load(const std::string& path, Trainer& tr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  tr.epoch = static_cast<std::int64_t>(get_u64(is));
  tr.step_in_epoch = static_cast<std::int64_t>(get_u64(is));
  tr.global_step = static_cast<std::int64_t>(get_u64(is));
  tr.epoch_loss_sum = get_f64(is);

  tr.opt.t = static_cast<std::int64_t>(get_u64(is));
  tr.opt.lr = get_f64(is);
  std::uint64_t nm = get_u64(is);
  if (nm != 0 && nm != tr.map.trainable.size())
    throw std::runtime_error("checkpoint: optimizer moment count mismatch");
  tr.opt.m.assign(nm, {});
  tr.opt.v.assign(nm, {});
  for (std::uint64_t i = 0; i < nm; ++i) {
    std::uint64_t len = get_u64(is);
    if (len != tr.map.trainable[i]->value.size())
      throw std::runtime_error("checkpoint: optimizer moment size mismatch for parameter " +
                               tr.map.trainable[i]->name);
    tr.opt.m[i].resize(len);
    tr.opt.v[i].resize(len);
    for (auto& v : tr.opt.m[i]) v = get_f64(is);
    for (auto& v : tr.opt.v[i]) v = get_f64(is);
  }

  std::uint64_t np = get_u64(is);
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  entries.reserve(np);
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name = get_str(is);
    std::uint64_t len = get_u64(is);
    std::vector<double> vals(len);
    for (auto& v : vals) v = get_f64(is);
    entries.emplace_back(std::move(name), std::move(vals));
  }
  for (Parameter* p : tr.map.state) {
    const std::vector<double>* found = nullptr;
    for (const auto& [name, vals] : entries)
      if (name == p->name) {
        found = &vals;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint: missing parameter " + p->name);
    if (found->size() != p->value.size())
      throw std::runtime_error("checkpoint: size mismatch for parameter " + p->name);
    p->value = *found;
  }

  std::uint64_t pn = get_u64(is);
  tr.perm.resize(pn);
  for (auto& i : tr.perm) i = get_u32(is);
  tr.data_rng.load_state(get_str(is));
  tr.colloc_rng.load_state(get_str(is));

  std::uint64_t rows = get_u64(is);
  tr.log.clear();
  tr.log.reserve(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    MetricRow r;
    r.epoch = static_cast<std::int64_t>(get_u64(is));
    r.split = get_str(is);
    r.metric = get_str(is);
    r.value = get_f64(is);
    tr.log.push_back(std::move(r));
  }
}

}  // namespace eqm::train
