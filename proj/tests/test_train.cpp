#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "eqm/data.hpp"
#include "eqm/tomo.hpp"
#include "eqm/train.hpp"
#include "test_util.hpp"

using namespace eqm;
using namespace eqm::train;
using actions::PointY;
using layers::BaselineMlp;
using layers::Model;
using layers::ModelConfig;
using tensor::Parameter;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<PointY> grid_sensors(int n_angles, int n_offsets) {
  tomo::ParallelGeometry geo;
  geo.angles = testutil::uniform_angles(n_angles);
  geo.offsets = testutil::linspace(-1.0, 1.0, n_offsets);
  return tomo::build_sensors(geo).points;
}

ModelConfig tiny_arch() {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.k = 3;
  cfg.basis = 2;
  cfg.hidden = 3;
  cfg.lift_points = 6;
  return cfg;
}

// Independent Adam recursion, one coordinate at a time.
struct RefAdam {
  double m = 0.0, v = 0.0;
  double step(double g, double theta, std::int64_t t, const OptimState& h) {
    if (h.coupled_l2) g += h.weight_decay * theta;
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    double mhat = m / (1.0 - std::pow(h.beta1, static_cast<double>(t)));
    double vhat = v / (1.0 - std::pow(h.beta2, static_cast<double>(t)));
    double next = theta - h.lr * mhat / (std::sqrt(vhat) + h.eps);
    if (!h.coupled_l2) next -= h.lr * h.weight_decay * theta;
    return next;
  }
};

// Forward that applies f row by row; enough to pin the evaluate() metrics.
Trainable fake_map(std::function<std::vector<double>(const std::vector<double>&)> f) {
  Trainable t;
  t.forward = [f](tensor::Tape& tape, const std::vector<std::vector<double>>& ys, Rng&, bool) {
    std::vector<double> flat;
    int out = 0;
    for (const auto& y : ys) {
      std::vector<double> r = f(y);
      out = static_cast<int>(r.size());
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return tape.leaf({static_cast<int>(ys.size()), out}, std::move(flat));
  };
  return t;
}

Examples random_regression(Rng& rng, int n, std::size_t in_dim) {
  Examples ex;
  for (int i = 0; i < n; ++i) {
    ex.ys.push_back(rand_vec(rng, in_dim));
    ex.targets.push_back(rand_vec(rng, 2, 0.1, 0.7));
  }
  return ex;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool same_params(const std::vector<Parameter*>& a, const std::vector<Parameter*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->name != b[i]->name || a[i]->value != b[i]->value) return false;
  return true;
}

bool same_log(const MetricsLog& a, const MetricsLog& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].epoch != b[i].epoch || a[i].split != b[i].split || a[i].metric != b[i].metric ||
        a[i].value != b[i].value)
      return false;
  return true;
}

}  // namespace

TEST_CASE("adam_step matches an independent per-coordinate reference") {
  for (bool coupled : {false, true}) {
    Rng rng(coupled ? 71 : 70);
    Parameter p1("p1", {3});
    Parameter p2("p2", {2, 2});
    for (auto& v : p1.value) v = rng.uniform(-1.0, 1.0);
    for (auto& v : p2.value) v = rng.uniform(-1.0, 1.0);
    std::vector<Parameter*> params = {&p1, &p2};

    OptimState st;
    st.lr = 0.05;
    st.weight_decay = coupled ? 0.3 : 0.1;
    st.coupled_l2 = coupled;

    std::vector<std::vector<RefAdam>> ref(params.size());
    std::vector<std::vector<double>> want(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ref[i].resize(params[i]->value.size());
      want[i] = params[i]->value;
    }

    for (int step = 1; step <= 7; ++step) {
      st.lr = 0.05 / step;  // the loop feeds a schedule through this field
      for (Parameter* p : params)
        for (auto& g : p->grad) g = rng.uniform(-2.0, 2.0);
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < want[i].size(); ++j)
          want[i][j] = ref[i][j].step(params[i]->grad[j], want[i][j], step, st);
      adam_step(params, st);
      CHECK(st.t == step);
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < want[i].size(); ++j)
          CHECK(testutil::rel_err(params[i]->value[j], want[i][j]) <= 1e-14);
    }
  }
}

TEST_CASE("adam_step limiting behaviors") {
  SUBCASE("zero gradient and zero decay leave parameters untouched") {
    Parameter p("p", {4});
    p.value = {0.3, -0.4, 2.0, -9.0};
    std::vector<double> before = p.value;
    OptimState st;
    adam_step({&p}, st);
    adam_step({&p}, st);
    CHECK(p.value == before);
  }
  SUBCASE("bias-corrected first step moves by about lr") {
    Parameter p("p", {1});
    p.value = {0.5};
    p.grad = {1.0};
    OptimState st;
    st.lr = 0.1;
    adam_step({&p}, st);
    CHECK(testutil::close(p.value[0], 0.4, 1e-8));
  }
  SUBCASE("zero gradient with decoupled decay is a pure shrink") {
    Parameter p("p", {2});
    p.value = {0.8, -1.5};
    OptimState st;
    st.lr = 0.05;
    st.weight_decay = 0.2;
    double w0 = p.value[0] - st.lr * st.weight_decay * p.value[0];
    double w1 = p.value[1] - st.lr * st.weight_decay * p.value[1];
    adam_step({&p}, st);
    CHECK(p.value[0] == w0);
    CHECK(p.value[1] == w1);
  }
  SUBCASE("moment shapes must match the list") {
    Parameter p("p", {2}), q("q", {2});
    OptimState st;
    adam_step({&p}, st);
    CHECK_THROWS_AS(adam_step({&p, &q}, st), std::invalid_argument);
  }
}

TEST_CASE("lr_schedule steps down at the documented fractions") {
  CHECK(lr_schedule(0, 100, 3e-3, "step") == 3e-3);
  CHECK(lr_schedule(59, 100, 3e-3, "step") == 3e-3);
  CHECK(lr_schedule(60, 100, 3e-3, "step") == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_schedule(84, 100, 3e-3, "step") == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_schedule(85, 100, 3e-3, "step") == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_schedule(99, 100, 3e-3, "step") == doctest::Approx(3e-5).epsilon(1e-12));
  for (int e = 0; e < 10; ++e) CHECK(lr_schedule(e, 10, 0.5, "constant") == 0.5);
  CHECK_THROWS_AS(lr_schedule(0, 0, 1.0, "step"), std::invalid_argument);
  CHECK_THROWS_AS(lr_schedule(0, 10, 1.0, "cosine"), std::invalid_argument);
}

TEST_CASE("train config json round trips and rejects unknown keys") {
  TrainConfig cfg;
  cfg.epochs = 42;
  cfg.batch = 4;
  cfg.seed = 99;
  cfg.base_lr = 1e-2;
  cfg.weight_decay = 0.5;
  cfg.coupled_l2 = true;
  cfg.schedule = "constant";
  cfg.loss = "cross_entropy";
  cfg.train_path = "a.eqmd";
  cfg.test_path = "b.eqmd";
  cfg.arch.channels = 5;
  cfg.arch.lift_points = 77;

  TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch == cfg.batch);
  CHECK(back.seed == cfg.seed);
  CHECK(back.base_lr == cfg.base_lr);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.coupled_l2 == cfg.coupled_l2);
  CHECK(back.schedule == cfg.schedule);
  CHECK(back.loss == cfg.loss);
  CHECK(back.train_path == cfg.train_path);
  CHECK(back.test_path == cfg.test_path);
  CHECK(back.arch.channels == 5);
  CHECK(back.arch.lift_points == 77);

  CHECK_THROWS_AS(train_config_from_json("{\"bogus\": 1}"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("{\"epochs\": 0}"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("{\"loss\": \"huber\"}"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("{\"schedule\": \"warmup\"}"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("not json"), std::invalid_argument);
  CHECK_THROWS_AS(train_config_from_json("{\"arch\": {\"bogus\": 1}}"), std::invalid_argument);

  TrainConfig desk = preset("desk");
  CHECK(desk.epochs == 2000);
  CHECK(desk.batch == 8);
  CHECK(desk.base_lr == 3e-3);
  CHECK(desk.weight_decay == 1e-4);
  CHECK(desk.arch.channels == 8);
  CHECK(desk.arch.lift_points == 512);
  TrainConfig full = preset("full");
  CHECK(full.epochs == 3000);
  CHECK(full.arch.channels == 22);
  CHECK(full.arch.lift_points == 2700);
  CHECK_THROWS_AS(preset("laptop"), std::invalid_argument);
}

TEST_CASE("regression examples mirror the dataset") {
  tomo::ParallelGeometry geo;
  geo.angles = {0.0, 1.2};
  geo.offsets = testutil::linspace(-1.2, 1.2, 9);
  tomo::SensorSet sensors = tomo::build_sensors(geo);
  data::Dataset ds = data::build_dataset(3, sensors, 0.0, 17);
  Examples ex = regression_examples(ds);
  REQUIRE(ex.ys.size() == 3);
  REQUIRE(ex.targets.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(ex.ys[static_cast<std::size_t>(i)] == ds.samples[static_cast<std::size_t>(i)].y);
    CHECK(ex.targets[static_cast<std::size_t>(i)][0] ==
          ds.samples[static_cast<std::size_t>(i)].d_min);
    CHECK(ex.targets[static_cast<std::size_t>(i)][1] ==
          ds.samples[static_cast<std::size_t>(i)].d_max);
  }
}

TEST_CASE("evaluate pins the metric definitions on fake predictors") {
  Rng rng(23);
  Examples ex;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> t = rand_vec(rng, 2, 0.1, 0.9);
    ex.ys.push_back(t);  // measurement doubles as the target
    ex.targets.push_back(t);
  }

  SUBCASE("perfect predictor has zero errors") {
    Trainable perfect = fake_map([](const std::vector<double>& y) { return y; });
    EvalMetrics m = evaluate(perfect, ex, "mse", 1, 4);
    CHECK(m.mse == 0.0);
    CHECK(m.mae_min == 0.0);
    CHECK(m.mae_max == 0.0);
  }

  SUBCASE("mean predictor scores the target variance") {
    std::vector<double> mean(2, 0.0);
    for (const auto& t : ex.targets)
      for (int d = 0; d < 2; ++d) mean[static_cast<std::size_t>(d)] += t[static_cast<std::size_t>(d)] / 6.0;
    Trainable constant = fake_map([mean](const std::vector<double>&) { return mean; });
    double want_mse = 0.0, want_min = 0.0, want_max = 0.0;
    for (const auto& t : ex.targets) {
      want_mse += (t[0] - mean[0]) * (t[0] - mean[0]) / 12.0;
      want_mse += (t[1] - mean[1]) * (t[1] - mean[1]) / 12.0;
      want_min += std::abs(t[0] - mean[0]) / 6.0;
      want_max += std::abs(t[1] - mean[1]) / 6.0;
    }
    EvalMetrics m = evaluate(constant, ex, "mse", 1, 4);
    CHECK(testutil::close(m.mse, want_mse, 1e-15));
    CHECK(testutil::close(m.mae_min, want_min, 1e-15));
    CHECK(testutil::close(m.mae_max, want_max, 1e-15));
  }

  SUBCASE("classification accuracy counts argmax hits with lowest-index ties") {
    Examples cl;
    cl.ys = {{2.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, {0.0, 0.5, 3.0}, {0.0, 4.0, 1.0}};
    cl.labels = {0, 1, 2, 1};
    Trainable logits = fake_map([](const std::vector<double>& y) { return y; });
    EvalMetrics m = evaluate(logits, cl, "cross_entropy", 1, 3);
    // row 1 ties between classes 0 and 1; argmax resolves to 0, a miss.
    CHECK(m.accuracy == doctest::Approx(0.75));
  }

  SUBCASE("validation") {
    Trainable id = fake_map([](const std::vector<double>& y) { return y; });
    CHECK_THROWS_AS(evaluate(id, ex, "huber", 1, 4), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(id, ex, "mse", 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(id, Examples{}, "mse", 1, 4), std::invalid_argument);
  }
}

TEST_CASE("evaluate is exactly invariant to dataset order and batch grouping") {
  ModelConfig arch = tiny_arch();
  std::vector<PointY> sensors = grid_sensors(4, 3);
  Model m = layers::build_model(arch, sensors, 5);

  Rng rng(31);
  Examples ex = random_regression(rng, 7, sensors.size());
  Trainable map = as_trainable(m);

  EvalMetrics a = evaluate(map, ex, "mse", 77, 3);
  EvalMetrics b = evaluate(map, ex, "mse", 77, 7);

  Examples rev;
  for (int i = 6; i >= 0; --i) {
    rev.ys.push_back(ex.ys[static_cast<std::size_t>(i)]);
    rev.targets.push_back(ex.targets[static_cast<std::size_t>(i)]);
  }
  EvalMetrics c = evaluate(map, rev, "mse", 77, 3);

  CHECK(a.mse == b.mse);
  CHECK(a.mae_min == b.mae_min);
  CHECK(a.mae_max == b.mae_max);
  CHECK(a.mse == c.mse);
  CHECK(a.mae_min == c.mae_min);
  CHECK(a.mae_max == c.mae_max);
  CHECK(a.mse > 0.0);
}

TEST_CASE("single-sample overfit decreases the loss after warmup") {
  BaselineMlp mlp = layers::build_baseline(3, 8, 2, 2, 13);
  Examples ex;
  ex.ys = {{0.4, -0.2, 0.9}};
  ex.targets = {{0.3, 0.6}};

  TrainConfig cfg;
  cfg.epochs = 250;
  cfg.batch = 1;
  cfg.seed = 7;
  cfg.base_lr = 1e-3;
  cfg.weight_decay = 0.0;
  cfg.schedule = "constant";

  MetricsLog log = fit(as_trainable(mlp), ex, Examples{}, cfg);
  REQUIRE(log.size() == 250);
  for (const MetricRow& r : log) {
    CHECK(r.split == "train");
    CHECK(r.metric == "loss");
  }
  // Monotone decrease holds from warmup until Adam reaches the narrow band
  // around the minimum where it orbits; the decrease down to the band is the
  // overfit evidence.
  const double band = 3e-6;
  std::size_t band_at = log.size();
  for (std::size_t k = 50; k < log.size(); ++k)
    if (log[k].value < band) {
      band_at = k;
      break;
    }
  REQUIRE(band_at < log.size());
  for (std::size_t k = 50; k + 1 < band_at; ++k) CHECK(log[k + 1].value <= log[k].value + 1e-12);
  CHECK(log[band_at].value < 1e-3 * log.front().value);
}

TEST_CASE("zero learning rate leaves trainable parameters bit identical") {
  ModelConfig arch = tiny_arch();
  std::vector<PointY> sensors = grid_sensors(4, 3);
  Model m = layers::build_model(arch, sensors, 5);

  Rng rng(37);
  Examples ex = random_regression(rng, 4, sensors.size());

  std::vector<std::vector<double>> before;
  for (Parameter* p : m.trainable()) before.push_back(p->value);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.base_lr = 0.0;
  cfg.weight_decay = 1e-4;

  Trainer tr = make_trainer(as_trainable(m), cfg);
  train_epochs(tr, ex, Examples{}, 1);

  std::vector<Parameter*> after = m.trainable();
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value == before[i]);

  // training mode still advances the batchnorm running statistics
  bool stats_moved = false;
  for (Parameter* p : m.state()) {
    if (p->name.find("running") == std::string::npos) continue;
    for (double v : p->value)
      if (v != 0.0 && v != 1.0) stats_moved = true;
  }
  CHECK(stats_moved);
}

TEST_CASE("fixed seed reproduces the metrics log byte for byte") {
  ModelConfig arch = tiny_arch();
  std::vector<PointY> sensors = grid_sensors(4, 3);

  Rng rng(41);
  Examples tr_ex = random_regression(rng, 6, sensors.size());
  Examples te_ex = random_regression(rng, 4, sensors.size());

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.seed = 11;
  cfg.base_lr = 1e-3;

  Model m1 = layers::build_model(arch, sensors, 5);
  Model m2 = layers::build_model(arch, sensors, 5);
  MetricsLog l1 = fit(as_trainable(m1), tr_ex, te_ex, cfg);
  MetricsLog l2 = fit(as_trainable(m2), tr_ex, te_ex, cfg);

  REQUIRE(l1.size() == 3 * 4);  // train/loss + three test metrics per epoch
  CHECK(same_log(l1, l2));

  write_metrics_csv("train_metrics_a.csv", l1);
  write_metrics_csv("train_metrics_b.csv", l2);
  CHECK(read_file("train_metrics_a.csv") == read_file("train_metrics_b.csv"));
  std::remove("train_metrics_a.csv");
  std::remove("train_metrics_b.csv");

  Model m3 = layers::build_model(arch, sensors, 5);
  TrainConfig other = cfg;
  other.seed = 12;
  MetricsLog l3 = fit(as_trainable(m3), tr_ex, te_ex, other);
  CHECK_FALSE(same_log(l1, l3));
}

TEST_CASE("metrics csv has the documented shape") {
  MetricsLog log = {{0, "train", "loss", 0.5},
                    {0, "test", "mse", 0.125},
                    {1, "train", "loss", 1.0 / 3.0}};
  write_metrics_csv("train_metrics_shape.csv", log);
  std::ifstream is("train_metrics_shape.csv");
  REQUIRE(bool(is));
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,split,metric,value");
  std::getline(is, line);
  CHECK(line == "0,train,loss,0.5");
  std::getline(is, line);
  CHECK(line == "0,test,mse,0.125");
  std::getline(is, line);
  long long e = -1;
  char split[16], metric[16];
  double v = 0.0;
  REQUIRE(std::sscanf(line.c_str(), "%lld,%15[^,],%15[^,],%lf", &e, split, metric, &v) == 4);
  CHECK(e == 1);
  CHECK(std::string(split) == "train");
  CHECK(std::string(metric) == "loss");
  CHECK(v == 1.0 / 3.0);  // %.17g survives the round trip
  std::getline(is, line);
  CHECK(line.empty());
  std::remove("train_metrics_shape.csv");
}

TEST_CASE("learning rate follows the schedule during training") {
  BaselineMlp mlp = layers::build_baseline(2, 3, 2, 2, 3);
  Examples ex;
  ex.ys = {{0.1, 0.2}, {0.3, -0.1}};
  ex.targets = {{0.2, 0.4}, {0.1, 0.3}};

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 2;
  cfg.base_lr = 1e-2;
  Trainer tr = make_trainer(as_trainable(mlp), cfg);
  for (int step = 0; step < 10; ++step) {
    double want = lr_schedule(static_cast<int>(tr.epoch), 10, 1e-2, "step");
    train_step(tr, ex, Examples{});
    CHECK(tr.opt.lr == want);
  }
  CHECK(tr.opt.lr == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("checkpoint round trips bit exactly") {
  ModelConfig arch = tiny_arch();
  std::vector<PointY> sensors = grid_sensors(4, 3);

  Rng rng(43);
  Examples ex = random_regression(rng, 5, sensors.size());

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 2;
  cfg.seed = 3;
  cfg.base_lr = 2e-3;

  Model ma = layers::build_model(arch, sensors, 9);
  Trainer a = make_trainer(as_trainable(ma), cfg);
  for (int s = 0; s < 4; ++s) train_step(a, ex, Examples{});  // stops mid-epoch
  checkpoint_save("train_ckpt_a.bin", a);

  Model mb = layers::build_model(arch, sensors, 9);
  Trainer b = make_trainer(as_trainable(mb), cfg);
  checkpoint_load("train_ckpt_a.bin", b);

  CHECK(b.epoch == a.epoch);
  CHECK(b.step_in_epoch == a.step_in_epoch);
  CHECK(b.global_step == a.global_step);
  CHECK(b.epoch_loss_sum == a.epoch_loss_sum);
  CHECK(b.opt.t == a.opt.t);
  CHECK(b.opt.m == a.opt.m);
  CHECK(b.opt.v == a.opt.v);
  CHECK(b.perm == a.perm);
  CHECK(b.data_rng.save_state() == a.data_rng.save_state());
  CHECK(b.colloc_rng.save_state() == a.colloc_rng.save_state());
  CHECK(same_log(a.log, b.log));
  CHECK(same_params(a.map.state, b.map.state));

  checkpoint_save("train_ckpt_b.bin", b);
  CHECK(read_file("train_ckpt_a.bin") == read_file("train_ckpt_b.bin"));

  // both trainers keep agreeing once stepped further
  for (int s = 0; s < 3; ++s) {
    train_step(a, ex, Examples{});
    train_step(b, ex, Examples{});
  }
  CHECK(same_params(a.map.state, b.map.state));
  std::remove("train_ckpt_a.bin");
  std::remove("train_ckpt_b.bin");
}

TEST_CASE("resume mid-epoch equals the straight run") {
  ModelConfig arch = tiny_arch();
  std::vector<PointY> sensors = grid_sensors(4, 3);

  Rng rng(47);
  Examples tr_ex = random_regression(rng, 5, sensors.size());
  Examples te_ex = random_regression(rng, 3, sensors.size());

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.seed = 21;
  cfg.base_lr = 1e-3;

  Model ms = layers::build_model(arch, sensors, 9);
  Trainer straight = make_trainer(as_trainable(ms), cfg);
  train_epochs(straight, tr_ex, te_ex, 3);

  Model mi = layers::build_model(arch, sensors, 9);
  Trainer interrupted = make_trainer(as_trainable(mi), cfg);
  for (int s = 0; s < 4; ++s) train_step(interrupted, tr_ex, te_ex);
  CHECK(interrupted.step_in_epoch != 0);
  checkpoint_save("train_ckpt_resume.bin", interrupted);

  Model mr = layers::build_model(arch, sensors, 9);
  Trainer resumed = make_trainer(as_trainable(mr), cfg);
  checkpoint_load("train_ckpt_resume.bin", resumed);
  while (resumed.epoch < 3) train_step(resumed, tr_ex, te_ex);

  CHECK(same_params(straight.map.state, resumed.map.state));
  CHECK(same_log(straight.log, resumed.log));
  std::remove("train_ckpt_resume.bin");
}

TEST_CASE("checkpoint rejects other formats and mismatched shapes") {
  BaselineMlp mlp = layers::build_baseline(2, 3, 2, 2, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 1;
  Trainer tr = make_trainer(as_trainable(mlp), cfg);
  checkpoint_save("train_ckpt_fresh.bin", tr);  // no moments yet
  Trainer back = make_trainer(as_trainable(mlp), cfg);
  checkpoint_load("train_ckpt_fresh.bin", back);
  CHECK(back.opt.t == 0);

  std::string bytes = read_file("train_ckpt_fresh.bin");
  {
    std::string bad = bytes;
    bad[4] = 9;  // version field
    std::ofstream os("train_ckpt_bad.bin", std::ios::binary);
    os << bad;
  }
  CHECK_THROWS_WITH_AS(checkpoint_load("train_ckpt_bad.bin", back),
                       "checkpoint: unsupported format version 9", std::runtime_error);
  {
    std::ofstream os("train_ckpt_bad.bin", std::ios::binary);
    os << "NOPE" << bytes.substr(4);
  }
  CHECK_THROWS_WITH_AS(checkpoint_load("train_ckpt_bad.bin", back), "checkpoint: bad magic",
                       std::runtime_error);
  {
    std::ofstream os("train_ckpt_bad.bin", std::ios::binary);
    os << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(checkpoint_load("train_ckpt_bad.bin", back), std::runtime_error);

  BaselineMlp other = layers::build_baseline(2, 5, 2, 2, 3);
  Trainer wrong = make_trainer(as_trainable(other), cfg);
  CHECK_THROWS_AS(checkpoint_load("train_ckpt_fresh.bin", wrong), std::runtime_error);
  CHECK_THROWS_AS(checkpoint_load("train_ckpt_missing.bin", back), std::runtime_error);
  std::remove("train_ckpt_fresh.bin");
  std::remove("train_ckpt_bad.bin");
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  BaselineMlp mlp = layers::build_baseline(2, 3, 2, 2, 3);
  mlp.w[0].value[0] = 1e308;
  Examples ex;
  ex.ys = {{1.0, 1.0}};
  ex.targets = {{0.0, 0.0}};
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 1;
  Trainer tr = make_trainer(as_trainable(mlp), cfg);
  try {
    train_step(tr, ex, Examples{});
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("lr=") != std::string::npos);
    CHECK(msg.find("grad norm=") != std::string::npos);
  }
}

TEST_CASE("classification training separates a toy problem") {
  BaselineMlp mlp = layers::build_baseline(1, 8, 2, 2, 29);
  Examples ex;
  for (int i = 0; i < 8; ++i) {
    double x = -0.7 + 0.2 * i;
    ex.ys.push_back({x});
    ex.labels.push_back(x > 0.0 ? 1 : 0);
  }

  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.batch = 4;
  cfg.seed = 5;
  cfg.base_lr = 1e-2;
  cfg.weight_decay = 0.0;
  cfg.schedule = "constant";
  cfg.loss = "cross_entropy";

  MetricsLog log = fit(as_trainable(mlp), ex, ex, cfg);
  REQUIRE(log.size() == 80 * 2);
  double first_loss = log[0].value;
  double last_loss = 0.0, last_acc = 0.0;
  for (const MetricRow& r : log) {
    if (r.split == "train" && r.metric == "loss") last_loss = r.value;
    if (r.split == "test" && r.metric == "accuracy") last_acc = r.value;
  }
  CHECK(last_loss < 0.2 * first_loss);
  CHECK(last_acc == 1.0);
}

TEST_CASE("trainer construction validates its inputs") {
  BaselineMlp mlp = layers::build_baseline(2, 3, 2, 2, 3);
  TrainConfig cfg;
  cfg.batch = 0;
  CHECK_THROWS_AS(make_trainer(as_trainable(mlp), cfg), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.loss = "huber";
  CHECK_THROWS_AS(make_trainer(as_trainable(mlp), cfg), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.schedule = "cosine";
  CHECK_THROWS_AS(make_trainer(as_trainable(mlp), cfg), std::invalid_argument);
  CHECK_THROWS_AS(make_trainer(Trainable{}, TrainConfig{}), std::invalid_argument);

  Trainer tr = make_trainer(as_trainable(mlp), TrainConfig{});
  CHECK_THROWS_AS(train_step(tr, Examples{}, Examples{}), std::invalid_argument);
  Examples bad;
  bad.ys = {{0.1, 0.2}};
  CHECK_THROWS_AS(train_step(tr, bad, Examples{}), std::invalid_argument);  // no targets
}
