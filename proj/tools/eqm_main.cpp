#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eqm/data.hpp"
#include "eqm/layers.hpp"
#include "eqm/svg.hpp"
#include "eqm/theory.hpp"
#include "eqm/tomo.hpp"
#include "eqm/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eqm;
using actions::PointY;
using group::GroupElement;
using group::GroupId;
using tensor::GradInput;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

void check_keys(const json& j, const std::unordered_set<std::string>& known, const char* ctx) {
  require(j.is_object(), std::string(ctx) + ": document must be an object");
  for (const auto& item : j.items())
    require(known.count(item.key()) > 0,
            std::string(ctx) + ": unknown key '" + item.key() + "'");
}

void apply_threads_env() {
#ifdef _OPENMP
  if (const char* v = std::getenv("EQM_THREADS")) {
    int n = std::atoi(v);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Vec2 disc_sample(Rng& rng, double radius) {
  double r = radius * std::sqrt(rng.uniform());
  double t = rng.uniform(0.0, kTwoPi);
  return {r * std::cos(t), r * std::sin(t)};
}

// Each command owns one output directory and never writes elsewhere.
struct Out {
  fs::path dir;
  explicit Out(const std::string& d) : dir(d) {
    require(!d.empty(), "--out is required");
    fs::create_directories(dir);
  }
  fs::path operator/(const std::string& name) const { return dir / name; }
};

void echo_configs(const Out& out, const std::string& config_path, const std::string& resolved) {
  if (!config_path.empty()) write_text(out / "config.json", read_text(config_path));
  write_text(out / "config_resolved.json", resolved);
}

// ---------------------------------------------------------------- gen-data

struct GenConfig {
  std::vector<int> train_sizes = {1000};
  int n_test = 200;
  double noise = 0.05;
  std::vector<double> angles_deg = {0.0, 85.0};
  int n_offsets = 17;
  double offset_lo = -1.4;
  double offset_hi = 1.4;
  std::uint64_t seed = 0;
};

GenConfig gen_preset(const std::string& name) {
  GenConfig cfg;
  if (name.empty() || name == "desk") return cfg;
  if (name == "table1") {
    cfg.train_sizes = {1000, 2000, 4000, 8000};
    cfg.n_test = 2000;
    return cfg;
  }
  throw std::invalid_argument("gen-data: preset must be 'desk' or 'table1'");
}

GenConfig parse_gen_config(const std::string& text, const GenConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("gen-data config: ") + e.what());
  }
  check_keys(j,
             {"train_sizes", "n_test", "noise", "angles_deg", "n_offsets", "offset_lo",
              "offset_hi", "seed"},
             "gen-data config");
  GenConfig cfg = base;
  try {
    if (j.contains("train_sizes")) cfg.train_sizes = j.at("train_sizes").get<std::vector<int>>();
    cfg.n_test = j.value("n_test", cfg.n_test);
    cfg.noise = j.value("noise", cfg.noise);
    if (j.contains("angles_deg")) cfg.angles_deg = j.at("angles_deg").get<std::vector<double>>();
    cfg.n_offsets = j.value("n_offsets", cfg.n_offsets);
    cfg.offset_lo = j.value("offset_lo", cfg.offset_lo);
    cfg.offset_hi = j.value("offset_hi", cfg.offset_hi);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("gen-data config: ") + e.what());
  }
  require(!cfg.train_sizes.empty(), "gen-data config: train_sizes is empty");
  for (int n : cfg.train_sizes) require(n >= 1, "gen-data config: train sizes must be positive");
  require(cfg.n_test >= 1, "gen-data config: n_test must be positive");
  require(cfg.noise >= 0.0, "gen-data config: noise must be nonnegative");
  require(cfg.angles_deg.size() >= 1, "gen-data config: angles_deg is empty");
  require(cfg.n_offsets >= 2, "gen-data config: n_offsets must be at least 2");
  require(cfg.offset_hi > cfg.offset_lo, "gen-data config: offset range is empty");
  return cfg;
}

std::string gen_config_json(const GenConfig& cfg) {
  json j;
  j["train_sizes"] = cfg.train_sizes;
  j["n_test"] = cfg.n_test;
  j["noise"] = cfg.noise;
  j["angles_deg"] = cfg.angles_deg;
  j["n_offsets"] = cfg.n_offsets;
  j["offset_lo"] = cfg.offset_lo;
  j["offset_hi"] = cfg.offset_hi;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

tomo::SensorSet gen_sensors(const GenConfig& cfg) {
  tomo::ParallelGeometry geo;
  for (double d : cfg.angles_deg) geo.angles.push_back(d * kPi / 180.0);
  geo.offsets.resize(static_cast<std::size_t>(cfg.n_offsets));
  for (int i = 0; i < cfg.n_offsets; ++i)
    geo.offsets[static_cast<std::size_t>(i)] =
        cfg.offset_lo + (cfg.offset_hi - cfg.offset_lo) * i / (cfg.n_offsets - 1);
  return tomo::build_sensors(geo);
}

void summarize(std::ostream& os, const std::string& file, const data::Dataset& ds) {
  double lo[2], hi[2], sum[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    double t[2] = {ds.samples[i].d_min, ds.samples[i].d_max};
    for (int d = 0; d < 2; ++d) {
      if (i == 0) lo[d] = hi[d] = t[d];
      lo[d] = std::min(lo[d], t[d]);
      hi[d] = std::max(hi[d], t[d]);
      sum[d] += t[d];
    }
  }
  const char* names[2] = {"d_min", "d_max"};
  for (int d = 0; d < 2; ++d) {
    double n = static_cast<double>(ds.samples.size());
    os << file << ',' << names[d] << ",mean," << fmt(sum[d] / n) << '\n';
    os << file << ',' << names[d] << ",min," << fmt(lo[d]) << '\n';
    os << file << ',' << names[d] << ",max," << fmt(hi[d]) << '\n';
  }
}

int run_gen_data(const std::string& config_path, const std::string& preset,
                 const std::string& out_dir, std::uint64_t seed, bool has_seed) {
  GenConfig cfg = gen_preset(preset);
  if (!config_path.empty()) cfg = parse_gen_config(read_text(config_path), cfg);
  if (has_seed) cfg.seed = seed;
  Out out(out_dir);
  tomo::SensorSet sensors = gen_sensors(cfg);

  std::ofstream summary(out / "summary.csv");
  summary << "file,target,stat,value\n";
  std::uint64_t train_master = derive_seed(cfg.seed, 1);
  for (std::size_t i = 0; i < cfg.train_sizes.size(); ++i) {
    int n = cfg.train_sizes[i];
    data::Dataset ds = data::build_dataset(n, sensors, cfg.noise, derive_seed(train_master, i));
    std::string name = "train_" + std::to_string(n) + ".eqmd";
    data::save_dataset((out / name).string(), ds);
    summarize(summary, name, ds);
    std::cout << name << ": " << n << " samples\n";
  }
  data::Dataset te =
      data::build_dataset(cfg.n_test, sensors, cfg.noise, derive_seed(derive_seed(cfg.seed, 2), 0));
  data::save_dataset((out / "test.eqmd").string(), te);
  summarize(summary, "test.eqmd", te);
  std::cout << "test.eqmd: " << cfg.n_test << " samples\n";
  summary.flush();
  require(bool(summary), "gen-data: summary write failed");

  echo_configs(out, config_path, gen_config_json(cfg));
  return 0;
}

// ------------------------------------------------------------------- train

int run_train(const std::string& config_path, const std::string& preset,
              const std::string& out_dir, std::uint64_t seed, bool has_seed,
              const std::string& train_data, const std::string& test_data,
              const std::string& resume, int checkpoint_every) {
  train::TrainConfig cfg = train::preset(preset.empty() ? "desk" : preset);
  if (!config_path.empty()) cfg = train::train_config_from_json(read_text(config_path));
  if (has_seed) cfg.seed = seed;
  if (!train_data.empty()) cfg.train_path = train_data;
  if (!test_data.empty()) cfg.test_path = test_data;
  require(cfg.loss == "mse", "train: ring datasets carry regression targets; loss must be 'mse'");
  require(!cfg.train_path.empty(), "train: train_path is required (config key or --train-data)");
  require(checkpoint_every >= 0, "train: --checkpoint-every must be nonnegative");

  data::Dataset tr_ds = data::load_dataset(cfg.train_path);
  train::Examples tr_ex = train::regression_examples(tr_ds);
  train::Examples te_ex;
  if (!cfg.test_path.empty()) {
    data::Dataset te_ds = data::load_dataset(cfg.test_path);
    require(te_ds.sensors.size() == tr_ds.sensors.size(),
            "train: train and test datasets use different sensor sets");
    te_ex = train::regression_examples(te_ds);
  }

  layers::Model model =
      layers::build_model(cfg.arch, tr_ds.sensors, derive_seed(cfg.seed, 0x4d4f44));
  train::Trainer tr = train::make_trainer(train::as_trainable(model), cfg);
  if (!resume.empty()) train::checkpoint_load(resume, tr);

  Out out(out_dir);
  echo_configs(out, config_path, train::train_config_to_json(cfg));
  write_text(out / "model.json", layers::model_config_to_json(cfg.arch));

  fs::path ckpt = out / "checkpoint.bin";
  while (tr.epoch < cfg.epochs) {
    std::int64_t chunk = checkpoint_every > 0 ? checkpoint_every : cfg.epochs;
    train::train_epochs(tr, tr_ex, te_ex, chunk);
    train::checkpoint_save(ckpt.string(), tr);
  }
  train::write_metrics_csv((out / "metrics.csv").string(), tr.log);

  for (auto it = tr.log.rbegin(); it != tr.log.rend(); ++it) {
    if (it->epoch != tr.log.back().epoch) break;
    std::cout << it->split << '/' << it->metric << " = " << fmt(it->value) << '\n';
  }
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalConfig {
  std::string checkpoint, model, dataset;
  int batch = 8;
  std::uint64_t seed = 0;
};

EvalConfig parse_eval_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("eval config: ") + e.what());
  }
  check_keys(j, {"checkpoint", "model", "dataset", "batch", "seed"}, "eval config");
  EvalConfig cfg;
  try {
    cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
    cfg.model = j.value("model", cfg.model);
    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("eval config: ") + e.what());
  }
  require(!cfg.checkpoint.empty(), "eval config: checkpoint is required");
  require(!cfg.model.empty(), "eval config: model is required");
  require(!cfg.dataset.empty(), "eval config: dataset is required");
  require(cfg.batch >= 1, "eval config: batch must be positive");
  return cfg;
}

std::string eval_config_json(const EvalConfig& cfg) {
  json j;
  j["checkpoint"] = cfg.checkpoint;
  j["model"] = cfg.model;
  j["dataset"] = cfg.dataset;
  j["batch"] = cfg.batch;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

double mean_baseline_mse(const train::Examples& ex) {
  std::size_t dim = ex.targets[0].size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& t : ex.targets)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += t[d] / static_cast<double>(ex.targets.size());
  double mse = 0.0;
  for (const auto& t : ex.targets)
    for (std::size_t d = 0; d < dim; ++d)
      mse += (t[d] - mean[d]) * (t[d] - mean[d]) /
             (static_cast<double>(ex.targets.size()) * static_cast<double>(dim));
  return mse;
}

int run_eval(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
             bool has_seed) {
  require(!config_path.empty(), "eval: --config is required");
  EvalConfig cfg = parse_eval_config(read_text(config_path));
  if (has_seed) cfg.seed = seed;

  layers::ModelConfig arch = layers::model_config_from_json(read_text(cfg.model));
  data::Dataset ds = data::load_dataset(cfg.dataset);
  train::Examples ex = train::regression_examples(ds);

  layers::Model model = layers::build_model(arch, ds.sensors, 0);
  train::TrainConfig tc;
  tc.batch = cfg.batch;
  tc.seed = cfg.seed;
  train::Trainer tr = train::make_trainer(train::as_trainable(model), tc);
  train::checkpoint_load(cfg.checkpoint, tr);

  train::EvalMetrics m =
      train::evaluate(tr.map, ex, "mse", derive_seed(cfg.seed, 0x4556), cfg.batch);
  double baseline = mean_baseline_mse(ex);

  Out out(out_dir);
  train::MetricsLog log = {{0, "test", "mse", m.mse},
                           {0, "test", "mae_dmin", m.mae_min},
                           {0, "test", "mae_dmax", m.mae_max},
                           {0, "test", "mse_mean_baseline", baseline}};
  train::write_metrics_csv((out / "metrics.csv").string(), log);
  echo_configs(out, config_path, eval_config_json(cfg));

  for (const auto& r : log) std::cout << r.split << '/' << r.metric << " = " << fmt(r.value) << '\n';
  return 0;
}

// ------------------------------------------------------ audit-equivariance

struct AuditEqConfig {
  std::vector<int> angle_counts = {2, 8, 32};
  int n_offsets = 17;
  double offset_lo = -1.4;
  double offset_hi = 1.4;
  int g_samples = 20;
  double max_rotation = kTwoPi;
  double max_translation = 0.15;
  bool svg = true;
  std::uint64_t seed = 0;
  layers::ModelConfig arch;
};

AuditEqConfig parse_audit_eq_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("audit-equivariance config: ") + e.what());
  }
  check_keys(j,
             {"angle_counts", "n_offsets", "offset_lo", "offset_hi", "g_samples", "max_rotation",
              "max_translation", "svg", "seed", "arch"},
             "audit-equivariance config");
  AuditEqConfig cfg;
  try {
    if (j.contains("angle_counts")) cfg.angle_counts = j.at("angle_counts").get<std::vector<int>>();
    cfg.n_offsets = j.value("n_offsets", cfg.n_offsets);
    cfg.offset_lo = j.value("offset_lo", cfg.offset_lo);
    cfg.offset_hi = j.value("offset_hi", cfg.offset_hi);
    cfg.g_samples = j.value("g_samples", cfg.g_samples);
    cfg.max_rotation = j.value("max_rotation", cfg.max_rotation);
    cfg.max_translation = j.value("max_translation", cfg.max_translation);
    cfg.svg = j.value("svg", cfg.svg);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("arch")) cfg.arch = layers::model_config_from_json(j.at("arch").dump());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("audit-equivariance config: ") + e.what());
  }
  require(!cfg.angle_counts.empty(), "audit-equivariance config: angle_counts is empty");
  for (int a : cfg.angle_counts)
    require(a >= 1, "audit-equivariance config: angle counts must be positive");
  require(cfg.n_offsets >= 2, "audit-equivariance config: n_offsets must be at least 2");
  require(cfg.offset_hi > cfg.offset_lo, "audit-equivariance config: offset range is empty");
  require(cfg.g_samples >= 1, "audit-equivariance config: g_samples must be positive");
  require(cfg.max_rotation >= 0.0 && cfg.max_translation >= 0.0,
          "audit-equivariance config: transform bounds must be nonnegative");
  return cfg;
}

std::string audit_eq_config_json(const AuditEqConfig& cfg) {
  json j;
  j["angle_counts"] = cfg.angle_counts;
  j["n_offsets"] = cfg.n_offsets;
  j["offset_lo"] = cfg.offset_lo;
  j["offset_hi"] = cfg.offset_hi;
  j["g_samples"] = cfg.g_samples;
  j["max_rotation"] = cfg.max_rotation;
  j["max_translation"] = cfg.max_translation;
  j["svg"] = cfg.svg;
  j["seed"] = cfg.seed;
  j["arch"] = json::parse(layers::model_config_to_json(cfg.arch));
  return j.dump(2);
}

int run_audit_equivariance(const std::string& config_path, const std::string& out_dir,
                           std::uint64_t seed, bool has_seed) {
  AuditEqConfig cfg;
  if (!config_path.empty()) cfg = parse_audit_eq_config(read_text(config_path));
  if (has_seed) cfg.seed = seed;
  Out out(out_dir);
  echo_configs(out, config_path, audit_eq_config_json(cfg));

  Rng ring_rng(derive_seed(cfg.seed, 0x7269));
  tomo::Phantom phantom = data::gen_ring(ring_rng).phantom;

  Rng g_rng(derive_seed(cfg.seed, 0x6773));
  std::vector<GroupElement> gs;
  for (int i = 0; i < cfg.g_samples; ++i) {
    Vec2 t = disc_sample(g_rng, cfg.max_translation);
    if (cfg.arch.gid == GroupId::SE2) {
      gs.push_back(group::se2(t, g_rng.uniform(0.0, cfg.max_rotation)));
    } else {
      GroupElement a = group::sample_group(GroupId::AffPlus2, g_rng);
      gs.push_back(group::aff(t, a.A));
    }
  }
  if (cfg.max_rotation == 0.0 && cfg.max_translation == 0.0)
    for (auto& g : gs) g = group::identity(cfg.arch.gid);

  std::ofstream csv(out / "audit_equivariance.csv");
  csv << "angles,row,value\n";
  std::vector<double> xs, meds;
  for (int angles : cfg.angle_counts) {
    tomo::ParallelGeometry geo;
    for (int a = 0; a < angles; ++a) geo.angles.push_back(kPi * a / angles);
    geo.offsets.resize(static_cast<std::size_t>(cfg.n_offsets));
    for (int i = 0; i < cfg.n_offsets; ++i)
      geo.offsets[static_cast<std::size_t>(i)] =
          cfg.offset_lo + (cfg.offset_hi - cfg.offset_lo) * i / (cfg.n_offsets - 1);
    tomo::SensorSet sensors = tomo::build_sensors(geo);

    layers::Model model = layers::build_model(
        cfg.arch, sensors.points, derive_seed(cfg.seed, 0x4d00 + static_cast<std::uint64_t>(angles)));
    std::vector<double> residuals;
    for (int i = 0; i < cfg.g_samples; ++i) {
      double r = layers::model_equivariance_residual(model, phantom, gs[static_cast<std::size_t>(i)],
                                                     derive_seed(cfg.seed, 0xc011));
      residuals.push_back(r);
      csv << angles << ",g" << i << ',' << fmt(r) << '\n';
    }
    double med = median(residuals);
    csv << angles << ",median," << fmt(med) << '\n';
    std::cout << "angles=" << angles << " median residual = " << fmt(med) << '\n';
    xs.push_back(static_cast<double>(angles));
    meds.push_back(med);
  }
  csv.flush();
  require(bool(csv), "audit-equivariance: csv write failed");

  if (cfg.svg) {
    bool positive = true;
    for (double m : meds) positive = positive && m > 0.0;
    svg::write_line_chart((out / "audit_equivariance.svg").string(),
                          "Invariance residual vs measurement angles", "angles",
                          "median residual", {{"median residual", xs, meds}}, positive);
  }
  return 0;
}

// -------------------------------------------------------- audit-visibility

struct AuditVisConfig {
  int grid = 16;
  std::vector<std::vector<double>> angle_sets_deg;  // default set in ctor below
  int n_offsets = 33;
  double offset_lo = -1.0;
  double offset_hi = 1.0;
  double rotation_deg = 90.0;
  double rank_tol = 1e-10;
  double angle_tol = 1e-6;
  std::uint64_t seed = 0;

  AuditVisConfig() {
    std::vector<double> dense;
    for (int a = 0; a < 24; ++a) dense.push_back(180.0 * a / 24);
    angle_sets_deg = {dense, {0.0, 85.0}};
  }
};

AuditVisConfig parse_audit_vis_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("audit-visibility config: ") + e.what());
  }
  check_keys(j,
             {"grid", "angle_sets_deg", "n_offsets", "offset_lo", "offset_hi", "rotation_deg",
              "rank_tol", "angle_tol", "seed"},
             "audit-visibility config");
  AuditVisConfig cfg;
  try {
    cfg.grid = j.value("grid", cfg.grid);
    if (j.contains("angle_sets_deg"))
      cfg.angle_sets_deg = j.at("angle_sets_deg").get<std::vector<std::vector<double>>>();
    cfg.n_offsets = j.value("n_offsets", cfg.n_offsets);
    cfg.offset_lo = j.value("offset_lo", cfg.offset_lo);
    cfg.offset_hi = j.value("offset_hi", cfg.offset_hi);
    cfg.rotation_deg = j.value("rotation_deg", cfg.rotation_deg);
    cfg.rank_tol = j.value("rank_tol", cfg.rank_tol);
    cfg.angle_tol = j.value("angle_tol", cfg.angle_tol);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("audit-visibility config: ") + e.what());
  }
  require(cfg.grid >= 2, "audit-visibility config: grid must be at least 2");
  require(!cfg.angle_sets_deg.empty(), "audit-visibility config: angle_sets_deg is empty");
  for (const auto& set : cfg.angle_sets_deg)
    require(!set.empty(), "audit-visibility config: angle sets must be nonempty");
  require(cfg.n_offsets >= 2, "audit-visibility config: n_offsets must be at least 2");
  require(cfg.offset_hi > cfg.offset_lo, "audit-visibility config: offset range is empty");
  require(cfg.rank_tol > 0.0 && cfg.angle_tol > 0.0,
          "audit-visibility config: tolerances must be positive");
  return cfg;
}

std::string audit_vis_config_json(const AuditVisConfig& cfg) {
  json j;
  j["grid"] = cfg.grid;
  j["angle_sets_deg"] = cfg.angle_sets_deg;
  j["n_offsets"] = cfg.n_offsets;
  j["offset_lo"] = cfg.offset_lo;
  j["offset_hi"] = cfg.offset_hi;
  j["rotation_deg"] = cfg.rotation_deg;
  j["rank_tol"] = cfg.rank_tol;
  j["angle_tol"] = cfg.angle_tol;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

int run_audit_visibility(const std::string& config_path, const std::string& out_dir,
                         std::uint64_t seed, bool has_seed) {
  AuditVisConfig cfg;
  if (!config_path.empty()) cfg = parse_audit_vis_config(read_text(config_path));
  if (has_seed) cfg.seed = seed;
  Out out(out_dir);
  echo_configs(out, config_path, audit_vis_config_json(cfg));

  GroupElement rot = group::se2({0.0, 0.0}, cfg.rotation_deg * kPi / 180.0);
  std::vector<double> P = theory::discretize_rep(rot, cfg.grid, cfg.grid, 1.0);

  std::ofstream csv(out / "audit_visibility.csv");
  csv << "set,n_angles,holds,mismatch_angle,ker_dim,ker_dim_p\n";
  for (std::size_t s = 0; s < cfg.angle_sets_deg.size(); ++s) {
    const std::vector<double>& set = cfg.angle_sets_deg[s];
    tomo::ParallelGeometry geo;
    for (double d : set) geo.angles.push_back(d * kPi / 180.0);
    geo.offsets.resize(static_cast<std::size_t>(cfg.n_offsets));
    for (int i = 0; i < cfg.n_offsets; ++i)
      geo.offsets[static_cast<std::size_t>(i)] =
          cfg.offset_lo + (cfg.offset_hi - cfg.offset_lo) * i / (cfg.n_offsets - 1);
    theory::DenseOperator A = theory::discretize_radon(cfg.grid, cfg.grid, 1.0, geo);
    theory::VisibilityReport rep =
        theory::check_visibility(A.matrix, A.rows(), A.cols(), P, cfg.rank_tol, cfg.angle_tol);
    csv << s << ',' << set.size() << ',' << (rep.holds ? 1 : 0) << ','
        << fmt(rep.mismatch_angle) << ',' << rep.ker_dim << ',' << rep.ker_dim_p << '\n';
    std::cout << "set " << s << " (" << set.size() << " angles): holds="
              << (rep.holds ? "yes" : "no") << " mismatch_angle=" << fmt(rep.mismatch_angle)
              << " ker_dim=" << rep.ker_dim << " ker_dim_p=" << rep.ker_dim_p << '\n';
  }
  csv.flush();
  require(bool(csv), "audit-visibility: csv write failed");
  return 0;
}

// --------------------------------------------------------- audit-gradients

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<PointY> rand_sensors(Rng& rng, int n) {
  std::vector<PointY> v;
  for (int i = 0; i < n; ++i) v.push_back({rng.uniform(-1.0, 1.0), rng.uniform(0.0, kTwoPi)});
  return v;
}

std::vector<GroupElement> rand_se2_cloud(Rng& rng, int n) {
  std::vector<GroupElement> v;
  for (int i = 0; i < n; ++i)
    v.push_back(group::se2({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)},
                           rng.uniform(0.0, kTwoPi)));
  return v;
}

// Central differences at two steps over sampled parameter coordinates;
// disagreement between the steps marks a relu kink inside the stencil, where
// the quotient is no oracle and the coordinate is skipped. Most coordinates
// must survive or the probe itself failed. Analytic grads must already be
// accumulated in params.
double filtered_param_fd(const std::vector<Parameter*>& params,
                         const std::function<double()>& loss, Rng& pick, int per_param = 2) {
  double worst = 0.0;
  int kept = 0, skipped = 0;
  for (Parameter* p : params) {
    std::size_t n = p->value.size();
    for (int s = 0; s < per_param && s < static_cast<int>(n); ++s) {
      std::size_t i = static_cast<std::size_t>(pick.uniform_index(n));
      auto central = [&](double eps) {
        double keep = p->value[i];
        p->value[i] = keep + eps;
        double fp = loss();
        p->value[i] = keep - eps;
        double fm = loss();
        p->value[i] = keep;
        return (fp - fm) / (2.0 * eps);
      };
      double fd1 = central(1e-5);
      double fd2 = central(5e-6);
      if (std::abs(fd1 - fd2) > 3e-6 * std::max(1.0, std::abs(fd2))) {
        ++skipped;
        continue;
      }
      ++kept;
      double an = p->grad[i];
      worst = std::max(worst, std::abs(an - fd2) / std::max({1.0, std::abs(an), std::abs(fd2)}));
    }
  }
  if (kept < 4 * skipped) return 1.0;
  return worst;
}

struct GradFixture {
  std::string name;
  std::function<double()> run;
};

double kernel_net_fixture(bool lifting) {
  Rng rng(lifting ? 414 : 415);
  int M = lifting ? 6 : 7, J = lifting ? 4 : 5, k = 3, hidden = 4, basis = 3, c_in = 2;
  int c_out = lifting ? 2 : 3;
  int in_dim = lifting ? 1 : 3;
  std::vector<PointY> sensors;
  std::vector<GroupElement> in_cloud;
  layers::LayerConfig cfg;
  cfg.k = k;
  if (lifting) cfg.envelope_radius = 0.9;
  std::vector<GroupElement> outs = rand_se2_cloud(rng, J);
  layers::NeighborGeometry geo;
  if (lifting) {
    sensors = rand_sensors(rng, M);
    geo = layers::lifting_geometry(sensors, outs, cfg);
  } else {
    in_cloud = rand_se2_cloud(rng, M);
    geo = layers::group_geometry(in_cloud, outs, cfg);
  }
  tensor::BatchNormState bn("audit.bn", hidden);

  std::vector<GradInput> inputs = {
      {{M, c_in}, rand_vec(rng, static_cast<std::size_t>(M) * static_cast<std::size_t>(c_in))},
      {{M}, lifting ? rand_vec(rng, static_cast<std::size_t>(M), -2.0, 0.5)
                    : rand_vec(rng, static_cast<std::size_t>(M), 0.05, 0.4)},
      {{in_dim, hidden},
       rand_vec(rng, static_cast<std::size_t>(in_dim) * static_cast<std::size_t>(hidden))},
      {{hidden}, rand_vec(rng, static_cast<std::size_t>(hidden))},
      {{hidden}, rand_vec(rng, static_cast<std::size_t>(hidden), 0.5, 1.5)},
      {{hidden}, rand_vec(rng, static_cast<std::size_t>(hidden))},
      {{hidden, basis},
       rand_vec(rng, static_cast<std::size_t>(hidden) * static_cast<std::size_t>(basis))},
      {{basis}, rand_vec(rng, static_cast<std::size_t>(basis))},
      {{c_out, c_in, basis}, rand_vec(rng, static_cast<std::size_t>(c_out) *
                                               static_cast<std::size_t>(c_in) *
                                               static_cast<std::size_t>(basis))},
  };
  return tensor::grad_check(
      [&](Tape& tape, std::vector<Tensor>& xs) {
        layers::KernelNetBound nb;
        nb.in_dim = in_dim;
        nb.hidden = hidden;
        nb.basis = basis;
        nb.c_in = c_in;
        nb.c_out = c_out;
        nb.w1 = xs[2];
        nb.b1 = xs[3];
        nb.gamma = xs[4];
        nb.beta = xs[5];
        nb.w2 = xs[6];
        nb.b2 = xs[7];
        nb.mix = xs[8];
        nb.bn = &bn;
        layers::PointCloudFeature z;
        z.on_group = !lifting;
        z.sensor_points = sensors;
        z.group_points = in_cloud;
        z.batch = 1;
        z.feats = xs[0];
        z.quad_weights = lifting ? tensor::softplus(xs[1]) : xs[1];
        return tensor::sum(tensor::square(layers::conv_apply(geo, z, nb, true)));
      },
      inputs);
}

double residual_block_fixture() {
  Rng rng(421);
  layers::ResidualBlockParams blk("audit.blk", GroupId::SE2, 2, 3, 4, 3, rng);
  std::vector<GroupElement> cloud = rand_se2_cloud(rng, 7);
  layers::LayerConfig cfg;
  cfg.k = 3;
  std::vector<double> feats = rand_vec(rng, 14);
  std::vector<double> quad = rand_vec(rng, 7, 0.05, 0.4);

  auto loss = [&]() {
    Tape tape;
    layers::PointCloudFeature z;
    z.on_group = true;
    z.group_points = cloud;
    z.batch = 1;
    z.feats = tape.leaf({7, 2}, feats);
    z.quad_weights = tape.leaf({7}, quad);
    layers::PointCloudFeature o = layers::residual_block(z, layers::bind(tape, blk), cfg, true);
    return tensor::sum(tensor::square(o.feats)).val()[0];
  };
  std::vector<Parameter*> params;
  blk.trainable(params);
  train::zero_grads(params);
  {
    Tape tape;
    layers::PointCloudFeature z;
    z.on_group = true;
    z.group_points = cloud;
    z.batch = 1;
    z.feats = tape.leaf({7, 2}, feats);
    z.quad_weights = tape.leaf({7}, quad);
    layers::PointCloudFeature o = layers::residual_block(z, layers::bind(tape, blk), cfg, true);
    tape.backward(tensor::sum(tensor::square(o.feats)));
  }
  Rng pick(422);
  return filtered_param_fd(params, loss, pick);
}

double model_fixture() {
  layers::ModelConfig cfg;
  cfg.channels = 2;
  cfg.k = 3;
  cfg.basis = 2;
  cfg.hidden = 3;
  cfg.lift_points = 6;
  tomo::ParallelGeometry geo;
  for (int a = 0; a < 4; ++a) geo.angles.push_back(kTwoPi * a / 4);
  geo.offsets = {-1.0, 0.0, 1.0};
  std::vector<PointY> sensors = tomo::build_sensors(geo).points;
  layers::Model m = layers::build_model(cfg, sensors, 55);

  Rng rng(416);
  std::vector<std::vector<double>> ys = {rand_vec(rng, sensors.size()),
                                         rand_vec(rng, sensors.size())};
  auto loss = [&]() {
    Tape tape;
    Rng cr(99);
    Tensor out = layers::model_forward(tape, m, ys, cr, true);
    return tensor::sum(tensor::square(out)).val()[0];
  };
  std::vector<Parameter*> params = m.trainable();
  train::zero_grads(params);
  {
    Tape tape;
    Rng cr(99);
    Tensor out = layers::model_forward(tape, m, ys, cr, true);
    tape.backward(tensor::sum(tensor::square(out)));
  }
  Rng pick(417);
  return filtered_param_fd(params, loss, pick);
}

// Hand-coded gradient of sum(x^2) checked by the same comparison the real
// fixtures use; the sign flip is the audit's negative control.
double negative_control_fixture(bool flip) {
  std::vector<double> x = {0.7, -0.3, 1.2, 0.4};
  auto loss = [&]() {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double an = (flip ? -2.0 : 2.0) * x[i];
    double keep = x[i];
    x[i] = keep + 1e-5;
    double fp = loss();
    x[i] = keep - 1e-5;
    double fm = loss();
    x[i] = keep;
    double fd = (fp - fm) / 2e-5;
    worst = std::max(worst, std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)}));
  }
  return worst;
}

std::vector<GradFixture> gradient_fixtures() {
  using tensor::grad_check;
  std::vector<GradFixture> fx;
  auto add = [&](const std::string& name, std::function<double()> f) {
    fx.push_back({name, std::move(f)});
  };

  add("add", [] {
    Rng rng(501);
    std::vector<GradInput> ins = {{{2, 3}, rand_vec(rng, 6)}, {{2, 3}, rand_vec(rng, 6)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::add(xs[0], xs[1])));
        },
        ins);
  });
  add("sub", [] {
    Rng rng(502);
    std::vector<GradInput> ins = {{{2, 3}, rand_vec(rng, 6)}, {{2, 3}, rand_vec(rng, 6)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::sub(xs[0], xs[1])));
        },
        ins);
  });
  add("mul", [] {
    Rng rng(503);
    std::vector<GradInput> ins = {{{2, 3}, rand_vec(rng, 6)}, {{2, 3}, rand_vec(rng, 6)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::mul(xs[0], xs[1])));
        },
        ins);
  });
  add("scale", [] {
    Rng rng(504);
    std::vector<GradInput> ins = {{{5}, rand_vec(rng, 5)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::scale(xs[0], -1.7)));
        },
        ins);
  });
  add("relu", [] {
    // values held away from the kink so central differences are an oracle
    std::vector<GradInput> ins = {{{6}, {-1.1, -0.7, 0.4, 0.9, -0.3, 1.3}}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::relu(xs[0])));
        },
        ins);
  });
  add("swish", [] {
    Rng rng(505);
    std::vector<GradInput> ins = {{{6}, rand_vec(rng, 6, -2.0, 2.0)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::swish(xs[0])));
        },
        ins);
  });
  add("exp", [] {
    Rng rng(506);
    std::vector<GradInput> ins = {{{5}, rand_vec(rng, 5)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) { return tensor::sum(tensor::exp(xs[0])); }, ins);
  });
  add("square", [] {
    Rng rng(507);
    std::vector<GradInput> ins = {{{5}, rand_vec(rng, 5)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) { return tensor::sum(tensor::square(xs[0])); }, ins);
  });
  add("softplus", [] {
    Rng rng(508);
    std::vector<GradInput> ins = {{{6}, rand_vec(rng, 6, -3.0, 3.0)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::softplus(xs[0])));
        },
        ins);
  });
  add("matmul", [] {
    Rng rng(509);
    std::vector<GradInput> ins = {{{3, 4}, rand_vec(rng, 12)}, {{4, 2}, rand_vec(rng, 8)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::matmul(xs[0], xs[1])));
        },
        ins);
  });
  add("add_rowvec", [] {
    Rng rng(510);
    std::vector<GradInput> ins = {{{3, 4}, rand_vec(rng, 12)}, {{4}, rand_vec(rng, 4)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::add_rowvec(xs[0], xs[1])));
        },
        ins);
  });
  add("mul_rows", [] {
    Rng rng(511);
    std::vector<GradInput> ins = {{{3, 4}, rand_vec(rng, 12)}, {{3}, rand_vec(rng, 3)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::mul_rows(xs[0], xs[1])));
        },
        ins);
  });
  add("reshape", [] {
    Rng rng(512);
    std::vector<GradInput> ins = {{{2, 6}, rand_vec(rng, 12)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::reshape(xs[0], {4, 3})));
        },
        ins);
  });
  add("repeat_rows", [] {
    Rng rng(513);
    std::vector<GradInput> ins = {{{2, 3}, rand_vec(rng, 6)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::repeat_rows(xs[0], 3)));
        },
        ins);
  });
  add("gather", [] {
    Rng rng(514);
    std::vector<GradInput> ins = {{{4, 2}, rand_vec(rng, 8)}};
    std::vector<int> idx = {0, 2, 2, 1, 3, 0};
    return grad_check(
        [idx](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::gather(xs[0], idx, 3, 2)));
        },
        ins);
  });
  add("scatter_sum", [] {
    Rng rng(515);
    std::vector<GradInput> ins = {{{2, 2, 2}, rand_vec(rng, 8)}};
    std::vector<int> idx = {0, 2, 2, 1};
    return grad_check(
        [idx](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::scatter_sum(xs[0], idx, 3)));
        },
        ins);
  });
  add("pointconv", [] {
    Rng rng(516);
    int J = 3, T = 4, B = 2, C = 3, Cp = 2;
    std::vector<GradInput> ins = {
        {{Cp, C, B}, rand_vec(rng, static_cast<std::size_t>(Cp) * C * B)},
        {{J, T, B}, rand_vec(rng, static_cast<std::size_t>(J) * T * B)},
        {{J, T, C}, rand_vec(rng, static_cast<std::size_t>(J) * T * C)},
        {{J, T}, rand_vec(rng, static_cast<std::size_t>(J) * T)}};
    return grad_check(
        [](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::pointconv(xs[0], xs[1], xs[2], xs[3])));
        },
        ins);
  });
  add("batchnorm", [] {
    Rng rng(517);
    int N = 5, C = 2;
    double worst = 0.0;
    for (bool train_mode : {true, false}) {
      tensor::BatchNormState st("audit.op.bn", C);
      st.mean.value = {0.2, -0.4};
      st.var.value = {1.5, 0.7};
      std::vector<GradInput> ins = {{{N, C}, rand_vec(rng, static_cast<std::size_t>(N) * C)},
                                    {{C}, rand_vec(rng, static_cast<std::size_t>(C), 0.5, 1.5)},
                                    {{C}, rand_vec(rng, static_cast<std::size_t>(C))}};
      worst = std::max(worst, grad_check(
                                  [&st, train_mode](Tape& t, std::vector<Tensor>& xs) {
                                    return tensor::sum(tensor::square(
                                        tensor::batchnorm(xs[0], xs[1], xs[2], st, train_mode)));
                                  },
                                  ins));
    }
    return worst;
  });
  add("segment_mean_weighted", [] {
    Rng rng(518);
    std::vector<int> seg = {0, 1, 0, 2, 1, 2, 0};
    std::vector<GradInput> ins = {{{7, 3}, rand_vec(rng, 21)},
                                  {{7}, rand_vec(rng, 7, 0.5, 2.0)}};
    return grad_check(
        [&seg](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::segment_mean_weighted(xs[0], xs[1], seg, 3)));
        },
        ins);
  });
  add("pool_mean_sorted", [] {
    Rng rng(519);
    std::vector<int> seg = {0, 1, 0, 2, 1, 2, 0};
    std::vector<GradInput> ins = {{{7, 3}, rand_vec(rng, 21)},
                                  {{7}, rand_vec(rng, 7, 0.5, 2.0)}};
    return grad_check(
        [&seg](Tape& t, std::vector<Tensor>& xs) {
          return tensor::sum(tensor::square(tensor::pool_mean_sorted(xs[0], xs[1], seg, 3)));
        },
        ins);
  });
  add("softmax_cross_entropy", [] {
    Rng rng(520);
    std::vector<GradInput> ins = {{{4, 5}, rand_vec(rng, 20)}};
    std::vector<int> labels = {1, 0, 4, 2};
    return grad_check(
        [&labels](Tape& t, std::vector<Tensor>& xs) {
          return tensor::softmax_cross_entropy(xs[0], labels);
        },
        ins);
  });
  add("mse", [] {
    Rng rng(521);
    std::vector<GradInput> ins = {{{3, 2}, rand_vec(rng, 6)}, {{3, 2}, rand_vec(rng, 6)}};
    return grad_check([](Tape& t, std::vector<Tensor>& xs) { return tensor::mse(xs[0], xs[1]); },
                      ins);
  });
  add("sum", [] {
    Rng rng(522);
    std::vector<GradInput> ins = {{{2, 3}, rand_vec(rng, 6)}};
    return grad_check([](Tape& t, std::vector<Tensor>& xs) { return tensor::sum(xs[0]); }, ins);
  });
  add("lifting_conv", [] { return kernel_net_fixture(true); });
  add("group_conv", [] { return kernel_net_fixture(false); });
  add("residual_block", [] { return residual_block_fixture(); });
  add("model", [] { return model_fixture(); });
  return fx;
}

int run_audit_gradients(const std::string& out_dir, bool inject_sign_flip) {
  std::vector<GradFixture> fx = gradient_fixtures();
  if (inject_sign_flip)
    fx.push_back({"negative_control", [] { return negative_control_fixture(true); }});

  const double tol = 1e-5;
  bool all_pass = true;
  std::ostringstream csv;
  csv << "op,max_rel_err,pass\n";
  for (const GradFixture& f : fx) {
    double err = f.run();
    bool pass = err < tol;
    all_pass = all_pass && pass;
    std::printf("%-24s %12.3e  %s\n", f.name.c_str(), err, pass ? "PASS" : "FAIL");
    csv << f.name << ',' << fmt(err) << ',' << (pass ? 1 : 0) << '\n';
  }
  if (!out_dir.empty()) {
    Out out(out_dir);
    write_text(out / "audit_gradients.csv", csv.str());
  }
  std::cout << (all_pass ? "gradient audit: PASS" : "gradient audit: FAIL") << '\n';
  return all_pass ? 0 : 2;
}

int dispatch(const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    if (msg.find("non-finite") != std::string::npos) {
      std::cerr << "numerical failure: " << msg << '\n';
      return 2;
    }
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  apply_threads_env();
  CLI::App app{"Equivariant sinogram networks: data, training, and audits"};
  app.require_subcommand(1);

  std::string config, out, preset, train_data, test_data, resume;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  bool inject = false;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate ring datasets (train/test + summary)");
  CLI::Option* gen_cfg = gen->add_option("--config", config, "JSON config");
  gen->add_option("--seed", seed, "Master seed override");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--preset", preset, "desk or table1")->excludes(gen_cfg);

  CLI::App* trn = app.add_subcommand("train", "Train a model on a ring dataset");
  CLI::Option* trn_cfg = trn->add_option("--config", config, "JSON training config");
  trn->add_option("--seed", seed, "Master seed override");
  trn->add_option("--out", out, "Output directory")->required();
  trn->add_option("--preset", preset, "desk or full")->excludes(trn_cfg);
  trn->add_option("--train-data", train_data, "Training dataset path override");
  trn->add_option("--test-data", test_data, "Test dataset path override");
  trn->add_option("--resume", resume, "Checkpoint to resume from");
  trn->add_option("--checkpoint-every", checkpoint_every, "Checkpoint every N epochs (0: end only)");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--config", config, "JSON eval config")->required();
  ev->add_option("--seed", seed, "Collocation seed override");
  ev->add_option("--out", out, "Output directory")->required();

  CLI::App* aeq = app.add_subcommand("audit-equivariance",
                                     "Model invariance residuals across sensor geometries");
  aeq->add_option("--config", config, "JSON audit config");
  aeq->add_option("--seed", seed, "Master seed override");
  aeq->add_option("--out", out, "Output directory")->required();

  CLI::App* avis = app.add_subcommand("audit-visibility",
                                      "Nullspace comparison of discretized operators");
  avis->add_option("--config", config, "JSON audit config");
  avis->add_option("--seed", seed, "Master seed override");
  avis->add_option("--out", out, "Output directory")->required();

  CLI::App* agr = app.add_subcommand("audit-gradients", "Finite-difference audit of every op");
  agr->add_option("--out", out, "Optional output directory for the CSV report");
  agr->add_flag("--inject-sign-flip", inject,
                "Negative control: adds a deliberately wrong gradient that must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  bool has_seed = false;
  for (CLI::App* sub : {gen, trn, ev, aeq, avis})
    if (sub->parsed() && sub->count("--seed") > 0) has_seed = true;

  if (gen->parsed())
    return dispatch([&] { return run_gen_data(config, preset, out, seed, has_seed); });
  if (trn->parsed())
    return dispatch([&] {
      return run_train(config, preset, out, seed, has_seed, train_data, test_data, resume,
                       checkpoint_every);
    });
  if (ev->parsed()) return dispatch([&] { return run_eval(config, out, seed, has_seed); });
  if (aeq->parsed())
    return dispatch([&] { return run_audit_equivariance(config, out, seed, has_seed); });
  if (avis->parsed())
    return dispatch([&] { return run_audit_visibility(config, out, seed, has_seed); });
  if (agr->parsed()) return dispatch([&] { return run_audit_gradients(out, inject); });
  return 1;
}
