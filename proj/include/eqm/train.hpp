#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eqm/data.hpp"
#include "eqm/layers.hpp"
#include "eqm/rng.hpp"
#include "eqm/tensor.hpp"

namespace eqm::train {

using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;

// Adam with decoupled weight decay; coupled_l2 folds the decay into the
// gradient instead (classic L2). Moments are allocated on the first step and
// stay keyed by position, so the parameter list must be stable across steps.
struct OptimState {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool coupled_l2 = false;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;
};

// One update over the list: m,v <- ema(grad, grad^2), bias corrected, then
// theta <- theta - lr*mhat/(sqrt(vhat)+eps) - lr*wd*theta. Gradients are read
// from Parameter::grad and left untouched; callers zero them between steps.
void adam_step(const std::vector<Parameter*>& params, OptimState& st);

void zero_grads(const std::vector<Parameter*>& params);

// "step": base_lr cut by 10x after 60% and again after 85% of total epochs.
// "constant": base_lr throughout. epoch is 0-based.
double lr_schedule(int epoch, int epochs, double base_lr, const std::string& kind);

struct TrainConfig {
  int epochs = 2000;
  int batch = 8;
  std::uint64_t seed = 0;
  double base_lr = 3e-3;
  double weight_decay = 1e-4;
  bool coupled_l2 = false;
  std::string schedule = "step";  // "step" or "constant"
  std::string loss = "mse";       // "mse" or "cross_entropy"
  std::string train_path;         // dataset files; echoed into run configs
  std::string test_path;
  layers::ModelConfig arch;
};

// Defaults above are the desk-scale regression recipe. "full" is the same
// recipe at full size: 3000 epochs, 2700 lifting points, 22 channels.
TrainConfig preset(const std::string& name);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Supervised measurement vectors. Regression fills targets (row-major
// [n, dim]); classification fills labels.
struct Examples {
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<double>> targets;
  std::vector<int> labels;
};

// targets = {d_min, d_max} per sample.
Examples regression_examples(const data::Dataset& ds);

// What the loop needs from a trainable map: the parameter lists and a forward
// pass producing [batch, out] predictions on the tape. state is trainable
// plus any running statistics; it is what checkpoints carry.
struct Trainable {
  std::vector<Parameter*> trainable;
  std::vector<Parameter*> state;
  std::function<Tensor(Tape&, const std::vector<std::vector<double>>&, Rng&, bool)> forward;
};
Trainable as_trainable(layers::Model& m);
Trainable as_trainable(layers::BaselineMlp& m);

struct MetricRow {
  std::int64_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};
using MetricsLog = std::vector<MetricRow>;

// Header "epoch,split,metric,value", one row per entry, %.17g values.
void write_metrics_csv(const std::string& path, const MetricsLog& log);

struct EvalMetrics {
  double mse = 0.0;      // both targets jointly
  double mae_min = 0.0;  // first target column
  double mae_max = 0.0;  // second target column
  double accuracy = 0.0; // classification only
};

// Eval-mode forward in batches; the collocation stream restarts from
// colloc_seed for every batch, so per-sample predictions and hence the
// metrics are exactly invariant to dataset order and batch grouping
// (per-sample terms are summed in sorted order).
EvalMetrics evaluate(const Trainable& map, const Examples& ex, const std::string& loss_kind,
                     std::uint64_t colloc_seed, int batch);
EvalMetrics evaluate(layers::Model& m, const Examples& ex, std::uint64_t colloc_seed, int batch);

// Epoch position, optimizer state, rng streams, and the metrics log; the
// complete resumable state of a run apart from the parameters themselves.
struct Trainer {
  Trainable map;
  TrainConfig cfg;
  OptimState opt;
  std::int64_t epoch = 0;
  std::int64_t step_in_epoch = 0;
  std::int64_t global_step = 0;
  double epoch_loss_sum = 0.0;
  std::vector<std::uint32_t> perm;  // shuffled sample order, current epoch
  Rng data_rng, colloc_rng;
  MetricsLog log;
};

Trainer make_trainer(Trainable map, const TrainConfig& cfg);

// One optimizer step on the next batch (shuffling at epoch starts); returns
// the batch loss. When the step completes an epoch it appends that epoch's
// rows: train/loss, and for a nonempty test set the evaluate() metrics.
// Throws on non-finite loss with the current lr and gradient norm in the
// message.
double train_step(Trainer& tr, const Examples& train_ex, const Examples& test_ex);

// Runs n more epochs (clamped to cfg.epochs).
void train_epochs(Trainer& tr, const Examples& train_ex, const Examples& test_ex,
                  std::int64_t n);

// Full run from a fresh trainer; returns its metrics log.
MetricsLog fit(Trainable map, const Examples& train_ex, const Examples& test_ex,
               const TrainConfig& cfg);

// Bit-exact round trip of parameters (including running stats), optimizer
// moments, rng streams, counters, and the metrics log. Loading requires a
// trainer whose parameter names and sizes match; the format is versioned.
void checkpoint_save(const std::string& path, const Trainer& tr);
void checkpoint_load(const std::string& path, Trainer& tr);

}  // namespace eqm::train
