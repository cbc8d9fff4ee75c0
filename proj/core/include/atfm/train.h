// Copyright 2026 The ATFM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Initialization, loss, Adam, the epoch loop and checkpoints.

#ifndef ATFM_TRAIN_H_
#define ATFM_TRAIN_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atfm/container.h"
#include "atfm/data.h"
#include "atfm/layers.h"
#include "atfm/models.h"
#include "atfm/param_store.h"
#include "atfm/scaler.h"

namespace atfm::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int64_t max_steps = 0;  // 0: no step limit
  int patience = 10;
  bool early_stopping = true;
  uint64_t seed = 0;
  std::optional<double> clip_norm;
  double validation_fraction = 0.1;
  int threads = 1;
  // When positive, Fit zeroes the output layer of every fusion gate (r = 0.5
  // exactly) and keeps all gate parameters fixed for this many steps, so both
  // temporal representations become informative before the gate commits to
  // either. Meant for freshly initialized parameters.
  int64_t gate_warmup_steps = 0;

  // Throws ConfigError on any violated bound.
  void Validate() const;
};

// Weights ~ U(-b, b), b = sqrt(6 / (fan_in + fan_out)); biases and peepholes
// zero. Parameters are visited in registration order from one seeded stream.
void XavierInit(ParamStore& params, uint64_t seed);

// Mean of squared differences over all elements.
double EuclideanLoss(const Tensor& pred, const Tensor& target);
// Mean over all elements of all steps (steps share a shape).
Var EuclideanLoss(const GraphContext& ctx, std::span<const Var> preds,
                  std::span<const Tensor> targets);

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
                     double epsilon = 1e-8);

  int64_t step() const { return step_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double epsilon() const { return epsilon_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  friend void AdamStep(ParamStore&, const Gradients&, AdamState&, double);

  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int64_t step_ = 0;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double epsilon_ = 1e-8;
};

// Bias-corrected Adam update. Throws StateError when `grads` or `state` do not
// cover every parameter with matching shapes.
void AdamStep(ParamStore& params, const Gradients& grads, AdamState& state, double lr);

// Rescales `grads` so their global norm is at most `max_norm`; returns the
// norm before clipping.
double ClipGlobalNorm(Gradients& grads, double max_norm);

// ---------------------------------------------------------------------------
// Epoch loop.

// A differentiable objective over indexed examples.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual int64_t num_train() const = 0;
  virtual int64_t num_validation() const = 0;
  // Adds `weight` times the gradient of example i's loss into `sink` and
  // returns the loss. Must be safe to call concurrently with distinct sinks.
  virtual double TrainExample(int64_t i, Gradients& sink, double weight) const = 0;
  // Sum of squared errors of validation example i; `count` receives the
  // number of elements.
  virtual double ValidationSquaredError(int64_t i, int64_t* count) const = 0;
};

// Mean Euclidean loss of a forecaster on pre-assembled samples.
class ForecastObjective : public Objective {
 public:
  struct Example {
    SpnInput input;
    std::vector<Tensor> targets;
  };

  ForecastObjective(const Forecaster& model, const ParamStore& params,
                    std::vector<Example> train, std::vector<Example> validation);

  // Assembles scaled examples from a series.
  static std::vector<Example> Assemble(const data::FlowSeries& series,
                                       std::span<const data::Sample> samples,
                                       const Scaler& flow_scaler);

  int64_t num_train() const override { return static_cast<int64_t>(train_.size()); }
  int64_t num_validation() const override { return static_cast<int64_t>(validation_.size()); }
  double TrainExample(int64_t i, Gradients& sink, double weight) const override;
  double ValidationSquaredError(int64_t i, int64_t* count) const override;

 private:
  const Forecaster& model_;
  const ParamStore& params_;
  std::vector<Example> train_;
  std::vector<Example> validation_;
};

struct HistoryRow {
  int64_t step = 0;
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double rmse = 0.0;
};

struct FitResult {
  std::vector<HistoryRow> history;
  int epochs_run = 0;
  int64_t steps = 0;
  int best_epoch = 0;  // 0 when no validation ran
  double best_validation_rmse = 0.0;
  bool stopped_early = false;
};

std::string HistoryCsv(std::span<const HistoryRow> rows);

// Shuffled minibatch Adam with per-epoch validation. With early stopping the
// parameters of the best validation epoch are restored at the end. Throws
// ArgumentError on an empty training set, ConfigError when early stopping is
// enabled without validation examples and NumericError on a non-finite loss.
FitResult Fit(ParamStore& params, const Objective& objective, const TrainConfig& config,
              const std::function<void(const HistoryRow&)>& on_row = {});

// First (1 - fraction) of `samples` in order, then the rest.
std::pair<std::vector<data::Sample>, std::vector<data::Sample>> SplitValidation(
    std::vector<data::Sample> samples, double fraction);

// Chronological hold-out: samples whose targets all precede `train_end`
// train, samples whose targets all fall at or after it are tested, and
// samples straddling the boundary are dropped.
struct HoldoutSplit {
  int64_t train_end = 0;
  std::vector<data::Sample> train;
  std::vector<data::Sample> test;
};

// Holds out the last `test_days` days. Throws ArgumentError unless
// 0 < test_days < series days.
HoldoutSplit SplitHoldout(const data::FlowSeries& series, std::span<const data::Sample> samples,
                          int64_t test_days);
HoldoutSplit SplitAt(std::span<const data::Sample> samples, int64_t train_end);

// ---------------------------------------------------------------------------
// Checkpoints.

struct CheckpointMeta {
  SpnConfig model;
  double flow_min = 0.0;
  double flow_max = 1.0;
  uint64_t vocabulary_hash = 0;
  int64_t interval_seconds = 0;
  int64_t train_end = 0;  // interval index where the held-out split starts
  int epoch = 0;
  int64_t step = 0;

  Scaler flow_scaler() const { return Scaler(flow_min, flow_max, -1.0, 1.0); }
  std::string ToJson() const;
  // Throws DataError on malformed input.
  static CheckpointMeta FromJson(const std::string& text);
};

// Writes every parameter as a container entry plus a JSON sidecar. Values are
// stored as 32-bit floats.
void SaveCheckpoint(const std::filesystem::path& path, const ParamStore& params,
                    const CheckpointMeta& meta);
CheckpointMeta LoadCheckpointMeta(const std::filesystem::path& path);
// Copies stored values into `params`. Throws ContractError when names or
// shapes disagree.
void LoadCheckpointParams(const std::filesystem::path& path, ParamStore& params);

// Lines describing every disagreement between a checkpoint and a series;
// empty when they are compatible.
std::vector<std::string> CompatibilityDiff(const CheckpointMeta& meta,
                                           const data::FlowSeries& series);

}  // namespace atfm::train

#endif  // ATFM_TRAIN_H_
