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

#include <cmath>
#include <random>

#include <doctest.h>

#include "atfm/error.h"
#include "atfm/ops.h"
#include "atfm/train.h"
#include "oracles.h"
#include "test_util.h"

namespace atfm::train {
namespace {

TEST_CASE("xavier bounds, zero biases and determinism") {
  ParamStore store;
  ParamId w = store.Add("w", Shape{3, 3}, ParamKind::kWeight, 3, 3);
  ParamId b = store.Add("b", Shape{3}, ParamKind::kBias);
  ParamId p = store.Add("p", Shape{3}, ParamKind::kPeephole);
  store.mutable_value(b).Fill(7.0);
  store.mutable_value(p).Fill(7.0);
  XavierInit(store, 1);
  CHECK(store.value(w).MaxAbs() <= 1.0);
  CHECK(store.value(w).MaxAbs() > 0.0);
  CHECK(store.value(b).MaxAbs() == 0.0);
  CHECK(store.value(p).MaxAbs() == 0.0);
  const Tensor first = store.value(w);
  XavierInit(store, 1);
  CHECK(oracle::MaxAbsDiff(first, store.value(w)) == 0.0);
  XavierInit(store, 2);
  CHECK(oracle::MaxAbsDiff(first, store.value(w)) > 0.0);
}

TEST_CASE("xavier sample variance matches bound^2 / 3") {
  ParamStore store;
  ParamId w = store.Add("w", Shape{1000, 100}, ParamKind::kWeight, 20, 30);
  XavierInit(store, 3);
  const double bound = std::sqrt(6.0 / 50.0);
  double mean = 0.0, sq = 0.0;
  for (double v : store.value(w).values()) {
    mean += v;
    sq += v * v;
  }
  const double n = 1e5;
  mean /= n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(var - bound * bound / 3.0) <= 0.05 * bound * bound / 3.0);
  CHECK(store.value(w).MaxAbs() <= bound);
}

TEST_CASE("euclidean loss examples and gradient") {
  const Tensor zero(Shape{2}, 0.0), ones(Shape{2}, 1.0);
  CHECK(EuclideanLoss(ones, ones) == 0.0);
  CHECK(EuclideanLoss(zero, ones) == 1.0);
  CHECK_THROWS_AS(EuclideanLoss(zero, Tensor(Shape{3})), ShapeError);

  std::mt19937_64 rng(4);
  const Tensor pred = oracle::RandomTensor(Shape{2, 3, 3}, rng);
  const Tensor target = oracle::RandomTensor(Shape{2, 3, 3}, rng);
  Tape tape;
  ParamStore none;
  GraphContext ctx{tape, none};
  Var p = tape.Variable(pred);
  const Var preds[] = {p};
  const Tensor targets[] = {target};
  Var loss = EuclideanLoss(ctx, preds, targets);
  CHECK(loss.value()[0] == doctest::Approx(EuclideanLoss(pred, target)).epsilon(1e-14));
  tape.Backward(loss);
  const Tensor numeric = oracle::NumericGradient(
      [&](const Tensor& x) { return EuclideanLoss(x, target); }, pred, 1e-6);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double closed = 2.0 * (pred[i] - target[i]) / static_cast<double>(pred.size());
    CHECK(tape.grad(p)[i] == doctest::Approx(closed).epsilon(1e-12));
    CHECK(tape.grad(p)[i] == doctest::Approx(numeric[i]).epsilon(1e-7));
  }
}

TEST_CASE("adam first step and zero gradient") {
  ParamStore store;
  ParamId w = store.Add("w", Shape{3}, ParamKind::kWeight, 1, 1);
  store.mutable_value(w) = Tensor(Shape{3}, std::vector<double>{1.0, 1.0, 1.0});
  AdamState state(store);
  Gradients g = store.MakeGradients();
  g[w] = Tensor(Shape{3}, std::vector<double>{0.5, -2.0, 0.0});
  AdamStep(store, g, state, 0.01);
  CHECK(store.value(w)[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(store.value(w)[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-9));
  CHECK(store.value(w)[2] == 1.0);
  CHECK(state.step() == 1);

  AdamState fresh(store);
  const Tensor before = store.value(w);
  AdamStep(store, store.MakeGradients(), fresh, 0.01);
  CHECK(oracle::MaxAbsDiff(before, store.value(w)) == 0.0);

  CHECK_THROWS_AS(AdamStep(store, Gradients(), fresh, 0.01), StateError);
  AdamState empty;
  CHECK_THROWS_AS(AdamStep(store, store.MakeGradients(), empty, 0.01), StateError);
}

TEST_CASE("adam descends a 2-d quadratic") {
  // f(x, y) = (x - 1)^2 + 10 (y + 2)^2
  ParamStore store;
  ParamId w = store.Add("w", Shape{2}, ParamKind::kWeight, 1, 1);
  store.mutable_value(w) = Tensor(Shape{2}, std::vector<double>{1.05, -2.05});
  AdamState state(store);
  Gradients g = store.MakeGradients();
  for (int step = 0; step < 100; ++step) {
    const Tensor& v = store.value(w);
    g[w][0] = 2.0 * (v[0] - 1.0);
    g[w][1] = 20.0 * (v[1] + 2.0);
    AdamStep(store, g, state, 1e-3);
  }
  CHECK(std::abs(store.value(w)[0] - 1.0) < 1e-3);
  CHECK(std::abs(store.value(w)[1] + 2.0) < 1e-3);
}

TEST_CASE("gradient clipping") {
  ParamStore store;
  ParamId w = store.Add("w", Shape{2}, ParamKind::kWeight, 1, 1);
  Gradients g = store.MakeGradients();
  g[w] = Tensor(Shape{2}, std::vector<double>{3.0, 4.0});
  CHECK(ClipGlobalNorm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.GlobalNorm() == doctest::Approx(1.0));
  CHECK(ClipGlobalNorm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g[w][0] == doctest::Approx(0.6));
}

// Least squares y = a x + b on fixed points, with a validation error that can
// be pinned to a constant.
class LineObjective : public Objective {
 public:
  LineObjective(ParamStore& store, int n_train, int n_val, bool frozen_validation)
      : store_(store), n_train_(n_train), n_val_(n_val), frozen_(frozen_validation) {
    a_ = store.Add("a", Shape{1}, ParamKind::kWeight, 1, 1);
    b_ = store.Add("b", Shape{1}, ParamKind::kBias);
  }
  int64_t num_train() const override { return n_train_; }
  int64_t num_validation() const override { return n_val_; }
  double TrainExample(int64_t i, Gradients& sink, double weight) const override {
    const double x = static_cast<double>(i) / n_train_;
    const double err = Eval(x) - (3.0 * x - 1.0);
    sink[a_][0] += weight * 2.0 * err * x;
    sink[b_][0] += weight * 2.0 * err;
    return err * err;
  }
  double ValidationSquaredError(int64_t i, int64_t* count) const override {
    *count = 1;
    if (frozen_) return 1.0;
    const double x = (static_cast<double>(i) + 0.5) / n_val_;
    const double err = Eval(x) - (3.0 * x - 1.0);
    return err * err;
  }

 private:
  double Eval(double x) const { return store_.value(a_)[0] * x + store_.value(b_)[0]; }
  ParamStore& store_;
  int n_train_, n_val_;
  bool frozen_;
  ParamId a_, b_;
};

TEST_CASE("fit stops after patience epochs without improvement") {
  ParamStore store;
  LineObjective obj(store, 10, 3, /*frozen_validation=*/true);
  TrainConfig cfg;
  cfg.patience = 1;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  const FitResult r = Fit(store, obj, cfg);
  CHECK(r.epochs_run == 2);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 1);
  CHECK(r.steps == 6);
  CHECK(r.history.size() == 8);
  CHECK(r.history[3].split == "val");
}

TEST_CASE("fit learns, restores the best epoch and is deterministic") {
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 3;
  cfg.max_epochs = 40;
  cfg.patience = 5;
  cfg.seed = 9;
  ParamStore s1, s2;
  LineObjective o1(s1, 20, 5, false), o2(s2, 20, 5, false);
  const FitResult r1 = Fit(s1, o1, cfg);
  const FitResult r2 = Fit(s2, o2, cfg);
  CHECK(HistoryCsv(r1.history) == HistoryCsv(r2.history));
  CHECK(s1.value(ParamId{0})[0] == s2.value(ParamId{0})[0]);
  CHECK(r1.best_validation_rmse < 0.2);
  CHECK(HistoryCsv(r1.history).rfind("step,epoch,split,loss,rmse\n1,1,train,", 0) == 0);

  cfg.threads = 3;
  ParamStore s3;
  LineObjective o3(s3, 20, 5, false);
  const FitResult r3 = Fit(s3, o3, cfg);
  CHECK(HistoryCsv(r3.history) == HistoryCsv(r1.history));
}

TEST_CASE("fit contracts") {
  ParamStore store;
  LineObjective empty(store, 0, 2, false);
  CHECK_THROWS_AS(Fit(store, empty, TrainConfig{}), ArgumentError);
  ParamStore s2;
  LineObjective no_val(s2, 5, 0, false);
  CHECK_THROWS_AS(Fit(s2, no_val, TrainConfig{}), ConfigError);
  TrainConfig cfg;
  cfg.early_stopping = false;
  cfg.max_epochs = 2;
  CHECK(Fit(s2, no_val, cfg).epochs_run == 2);
  cfg.max_steps = 3;
  cfg.batch_size = 1;
  CHECK(Fit(s2, no_val, cfg).steps == 3);
  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.Validate(), ConfigError);
  bad = TrainConfig{};
  bad.patience = 0;
  CHECK_THROWS_AS(bad.Validate(), ConfigError);
}

TEST_CASE("validation split keeps order") {
  std::vector<data::Sample> s(10);
  for (int i = 0; i < 10; ++i) s[i].targets = {i};
  auto [train, val] = SplitValidation(s, 0.2);
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  CHECK(val[0].targets[0] == 8);
}

TEST_CASE("holdout split by target time") {
  std::vector<data::Sample> s(4);
  s[0].targets = {5, 6};
  s[1].targets = {9, 10};  // straddles
  s[2].targets = {10, 11};
  s[3].targets = {3};
  const HoldoutSplit h = SplitAt(s, 10);
  CHECK(h.train.size() == 2);
  CHECK(h.test.size() == 1);
  CHECK(h.test[0].targets[0] == 10);

  data::SynthConfig sc;
  sc.rows = 2;
  sc.cols = 2;
  sc.days = 5;
  sc.intervals_per_day = 4;
  const data::FlowSeries series = data::SynthGenerate(sc, 1);
  const HoldoutSplit tail = SplitHoldout(series, s, 2);
  CHECK(tail.train_end == 12);
  CHECK_THROWS_AS(SplitHoldout(series, s, 5), ArgumentError);
  CHECK_THROWS_AS(SplitHoldout(series, s, 0), ArgumentError);
}

TEST_CASE("forecaster training history is bitwise reproducible") {
  data::SynthConfig sc;
  sc.rows = 3;
  sc.cols = 3;
  sc.days = 3;
  sc.intervals_per_day = 12;
  const data::FlowSeries series = data::SynthGenerate(sc, 2);
  const auto samples = data::EnumerateSamples(series, 4, 2, 1).samples;
  REQUIRE(samples.size() >= 8);
  const Scaler scaler = data::FitFlowScaler(series, series.size());
  const auto examples = ForecastObjective::Assemble(series, samples, scaler);
  SpnConfig c;
  c.height = 3;
  c.width = 3;
  c.external_dim = series.external_dim();
  c.residual_units = 1;
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 2;
  cfg.early_stopping = false;
  std::string first;
  std::vector<std::vector<double>> ballast;
  for (int run = 0; run < 3; ++run) {
    // Shift the heap so buffers land at different addresses.
    ballast.emplace_back(7 + 13 * run, 1.0);
    ParamStore store;
    auto model = MakeForecaster(store, c);
    XavierInit(store, 5);
    ForecastObjective obj(*model, store, examples, {});
    const std::string csv = HistoryCsv(Fit(store, obj, cfg).history);
    if (run == 0) first = csv;
    CHECK(csv == first);
  }
}

TEST_CASE("fusion gate names") {
  CHECK(IsFusionGateParam("tvf/fc1/w"));
  CHECK(IsFusionGateParam("long/step3/tvf/fc2/b"));
  CHECK_FALSE(IsFusionGateParam("nfe/ext/fc1/w"));
  CHECK_FALSE(IsFusionGateParam("head/k"));
  CHECK(IsFusionGateOutputParam("tvf/fc2/w"));
  CHECK(IsFusionGateOutputParam("long/step1/tvf/fc2/b"));
  CHECK_FALSE(IsFusionGateOutputParam("tvf/fc1/w"));
  CHECK_FALSE(IsFusionGateOutputParam("nfe/ext/fc2/w"));
}

TEST_CASE("gate warmup holds r at one half, then releases the gate") {
  data::SynthConfig sc;
  sc.rows = 2;
  sc.cols = 2;
  sc.days = 3;
  sc.intervals_per_day = 12;
  const data::FlowSeries series = data::SynthGenerate(sc, 3);
  const auto samples = data::EnumerateSamples(series, 2, 1, 4).samples;
  REQUIRE(samples.size() >= 4);
  const Scaler scaler = data::FitFlowScaler(series, series.size());
  SpnConfig c;
  c.height = 2;
  c.width = 2;
  c.external_dim = series.external_dim();
  c.seq_len = 2;
  c.periodic_len = 1;
  c.residual_units = 1;
  c.horizon = 4;
  ParamStore store;
  auto model = MakeForecaster(store, c);
  XavierInit(store, 2);
  const ParamStore initial = store;
  ForecastObjective obj(*model, store, ForecastObjective::Assemble(series, samples, scaler), {});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 2;
  cfg.early_stopping = false;
  cfg.gate_warmup_steps = 3;
  cfg.max_steps = 3;
  Fit(store, obj, cfg);

  const SpnInput input = data::AssembleInput(series, samples[0], scaler);
  for (double r : model->Predict(store, input).fusion_weights) CHECK(r == 0.5);
  int gates = 0, others = 0, moved = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamId id{i};
    const std::string& name = store.name(id);
    if (IsFusionGateOutputParam(name)) {
      CHECK(store.value(id).MaxAbs() == 0.0);
      ++gates;
    } else if (IsFusionGateParam(name)) {
      CHECK(oracle::MaxAbsDiff(store.value(id), initial.value(id)) == 0.0);
    } else {
      // Kernels acting on a zero initial state legitimately stay put.
      ++others;
      moved += oracle::MaxAbsDiff(store.value(id), initial.value(id)) > 0.0;
    }
  }
  CHECK(gates == 8);  // weight and bias of four gates
  CHECK(moved > others / 2);

  // Resuming past the warmup lets the gates move.
  cfg.gate_warmup_steps = 0;
  Fit(store, obj, cfg);
  for (double r : model->Predict(store, input).fusion_weights) CHECK(r != 0.5);

  cfg.gate_warmup_steps = -1;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  testing::TempDir dir;
  SpnConfig c;
  c.height = 2;
  c.width = 2;
  c.external_dim = 3;
  c.residual_units = 1;
  ParamStore store;
  auto model = MakeForecaster(store, c);
  XavierInit(store, 1);
  store.RoundToStoragePrecision();
  CheckpointMeta meta;
  meta.model = c;
  meta.flow_min = 0.0;
  meta.flow_max = 12.0;
  meta.vocabulary_hash = 1234567890123ULL;
  meta.interval_seconds = 1800;
  const auto path = dir.path() / "ckpt" / "model.atfm";
  SaveCheckpoint(path, store, meta);

  const CheckpointMeta back = LoadCheckpointMeta(path);
  CHECK(back.model.residual_units == 1);
  CHECK(back.flow_max == 12.0);
  CHECK(back.vocabulary_hash == meta.vocabulary_hash);

  ParamStore loaded;
  MakeForecaster(loaded, back.model);
  LoadCheckpointParams(path, loaded);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(oracle::MaxAbsDiff(store.value(ParamId{i}), loaded.value(ParamId{i})) == 0.0);
  }

  SpnConfig other = c;
  other.residual_units = 2;
  ParamStore wrong;
  MakeForecaster(wrong, other);
  CHECK_THROWS_AS(LoadCheckpointParams(path, wrong), ContractError);
  CHECK_THROWS_AS(CheckpointMeta::FromJson("{}"), DataError);

  data::SynthConfig sc;
  sc.rows = 2;
  sc.cols = 3;
  sc.days = 1;
  const data::FlowSeries series = data::SynthGenerate(sc, 1);
  const std::vector<std::string> diff = CompatibilityDiff(back, series);
  CHECK(diff.size() >= 2);
  CHECK(diff[0].find("grid") == 0);
}

}  // namespace
}  // namespace atfm::train
