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

#include "atfm/train.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <thread>

#include <json.hpp>

#include "atfm/error.h"
#include "atfm/ops.h"

namespace atfm::train {
namespace {

using json = nlohmann::json;

double ExampleLoss(const Forecaster& model, const ParamStore& params,
                   const ForecastObjective::Example& ex, Gradients* sink, double weight) {
  Tape tape;
  GraphContext ctx{tape, params};
  ForecastGraph g = model.Forward(ctx, ex.input);
  Var loss = EuclideanLoss(ctx, g.predictions, ex.targets);
  const double value = loss.value()[0];
  if (sink != nullptr) {
    tape.Backward(loss);
    tape.AccumulateParamGrads(*sink, weight);
  }
  return value;
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be > 0");
  }
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max steps must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (gate_warmup_steps < 0) throw ConfigError("gate warmup steps must be >= 0");
}

void XavierInit(ParamStore& params, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamId id{i};
    const ParamSpec& spec = params.spec(id);
    Tensor& value = params.mutable_value(id);
    if (spec.kind != ParamKind::kWeight) {
      value.Fill(0.0);
      continue;
    }
    if (spec.fan_in + spec.fan_out <= 0) {
      throw ArgumentError("parameter " + spec.name + " has no fan sizes");
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : value.values()) v = dist(rng);
  }
}

double EuclideanLoss(const Tensor& pred, const Tensor& target) {
  CheckSameShape(pred.shape(), target.shape(), "euclidean loss");
  if (pred.size() == 0) throw ShapeError("euclidean loss: empty tensors");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

Var EuclideanLoss(const GraphContext& ctx, std::span<const Var> preds,
                  std::span<const Tensor> targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ShapeError("euclidean loss: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (preds.size() == 1) return MeanSquaredError(preds[0], ctx.Constant(targets[0]));
  std::vector<Var> terms;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    CheckSameShape(preds[k].shape(), preds[0].shape(), "euclidean loss steps");
    terms.push_back(MeanSquaredError(preds[k], ctx.Constant(targets[k])));
  }
  return Scale(AddN(terms), 1.0 / static_cast<double>(terms.size()));
}

// ---------------------------------------------------------------------------

AdamState::AdamState(const ParamStore& params, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(ParamId{i}).shape());
    v_.emplace_back(params.value(ParamId{i}).shape());
  }
}

void AdamStep(ParamStore& params, const Gradients& grads, AdamState& state, double lr) {
  if (grads.size() != params.size() || state.m_.size() != params.size()) {
    throw StateError("adam: gradients or moments do not cover the parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params.value(ParamId{i}).shape();
    if (!(grads.at(i).shape() == s) || !(state.m_[i].shape() == s)) {
      throw StateError("adam: unpopulated gradient for " + params.name(ParamId{i}));
    }
  }
  ++state.step_;
  const double b1 = state.beta1_, b2 = state.beta2_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params.mutable_value(ParamId{i}).data();
    const double* g = grads.at(i).data();
    double* m = state.m_[i].data();
    double* v = state.v_[i].data();
    const std::size_t n = state.m_[i].size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon_);
    }
  }
}

double ClipGlobalNorm(Gradients& grads, double max_norm) {
  const double norm = grads.GlobalNorm();
  if (norm > max_norm) grads.Scale(max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------

ForecastObjective::ForecastObjective(const Forecaster& model, const ParamStore& params,
                                     std::vector<Example> train, std::vector<Example> validation)
    : model_(model), params_(params), train_(std::move(train)), validation_(std::move(validation)) {}

std::vector<ForecastObjective::Example> ForecastObjective::Assemble(
    const data::FlowSeries& series, std::span<const data::Sample> samples,
    const Scaler& flow_scaler) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const data::Sample& s : samples) {
    out.push_back({data::AssembleInput(series, s, flow_scaler),
                   data::AssembleTargets(series, s, flow_scaler)});
  }
  return out;
}

double ForecastObjective::TrainExample(int64_t i, Gradients& sink, double weight) const {
  return ExampleLoss(model_, params_, train_.at(i), &sink, weight);
}

double ForecastObjective::ValidationSquaredError(int64_t i, int64_t* count) const {
  const Example& ex = validation_.at(i);
  const double mse = ExampleLoss(model_, params_, ex, nullptr, 0.0);
  int64_t n = 0;
  for (const Tensor& t : ex.targets) n += static_cast<int64_t>(t.size());
  if (count != nullptr) *count = n;
  return mse * static_cast<double>(n);
}

// ---------------------------------------------------------------------------

std::string HistoryCsv(std::span<const HistoryRow> rows) {
  std::string out = "step,epoch,split,loss,rmse\n";
  char buf[128];
  for (const HistoryRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%s,%.17g,%.17g\n", static_cast<long long>(r.step),
                  r.epoch, r.split.c_str(), r.loss, r.rmse);
    out += buf;
  }
  return out;
}

std::pair<std::vector<data::Sample>, std::vector<data::Sample>> SplitValidation(
    std::vector<data::Sample> samples, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ArgumentError("validation fraction must lie in [0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(samples.size())));
  std::vector<data::Sample> val(samples.end() - static_cast<std::ptrdiff_t>(n_val), samples.end());
  samples.resize(samples.size() - n_val);
  return {std::move(samples), std::move(val)};
}

HoldoutSplit SplitAt(std::span<const data::Sample> samples, int64_t train_end) {
  HoldoutSplit split;
  split.train_end = train_end;
  for (const data::Sample& s : samples) {
    if (s.targets.empty()) continue;
    if (s.targets.back() < train_end) {
      split.train.push_back(s);
    } else if (s.targets.front() >= train_end) {
      split.test.push_back(s);
    }
  }
  return split;
}

HoldoutSplit SplitHoldout(const data::FlowSeries& series, std::span<const data::Sample> samples,
                          int64_t test_days) {
  const int64_t days = series.grid().days;
  if (test_days <= 0 || test_days >= days) {
    throw ArgumentError("held-out days must lie in [1, " + std::to_string(days - 1) + "], got " +
                        std::to_string(test_days));
  }
  return SplitAt(samples, series.Index(days - test_days, 0));
}

FitResult Fit(ParamStore& params, const Objective& objective, const TrainConfig& config,
              const std::function<void(const HistoryRow&)>& on_row) {
  config.Validate();
  const int64_t n_train = objective.num_train();
  const int64_t n_val = objective.num_validation();
  if (n_train == 0) throw ArgumentError("training set is empty");
  if (config.early_stopping && n_val == 0) {
    throw ConfigError("early stopping needs a non-empty validation set");
  }

  FitResult result;
  auto emit = [&](HistoryRow row) {
    if (on_row) on_row(row);
    result.history.push_back(std::move(row));
  };

  AdamState adam(params);
  Gradients grads = params.MakeGradients();
  const int threads = static_cast<int>(std::min<int64_t>(config.threads, config.batch_size));
  std::vector<Gradients> scratch;
  for (int t = 0; t < threads && threads > 1; ++t) scratch.push_back(params.MakeGradients());

  std::vector<std::size_t> gate_params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(ParamId{i});
    if (!IsFusionGateParam(name)) continue;
    gate_params.push_back(i);
    if (config.gate_warmup_steps > 0 && IsFusionGateOutputParam(name)) {
      params.mutable_value(ParamId{i}).Fill(0.0);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<std::size_t>(n_train));
  std::vector<Tensor> best;
  int since_best = 0;
  bool have_best = false;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    bool step_limit = false;
    for (int64_t start = 0; start < n_train; start += config.batch_size) {
      const int64_t end = std::min<int64_t>(start + config.batch_size, n_train);
      const double weight = 1.0 / static_cast<double>(end - start);
      grads.Zero();
      double loss = 0.0;
      if (threads <= 1) {
        for (int64_t k = start; k < end; ++k) {
          loss += objective.TrainExample(order[k], grads, weight);
        }
      } else {
        // Each example lands in its own buffer; buffers merge in example
        // order, so the sum matches the serial path bit for bit.
        std::vector<double> losses(static_cast<std::size_t>(threads));
        for (int64_t wave = start; wave < end; wave += threads) {
          const int count = static_cast<int>(std::min<int64_t>(threads, end - wave));
          std::vector<std::thread> pool;
          for (int t = 0; t < count; ++t) {
            scratch[t].Zero();
            pool.emplace_back([&, t] {
              losses[t] = objective.TrainExample(order[wave + t], scratch[t], weight);
            });
          }
          for (auto& th : pool) th.join();
          for (int t = 0; t < count; ++t) {
            grads.Add(scratch[t]);
            loss += losses[t];
          }
        }
      }
      loss *= weight;
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at step " + std::to_string(result.steps + 1));
      }
      if (result.steps < config.gate_warmup_steps) {
        for (std::size_t i : gate_params) grads.at(i).Fill(0.0);
      }
      if (config.clip_norm) ClipGlobalNorm(grads, *config.clip_norm);
      AdamStep(params, grads, adam, config.learning_rate);
      ++result.steps;
      emit({result.steps, epoch, "train", loss, std::sqrt(loss)});
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        step_limit = true;
        break;
      }
    }
    result.epochs_run = epoch;

    if (n_val > 0) {
      double squared = 0.0;
      int64_t count = 0;
      for (int64_t i = 0; i < n_val; ++i) {
        int64_t c = 0;
        squared += objective.ValidationSquaredError(i, &c);
        count += c;
      }
      const double mse = squared / static_cast<double>(count);
      if (!std::isfinite(mse)) throw NumericError("non-finite validation loss");
      const double rmse = std::sqrt(mse);
      emit({result.steps, epoch, "val", mse, rmse});
      if (!have_best || rmse < result.best_validation_rmse) {
        have_best = true;
        result.best_validation_rmse = rmse;
        result.best_epoch = epoch;
        best = params.Snapshot();
        since_best = 0;
      } else {
        ++since_best;
      }
      if (config.early_stopping && since_best >= config.patience) {
        result.stopped_early = true;
        break;
      }
    }
    if (step_limit) break;
  }
  if (have_best && config.early_stopping) params.Restore(best);
  return result;
}

// ---------------------------------------------------------------------------

std::string CheckpointMeta::ToJson() const {
  json j;
  j["format"] = "atfm-checkpoint";
  j["model"] = {{"height", model.height},
                {"width", model.width},
                {"external_dim", model.external_dim},
                {"n", model.seq_len},
                {"m", model.periodic_len},
                {"residual_units", model.residual_units},
                {"horizon", model.horizon},
                {"flow_channels", model.flow_channels},
                {"feature_channels", model.feature_channels},
                {"hidden_channels", model.hidden_channels},
                {"external_hidden", model.external_hidden},
                {"fusion_hidden", model.fusion_hidden}};
  j["flow_scaler"] = {{"min", flow_min}, {"max", flow_max}};
  j["vocabulary_hash"] = std::to_string(vocabulary_hash);
  j["interval_seconds"] = interval_seconds;
  j["train_end"] = train_end;
  j["epoch"] = epoch;
  j["step"] = step;
  return j.dump(2) + "\n";
}

CheckpointMeta CheckpointMeta::FromJson(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "atfm-checkpoint") throw DataError("not a checkpoint sidecar");
    CheckpointMeta m;
    const json& jm = j.at("model");
    m.model.height = jm.at("height");
    m.model.width = jm.at("width");
    m.model.external_dim = jm.at("external_dim");
    m.model.seq_len = jm.at("n");
    m.model.periodic_len = jm.at("m");
    m.model.residual_units = jm.at("residual_units");
    m.model.horizon = jm.at("horizon");
    m.model.flow_channels = jm.at("flow_channels");
    m.model.feature_channels = jm.at("feature_channels");
    m.model.hidden_channels = jm.at("hidden_channels");
    m.model.external_hidden = jm.at("external_hidden");
    m.model.fusion_hidden = jm.at("fusion_hidden");
    m.flow_min = j.at("flow_scaler").at("min");
    m.flow_max = j.at("flow_scaler").at("max");
    m.vocabulary_hash = std::stoull(j.at("vocabulary_hash").get<std::string>());
    m.interval_seconds = j.at("interval_seconds");
    m.train_end = j.at("train_end");
    m.epoch = j.at("epoch");
    m.step = j.at("step");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint sidecar: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed checkpoint sidecar: ") + e.what());
  }
}

void SaveCheckpoint(const std::filesystem::path& path, const ParamStore& params,
                    const CheckpointMeta& meta) {
  TensorContainer c;
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.Put(params.name(ParamId{i}), params.value(ParamId{i}));
  }
  c.Save(path);
  WriteFileBytes(data::SidecarPath(path), meta.ToJson());
}

CheckpointMeta LoadCheckpointMeta(const std::filesystem::path& path) {
  return CheckpointMeta::FromJson(ReadFileBytes(data::SidecarPath(path)));
}

void LoadCheckpointParams(const std::filesystem::path& path, ParamStore& params) {
  const TensorContainer c = TensorContainer::Load(path);
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(ParamId{i});
    if (!c.Contains(name)) {
      problems.push_back("missing " + name);
      continue;
    }
    const Shape& want = params.value(ParamId{i}).shape();
    const Shape& got = c.Get(name).shape();
    if (!(want == got)) {
      problems.push_back(name + ": stored " + got.ToString() + ", model " + want.ToString());
    }
  }
  for (const auto& [name, tensor] : c.entries()) {
    if (!params.Find(name)) problems.push_back("unexpected " + name);
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ContractError(msg);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params.mutable_value(ParamId{i}) = c.Get(params.name(ParamId{i}));
  }
}

std::vector<std::string> CompatibilityDiff(const CheckpointMeta& meta,
                                           const data::FlowSeries& series) {
  std::vector<std::string> diff;
  auto check = [&](const std::string& key, const std::string& ckpt, const std::string& ser) {
    if (ckpt != ser) diff.push_back(key + ": checkpoint=" + ckpt + " series=" + ser);
  };
  const data::GridSpec& g = series.grid();
  check("grid", std::to_string(meta.model.height) + "x" + std::to_string(meta.model.width),
        std::to_string(g.rows) + "x" + std::to_string(g.cols));
  check("interval_seconds", std::to_string(meta.interval_seconds),
        std::to_string(g.interval_seconds));
  check("external_dim", std::to_string(meta.model.external_dim),
        std::to_string(series.external_dim()));
  if (series.encoder().fitted()) {
    check("vocabulary_hash", std::to_string(meta.vocabulary_hash),
          std::to_string(series.encoder().VocabularyHash()));
  }
  return diff;
}

}  // namespace atfm::train
