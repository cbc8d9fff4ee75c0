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

#include "atfm/models.h"

#include <string>

#include "atfm/error.h"

namespace atfm {
namespace {

void CheckInterval(const IntervalInput& in, const SpnConfig& c, const char* where) {
  const Shape flow{c.flow_channels, c.height, c.width};
  if (in.flow.empty() || in.external.empty()) {
    throw SampleError(std::string(where) + ": interval is missing its flow map or external vector");
  }
  if (!(in.flow.shape() == flow)) {
    throw ShapeError(std::string(where) + ": flow map " + in.flow.shape().ToString() +
                     " but model expects " + flow.ToString());
  }
  if (!(in.external.shape() == Shape{c.external_dim})) {
    throw ShapeError(std::string(where) + ": external vector " +
                     in.external.shape().ToString() + " but model expects (" +
                     std::to_string(c.external_dim) + ")");
  }
}

void CheckInput(const SpnInput& input, const SpnConfig& c) {
  if (static_cast<int>(input.sequential.size()) != c.seq_len) {
    throw SampleError("sample carries " + std::to_string(input.sequential.size()) +
                      " sequential intervals, model expects " + std::to_string(c.seq_len));
  }
  if (static_cast<int>(input.periodic.size()) != c.horizon) {
    throw SampleError("sample carries " + std::to_string(input.periodic.size()) +
                      " periodic sets, model expects " + std::to_string(c.horizon));
  }
  for (const IntervalInput& in : input.sequential) CheckInterval(in, c, "sequential");
  for (const auto& set : input.periodic) {
    if (static_cast<int>(set.size()) != c.periodic_len) {
      throw SampleError("periodic set has " + std::to_string(set.size()) +
                        " intervals, model expects " + std::to_string(c.periodic_len));
    }
    for (const IntervalInput& in : set) CheckInterval(in, c, "periodic");
  }
}

struct EmbeddedSet {
  std::vector<Var> features;
  std::vector<Var> external_features;
};

EmbeddedSet EmbedAll(const GraphContext& ctx, const NfeParams& nfe,
                     const std::vector<IntervalInput>& intervals) {
  EmbeddedSet out;
  for (const IntervalInput& in : intervals) {
    IntervalEmbedding e = EmbedInterval(ctx, nfe, ctx.Constant(in.flow),
                                        ctx.Constant(in.external));
    out.features.push_back(e.feature);
    out.external_features.push_back(e.external_feature);
  }
  return out;
}

NfeConfig MakeNfeConfig(const SpnConfig& c) {
  NfeConfig n;
  n.flow_channels = c.flow_channels;
  n.feature_channels = c.feature_channels;
  n.residual_units = c.residual_units;
  n.external_dim = c.external_dim;
  n.external_hidden = c.external_hidden;
  n.height = c.height;
  n.width = c.width;
  return n;
}

}  // namespace

void SpnConfig::Validate() const {
  if (height < 1 || width < 1) throw ConfigError("grid must be at least 1x1");
  if (external_dim < 1) throw ConfigError("external vector dimension must be >= 1");
  if (seq_len < 1 || periodic_len < 1) throw ConfigError("n and m must be >= 1");
  if (residual_units < 1) throw ConfigError("at least one residual unit is required");
  if (horizon != 1 && horizon != 4) throw ConfigError("horizon must be 1 or 4");
  if (flow_channels < 1 || feature_channels < 1 || hidden_channels < 1 ||
      external_hidden < 1 || fusion_hidden < 1) {
    throw ConfigError("channel widths must be positive");
  }
}

Forecast ToForecast(const ForecastGraph& graph) {
  Forecast f;
  for (const Var& v : graph.predictions) f.predictions.push_back(v.value());
  for (const Var& v : graph.fusion_weights) f.fusion_weights.push_back(v.value()[0]);
  for (const Var& v : graph.sequential_attention) f.sequential_attention.push_back(v.value());
  for (const auto& set : graph.periodic_attention) {
    auto& dst = f.periodic_attention.emplace_back();
    for (const Var& v : set) dst.push_back(v.value());
  }
  return f;
}

IntervalEmbedding EmbedInterval(const GraphContext& ctx, const NfeParams& nfe,
                                Var scaled_flow, Var external) {
  Var flow_feature = NfeFlow(ctx, nfe, scaled_flow);
  Var external_feature = NfeExternal(ctx, nfe, external);
  return {ConcatChannels(flow_feature, external_feature), external_feature};
}

FusionParams AddFusionParams(ParamStore& store, const std::string& prefix,
                             int64_t feature_channels, int64_t height,
                             int64_t width, int64_t hidden) {
  return {AddDenseParams(store, prefix + "/fc1", 3 * feature_channels * height * width, hidden),
          AddDenseParams(store, prefix + "/fc2", hidden, 1)};
}

FusionResult FuseTemporal(const GraphContext& ctx, const FusionParams& fusion,
                          Var sequential, Var periodic, Var external) {
  CheckSameShape(sequential.shape(), periodic.shape(), "fusion (S vs P)");
  CheckSameShape(sequential.shape(), external.shape(), "fusion (S vs E)");
  const Var parts[] = {sequential, periodic, external};
  Var joint = Flatten(ConcatChannels(parts));
  Var hidden = Relu(ApplyDense(ctx, fusion.fc1, joint));
  Var weight = Sigmoid(ApplyDense(ctx, fusion.fc2, hidden));
  return {FuseWithWeight(sequential, periodic, weight), weight};
}

Var FuseWithWeight(Var sequential, Var periodic, Var weight) {
  CheckSameShape(sequential.shape(), periodic.shape(), "fuse_with_weight");
  return ConcatChannels(ScaleBy(sequential, weight),
                        ScaleBy(periodic, Affine(weight, -1.0, 1.0)));
}

bool IsFusionGateParam(std::string_view name) {
  return name.starts_with("tvf/") || name.find("/tvf/") != std::string_view::npos;
}

bool IsFusionGateOutputParam(std::string_view name) {
  return IsFusionGateParam(name) && name.find("tvf/fc2/") != std::string_view::npos;
}

Forecast Forecaster::Predict(const ParamStore& params, const SpnInput& input) const {
  Tape tape;
  GraphContext ctx{tape, params};
  return ToForecast(Forward(ctx, input));
}

Spn::Spn(ParamStore& store, const SpnConfig& config) : config_(config) {
  config_.Validate();
  if (config_.horizon != 1) throw ConfigError("Spn predicts one step; use SpnLong for horizon 4");
  const SpnConfig& c = config_;
  nfe_ = AddNfeParams(store, "nfe", MakeNfeConfig(c));
  srl_ = AddAtfmParams(store, "srl", c.embed_channels(), c.hidden_channels, c.height, c.width);
  srl_reduce_ = AddConvParams(store, "srl/reduce", c.hidden_channels, c.feature_channels, 1);
  prl_ = AddAtfmParams(store, "prl", c.embed_channels(), c.hidden_channels, c.height, c.width);
  prl_reduce_ = AddConvParams(store, "prl/reduce", c.hidden_channels, c.feature_channels, 1);
  fusion_ = AddFusionParams(store, "tvf", c.feature_channels, c.height, c.width, c.fusion_hidden);
  head_ = AddConvParams(store, "head", 2 * c.feature_channels, c.flow_channels, 1);
}

ForecastGraph Spn::Forward(const GraphContext& ctx, const SpnInput& input) const {
  CheckInput(input, config_);
  EmbeddedSet seq = EmbedAll(ctx, nfe_, input.sequential);
  EmbeddedSet per = EmbedAll(ctx, nfe_, input.periodic.front());

  AtfmEncoding seq_code = Atfm(ctx, srl_).Encode(seq.features);
  AtfmEncoding per_code = Atfm(ctx, prl_).Encode(per.features);
  Var sequential = ApplyConv(ctx, srl_reduce_, seq_code.hidden);
  Var periodic = ApplyConv(ctx, prl_reduce_, per_code.hidden);

  std::vector<Var> externals = seq.external_features;
  externals.insert(externals.end(), per.external_features.begin(),
                   per.external_features.end());
  Var external = AddN(externals);

  FusionResult fused = FuseTemporal(ctx, fusion_, sequential, periodic, external);
  ForecastGraph g;
  g.predictions.push_back(Tanh(ApplyConv(ctx, head_, fused.fused)));
  g.fusion_weights.push_back(fused.weight);
  g.sequential_features.push_back(sequential);
  g.periodic_features.push_back(periodic);
  g.fused_features.push_back(fused.fused);
  g.sequential_attention = seq_code.attention;
  g.periodic_attention.push_back(per_code.attention);
  return g;
}

SpnLong::SpnLong(ParamStore& store, const SpnConfig& config) : config_(config) {
  config_.Validate();
  if (config_.horizon != kHorizon) throw ConfigError("SpnLong requires horizon 4");
  const SpnConfig& c = config_;
  nfe_ = AddNfeParams(store, "nfe", MakeNfeConfig(c));
  srl_ = AddAtfmParams(store, "srl", c.embed_channels(), c.hidden_channels, c.height, c.width);
  srl_reduce_ = AddConvParams(store, "srl/reduce", c.hidden_channels, c.feature_channels, 1);
  prl_ = AddAtfmParams(store, "prl", c.embed_channels(), c.hidden_channels, c.height, c.width);
  prl_reduce_ = AddConvParams(store, "prl/reduce", c.hidden_channels, c.feature_channels, 1);
  for (int i = 0; i < kHorizon; ++i) {
    const std::string step = "step" + std::to_string(i + 1);
    const int64_t in = i == 0 ? c.feature_channels : 2 * c.feature_channels;
    predictors_.push_back(AddConvLstmParams(store, "long/" + step + "/lstm", in,
                                            c.feature_channels, c.height, c.width));
    fusions_.push_back(AddFusionParams(store, "long/" + step + "/tvf", c.feature_channels,
                                       c.height, c.width, c.fusion_hidden));
    heads_.push_back(AddConvParams(store, "long/" + step + "/head", 2 * c.feature_channels,
                                   c.flow_channels, 1));
  }
}

ForecastGraph SpnLong::Forward(const GraphContext& ctx, const SpnInput& input) const {
  CheckInput(input, config_);
  EmbeddedSet seq = EmbedAll(ctx, nfe_, input.sequential);
  AtfmEncoding seq_code = Atfm(ctx, srl_).Encode(seq.features);
  Var sequential = ApplyConv(ctx, srl_reduce_, seq_code.hidden);
  Var seq_external = AddN(seq.external_features);

  Atfm periodic_atfm(ctx, prl_);
  ForecastGraph g;
  g.sequential_attention = seq_code.attention;

  Var step_input = sequential;
  LstmState state;
  for (int i = 0; i < kHorizon; ++i) {
    ConvLstmCell cell(ctx, predictors_[i]);
    if (i == 0) state = cell.ZeroState();
    state = cell.Step(step_input, state);

    EmbeddedSet per = EmbedAll(ctx, nfe_, input.periodic[i]);
    AtfmEncoding per_code = periodic_atfm.Encode(per.features);
    Var periodic = ApplyConv(ctx, prl_reduce_, per_code.hidden);
    std::vector<Var> externals{seq_external};
    externals.insert(externals.end(), per.external_features.begin(),
                     per.external_features.end());
    Var external = AddN(externals);

    FusionResult fused = FuseTemporal(ctx, fusions_[i], state.h, periodic, external);
    g.predictions.push_back(Tanh(ApplyConv(ctx, heads_[i], fused.fused)));
    g.fusion_weights.push_back(fused.weight);
    g.sequential_features.push_back(state.h);
    g.periodic_features.push_back(periodic);
    g.fused_features.push_back(fused.fused);
    g.periodic_attention.push_back(per_code.attention);
    step_input = fused.fused;
  }
  return g;
}

std::unique_ptr<Forecaster> MakeForecaster(ParamStore& store, const SpnConfig& config) {
  if (config.horizon == 1) return std::make_unique<Spn>(store, config);
  return std::make_unique<SpnLong>(store, config);
}

}  // namespace atfm
