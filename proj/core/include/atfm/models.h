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

// Sequential-periodic networks built on ATFM.
//
// Spn predicts the next interval: every input interval is embedded by one
// shared feature extractor, the recent intervals and the same interval of
// prior days each pass through their own ATFM, and a learned scalar gate r
// weighs the two representations before a 1x1 tanh head.
//
// SpnLong predicts four intervals with a chain of ConvLSTM units seeded by the
// sequential representation. Unit i takes the previous fused representation,
// fuses its hidden state with the periodic representation for step i, and
// emits one map.

#ifndef ATFM_MODELS_H_
#define ATFM_MODELS_H_

#include <memory>
#include <string_view>
#include <vector>

#include "atfm/atfm.h"
#include "atfm/layers.h"

namespace atfm {

struct SpnConfig {
  int64_t height = 0;
  int64_t width = 0;
  int64_t external_dim = 0;
  int seq_len = 4;         // n
  int periodic_len = 2;    // m
  int residual_units = 4;  // N
  int horizon = 1;         // 1 = Spn, 4 = SpnLong
  int64_t flow_channels = 2;
  int64_t feature_channels = 16;
  int64_t hidden_channels = 32;
  int64_t external_hidden = 40;
  int64_t fusion_hidden = 32;

  // Channels of an embedded interval (flow features plus external features).
  int64_t embed_channels() const { return 2 * feature_channels; }
  void Validate() const;
};

// One interval as seen by the network: a flow map scaled into [-1, 1] and its
// encoded external vector.
struct IntervalInput {
  Tensor flow;      // [2, H, W]
  Tensor external;  // [dE]
};

struct SpnInput {
  // Intervals t-n+1 .. t of the target day, oldest first.
  std::vector<IntervalInput> sequential;
  // One entry per horizon step: interval t+i on days d-m .. d-1, oldest first.
  std::vector<std::vector<IntervalInput>> periodic;
};

// Graph handles produced by a forward pass.
struct ForecastGraph {
  std::vector<Var> predictions;     // [2, H, W] each, in (-1, 1)
  std::vector<Var> fusion_weights;  // [1] each
  // Fusion inputs per horizon step: sequential and periodic representations
  // [16, H, W] and the fused map [32, H, W].
  std::vector<Var> sequential_features;
  std::vector<Var> periodic_features;
  std::vector<Var> fused_features;
  std::vector<Var> sequential_attention;
  std::vector<std::vector<Var>> periodic_attention;  // per horizon step
};

// Plain values of a forward pass.
struct Forecast {
  std::vector<Tensor> predictions;
  std::vector<double> fusion_weights;
  std::vector<Tensor> sequential_attention;
  std::vector<std::vector<Tensor>> periodic_attention;
};

Forecast ToForecast(const ForecastGraph& graph);

// ---------------------------------------------------------------------------
// Shared pieces.

// Embedded feature of one interval plus its external branch alone.
struct IntervalEmbedding {
  Var feature;           // [32, H, W] = flow features (+) external features
  Var external_feature;  // [16, H, W]
};

IntervalEmbedding EmbedInterval(const GraphContext& ctx, const NfeParams& nfe,
                                Var scaled_flow, Var external);

struct FusionParams {
  DenseParams fc1;  // 3*16*H*W -> 32
  DenseParams fc2;  // 32 -> 1
};

FusionParams AddFusionParams(ParamStore& store, const std::string& prefix,
                             int64_t feature_channels, int64_t height,
                             int64_t width, int64_t hidden);

struct FusionResult {
  Var fused;   // [32, H, W]
  Var weight;  // [1], r
};

// r = sigmoid(fc2(relu(fc1(flatten(S (+) P (+) E))))), fused = r*S (+) (1-r)*P.
FusionResult FuseTemporal(const GraphContext& ctx, const FusionParams& fusion,
                          Var sequential, Var periodic, Var external);
// (r * sequential) (+) ((1 - r) * periodic) for a given one-element r.
Var FuseWithWeight(Var sequential, Var periodic, Var weight);

// True for parameters of a fusion gate ("tvf/..." or ".../tvf/...").
bool IsFusionGateParam(std::string_view name);
// True for the output layer of a fusion gate; zeroing it gives r = 0.5.
bool IsFusionGateOutputParam(std::string_view name);

// ---------------------------------------------------------------------------

// Common interface of the short- and long-term predictors.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual const SpnConfig& config() const = 0;
  // Validates `input` against the configuration and records the forward
  // pass. Throws SampleError on missing intervals and ShapeError on bad
  // extents.
  virtual ForecastGraph Forward(const GraphContext& ctx,
                                const SpnInput& input) const = 0;

  // Forward pass on a scratch tape.
  Forecast Predict(const ParamStore& params, const SpnInput& input) const;
};

class Spn : public Forecaster {
 public:
  // Registers every parameter in `store` under canonical names.
  Spn(ParamStore& store, const SpnConfig& config);

  const SpnConfig& config() const override { return config_; }
  ForecastGraph Forward(const GraphContext& ctx, const SpnInput& input) const override;

  const NfeParams& nfe() const { return nfe_; }
  const FusionParams& fusion() const { return fusion_; }

 private:
  SpnConfig config_;
  NfeParams nfe_;
  AtfmParams srl_;
  ConvParams srl_reduce_;
  AtfmParams prl_;
  ConvParams prl_reduce_;
  FusionParams fusion_;
  ConvParams head_;
};

class SpnLong : public Forecaster {
 public:
  static constexpr int kHorizon = 4;

  SpnLong(ParamStore& store, const SpnConfig& config);

  const SpnConfig& config() const override { return config_; }
  ForecastGraph Forward(const GraphContext& ctx, const SpnInput& input) const override;

 private:
  SpnConfig config_;
  NfeParams nfe_;
  AtfmParams srl_;
  ConvParams srl_reduce_;
  AtfmParams prl_;
  ConvParams prl_reduce_;
  std::vector<ConvLstmParams> predictors_;
  std::vector<FusionParams> fusions_;
  std::vector<ConvParams> heads_;
};

// Spn for horizon 1, SpnLong for horizon 4.
std::unique_ptr<Forecaster> MakeForecaster(ParamStore& store, const SpnConfig& config);

}  // namespace atfm

#endif  // ATFM_MODELS_H_
