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

#ifndef ATFM_LAYERS_H_
#define ATFM_LAYERS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "atfm/ops.h"
#include "atfm/param_store.h"
#include "atfm/tape.h"

namespace atfm {

// A tape together with the parameter store its Param leaves read from.
struct GraphContext {
  Tape& tape;
  const ParamStore& params;

  Var operator()(ParamId id) const { return tape.Param(params, id); }
  Var Constant(Tensor t) const { return tape.Constant(std::move(t)); }
};

// Convolution kernel [out, in, k, k] plus bias [out], Xavier-initialized.
struct ConvParams {
  ParamId kernel;
  ParamId bias;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int kernel_size = 1;
};

ConvParams AddConvParams(ParamStore& store, const std::string& prefix,
                         int64_t in_channels, int64_t out_channels,
                         int kernel_size);
// Stride 1, "same" padding.
Var ApplyConv(const GraphContext& ctx, const ConvParams& conv, Var x);

struct DenseParams {
  ParamId weight;
  ParamId bias;
  int64_t in_features = 0;
  int64_t out_features = 0;
};

DenseParams AddDenseParams(ParamStore& store, const std::string& prefix,
                           int64_t in_features, int64_t out_features);
Var ApplyDense(const GraphContext& ctx, const DenseParams& dense, Var x);

// ---------------------------------------------------------------------------
// Peephole ConvLSTM.

struct ConvLstmParams {
  // Input-to-state kernels [hidden, in, k, k].
  ParamId wxi, wxf, wxc, wxo;
  // State-to-state kernels [hidden, hidden, k, k].
  ParamId whi, whf, whc, who;
  // Per-channel gate biases [hidden].
  ParamId bi, bf, bc, bo;
  // Peephole Hadamard weights [hidden, H, W].
  ParamId wci, wcf, wco;
  int64_t in_channels = 0;
  int64_t hidden_channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  int kernel_size = 3;
};

ConvLstmParams AddConvLstmParams(ParamStore& store, const std::string& prefix,
                                 int64_t in_channels, int64_t hidden_channels,
                                 int64_t height, int64_t width,
                                 int kernel_size = 3);

struct LstmState {
  Var h;
  Var c;
};

// ConvLSTM parameters bound to a tape. The four gate kernels of each path are
// stacked once so a step costs two convolutions.
class ConvLstmCell {
 public:
  ConvLstmCell(const GraphContext& ctx, const ConvLstmParams& params);

  const ConvLstmParams& params() const { return params_; }
  LstmState ZeroState() const;

  //   i  = sigmoid(Wxi*x + Whi*h + wci.c  + bi)
  //   f  = sigmoid(Wxf*x + Whf*h + wcf.c  + bf)
  //   c' = f.c + i.tanh(Wxc*x + Whc*h + bc)
  //   o  = sigmoid(Wxo*x + Who*h + wco.c' + bo)
  //   h' = o.tanh(c')
  LstmState Step(Var x, const LstmState& state) const;

 private:
  GraphContext ctx_;
  ConvLstmParams params_;
  Var x_kernels_, h_kernels_, biases_;
  Var wci_, wcf_, wco_;
};

// ---------------------------------------------------------------------------
// Normal feature extraction.

// Pre-activation residual unit: x + conv2(relu(conv1(relu(x)))).
struct ResidualUnitParams {
  ConvParams conv1;
  ConvParams conv2;
};

ResidualUnitParams AddResidualUnitParams(ParamStore& store,
                                         const std::string& prefix,
                                         int64_t channels);
Var ResidualUnit(const GraphContext& ctx, const ResidualUnitParams& unit,
                 Var x);

struct NfeConfig {
  int64_t flow_channels = 2;
  int64_t feature_channels = 16;
  int residual_units = 4;
  int64_t external_dim = 0;
  int64_t external_hidden = 40;
  int64_t height = 0;
  int64_t width = 0;
};

struct NfeParams {
  NfeConfig config;
  ConvParams stem;
  std::vector<ResidualUnitParams> units;
  DenseParams fc1;
  DenseParams fc2;
};

NfeParams AddNfeParams(ParamStore& store, const std::string& prefix,
                       const NfeConfig& config);

// Stem convolution followed by the residual units; output [16, H, W]. Throws
// ContractError if the map was not scaled into [-1, 1].
Var NfeFlow(const GraphContext& ctx, const NfeParams& nfe, Var scaled_map);
// FC -> relu -> FC, reshaped to [16, H, W].
Var NfeExternal(const GraphContext& ctx, const NfeParams& nfe, Var external);

}  // namespace atfm

#endif  // ATFM_LAYERS_H_
