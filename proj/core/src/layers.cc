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

#include "atfm/layers.h"

#include <cmath>

#include "atfm/error.h"

namespace atfm {
namespace {

// Slack for values produced by a [-1, 1] scaler.
constexpr double kScaledSlack = 1e-9;

ParamId AddKernel(ParamStore& store, const std::string& name, int64_t out,
                  int64_t in, int k) {
  return store.Add(name, Shape{out, in, k, k}, ParamKind::kWeight,
                   in * k * k, out * k * k);
}

ParamId AddBias(ParamStore& store, const std::string& name, int64_t n) {
  return store.Add(name, Shape{n}, ParamKind::kBias);
}

}  // namespace

ConvParams AddConvParams(ParamStore& store, const std::string& prefix,
                         int64_t in_channels, int64_t out_channels,
                         int kernel_size) {
  if (in_channels < 1 || out_channels < 1 || kernel_size < 1 || kernel_size % 2 == 0) {
    throw ArgumentError("conv '" + prefix + "': invalid geometry");
  }
  ConvParams p;
  p.kernel = AddKernel(store, prefix + "/k", out_channels, in_channels, kernel_size);
  p.bias = AddBias(store, prefix + "/b", out_channels);
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel_size = kernel_size;
  return p;
}

Var ApplyConv(const GraphContext& ctx, const ConvParams& conv, Var x) {
  return Conv2d(x, ctx(conv.kernel), ctx(conv.bias), 1, conv.kernel_size / 2);
}

DenseParams AddDenseParams(ParamStore& store, const std::string& prefix,
                           int64_t in_features, int64_t out_features) {
  if (in_features < 1 || out_features < 1) {
    throw ArgumentError("dense '" + prefix + "': invalid extents");
  }
  DenseParams p;
  p.weight = store.Add(prefix + "/w", Shape{out_features, in_features},
                       ParamKind::kWeight, in_features, out_features);
  p.bias = AddBias(store, prefix + "/b", out_features);
  p.in_features = in_features;
  p.out_features = out_features;
  return p;
}

Var ApplyDense(const GraphContext& ctx, const DenseParams& dense, Var x) {
  return FullyConnected(x, ctx(dense.weight), ctx(dense.bias));
}

ConvLstmParams AddConvLstmParams(ParamStore& store, const std::string& prefix,
                                 int64_t in_channels, int64_t hidden_channels,
                                 int64_t height, int64_t width,
                                 int kernel_size) {
  if (in_channels < 1 || hidden_channels < 1 || height < 1 || width < 1 ||
      kernel_size < 1 || kernel_size % 2 == 0) {
    throw ArgumentError("convlstm '" + prefix + "': invalid geometry");
  }
  ConvLstmParams p;
  p.in_channels = in_channels;
  p.hidden_channels = hidden_channels;
  p.height = height;
  p.width = width;
  p.kernel_size = kernel_size;
  const std::string base = prefix + "/";
  p.wxi = AddKernel(store, base + "wxi", hidden_channels, in_channels, kernel_size);
  p.whi = AddKernel(store, base + "whi", hidden_channels, hidden_channels, kernel_size);
  p.wxf = AddKernel(store, base + "wxf", hidden_channels, in_channels, kernel_size);
  p.whf = AddKernel(store, base + "whf", hidden_channels, hidden_channels, kernel_size);
  p.wxc = AddKernel(store, base + "wxc", hidden_channels, in_channels, kernel_size);
  p.whc = AddKernel(store, base + "whc", hidden_channels, hidden_channels, kernel_size);
  p.wxo = AddKernel(store, base + "wxo", hidden_channels, in_channels, kernel_size);
  p.who = AddKernel(store, base + "who", hidden_channels, hidden_channels, kernel_size);
  p.bi = AddBias(store, base + "bi", hidden_channels);
  p.bf = AddBias(store, base + "bf", hidden_channels);
  p.bc = AddBias(store, base + "bc", hidden_channels);
  p.bo = AddBias(store, base + "bo", hidden_channels);
  const Shape state{hidden_channels, height, width};
  p.wci = store.Add(base + "wci", state, ParamKind::kPeephole);
  p.wcf = store.Add(base + "wcf", state, ParamKind::kPeephole);
  p.wco = store.Add(base + "wco", state, ParamKind::kPeephole);
  return p;
}

ConvLstmCell::ConvLstmCell(const GraphContext& ctx, const ConvLstmParams& params)
    : ctx_(ctx), params_(params) {
  const Var xk[] = {ctx(params.wxi), ctx(params.wxf), ctx(params.wxc), ctx(params.wxo)};
  const Var hk[] = {ctx(params.whi), ctx(params.whf), ctx(params.whc), ctx(params.who)};
  const Var b[] = {ctx(params.bi), ctx(params.bf), ctx(params.bc), ctx(params.bo)};
  x_kernels_ = ConcatChannels(xk);
  h_kernels_ = ConcatChannels(hk);
  biases_ = ConcatChannels(b);
  wci_ = ctx(params.wci);
  wcf_ = ctx(params.wcf);
  wco_ = ctx(params.wco);
}

LstmState ConvLstmCell::ZeroState() const {
  const Shape s{params_.hidden_channels, params_.height, params_.width};
  return {ctx_.Constant(Tensor(s)), ctx_.Constant(Tensor(s))};
}

LstmState ConvLstmCell::Step(Var x, const LstmState& state) const {
  const Shape in{params_.in_channels, params_.height, params_.width};
  const Shape hid{params_.hidden_channels, params_.height, params_.width};
  if (!(x.shape() == in)) {
    throw ShapeError("convlstm: input " + x.shape().ToString() + " but cell expects " +
                     in.ToString());
  }
  if (!(state.h.shape() == hid) || !(state.c.shape() == hid)) {
    throw ShapeError("convlstm: state " + state.h.shape().ToString() + "/" +
                     state.c.shape().ToString() + " but cell expects " + hid.ToString());
  }
  const int pad = params_.kernel_size / 2;
  const int64_t n = params_.hidden_channels;
  Var z = Add(Conv2d(x, x_kernels_, biases_, 1, pad),
              Conv2d(state.h, h_kernels_, Var(), 1, pad));
  Var zi = SliceChannels(z, 0, n);
  Var zf = SliceChannels(z, n, 2 * n);
  Var zc = SliceChannels(z, 2 * n, 3 * n);
  Var zo = SliceChannels(z, 3 * n, 4 * n);

  Var input_gate = Sigmoid(Add(zi, Hadamard(wci_, state.c)));
  Var forget_gate = Sigmoid(Add(zf, Hadamard(wcf_, state.c)));
  Var cell = Add(Hadamard(forget_gate, state.c), Hadamard(input_gate, Tanh(zc)));
  Var output_gate = Sigmoid(Add(zo, Hadamard(wco_, cell)));
  Var hidden = Hadamard(output_gate, Tanh(cell));
  return {hidden, cell};
}

ResidualUnitParams AddResidualUnitParams(ParamStore& store,
                                         const std::string& prefix,
                                         int64_t channels) {
  return {AddConvParams(store, prefix + "/conv1", channels, channels, 3),
          AddConvParams(store, prefix + "/conv2", channels, channels, 3)};
}

Var ResidualUnit(const GraphContext& ctx, const ResidualUnitParams& unit, Var x) {
  if (x.shape().rank() != 3 || x.shape()[0] != unit.conv1.in_channels) {
    throw ShapeError("residual unit: expected " + std::to_string(unit.conv1.in_channels) +
                     " channels, got " + x.shape().ToString());
  }
  Var y = ApplyConv(ctx, unit.conv1, Relu(x));
  y = ApplyConv(ctx, unit.conv2, Relu(y));
  return Add(x, y);
}

NfeParams AddNfeParams(ParamStore& store, const std::string& prefix,
                       const NfeConfig& config) {
  if (config.residual_units < 1) throw ArgumentError("nfe: at least one residual unit required");
  if (config.external_dim < 1) throw ArgumentError("nfe: external dimension must be >= 1");
  if (config.height < 1 || config.width < 1) throw ArgumentError("nfe: grid must be non-empty");
  NfeParams p;
  p.config = config;
  p.stem = AddConvParams(store, prefix + "/stem", config.flow_channels,
                         config.feature_channels, 3);
  for (int u = 0; u < config.residual_units; ++u) {
    p.units.push_back(AddResidualUnitParams(store, prefix + "/res" + std::to_string(u),
                                            config.feature_channels));
  }
  p.fc1 = AddDenseParams(store, prefix + "/ext/fc1", config.external_dim,
                         config.external_hidden);
  p.fc2 = AddDenseParams(store, prefix + "/ext/fc2", config.external_hidden,
                         config.feature_channels * config.height * config.width);
  return p;
}

Var NfeFlow(const GraphContext& ctx, const NfeParams& nfe, Var scaled_map) {
  const NfeConfig& c = nfe.config;
  const Shape expected{c.flow_channels, c.height, c.width};
  if (!(scaled_map.shape() == expected)) {
    throw ShapeError("nfe: flow map " + scaled_map.shape().ToString() + " but expected " +
                     expected.ToString());
  }
  for (double v : scaled_map.value().values()) {
    if (!(std::abs(v) <= 1.0 + kScaledSlack)) {
      throw ContractError("nfe: flow map value " + std::to_string(v) +
                          " lies outside [-1, 1]; scale maps before embedding");
    }
  }
  Var y = ApplyConv(ctx, nfe.stem, scaled_map);
  for (const ResidualUnitParams& unit : nfe.units) y = ResidualUnit(ctx, unit, y);
  return y;
}

Var NfeExternal(const GraphContext& ctx, const NfeParams& nfe, Var external) {
  const NfeConfig& c = nfe.config;
  if (!(external.shape() == Shape{c.external_dim})) {
    throw ShapeError("nfe: external vector " + external.shape().ToString() +
                     " but expected (" + std::to_string(c.external_dim) + ")");
  }
  Var y = Relu(ApplyDense(ctx, nfe.fc1, external));
  y = ApplyDense(ctx, nfe.fc2, y);
  return Reshape(y, Shape{c.feature_channels, c.height, c.width});
}

}  // namespace atfm
