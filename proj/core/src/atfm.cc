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

#include "atfm/atfm.h"

#include "atfm/error.h"

namespace atfm {

AtfmParams AddAtfmParams(ParamStore& store, const std::string& prefix,
                         int64_t in_channels, int64_t hidden_channels,
                         int64_t height, int64_t width) {
  AtfmParams p;
  p.lstm1 = AddConvLstmParams(store, prefix + "/lstm1", in_channels,
                              hidden_channels, height, width);
  p.attention_kernel =
      store.Add(prefix + "/attn/k", Shape{1, hidden_channels + in_channels, 1, 1},
                ParamKind::kWeight, hidden_channels + in_channels, 1);
  p.attention_bias = store.Add(prefix + "/attn/b", Shape{1}, ParamKind::kBias);
  p.lstm2 = AddConvLstmParams(store, prefix + "/lstm2", in_channels,
                              hidden_channels, height, width);
  return p;
}

Atfm::Atfm(const GraphContext& ctx, const AtfmParams& params)
    : ctx_(ctx),
      params_(params),
      first_(ctx, params.lstm1),
      second_(ctx, params.lstm2),
      attention_kernel_(ctx(params.attention_kernel)),
      attention_bias_(ctx(params.attention_bias)) {
  if (params.lstm1.in_channels != params.lstm2.in_channels ||
      params.lstm1.hidden_channels != params.lstm2.hidden_channels ||
      params.lstm1.height != params.lstm2.height ||
      params.lstm1.width != params.lstm2.width) {
    throw ShapeError("atfm: the two ConvLSTM units disagree on geometry");
  }
}

AtfmState Atfm::ZeroState() const {
  return {first_.ZeroState(), second_.ZeroState()};
}

AtfmStepResult Atfm::Step(Var x, const AtfmState& state) const {
  LstmState first = first_.Step(x, state.first);
  Var attention = Conv2d(ConcatChannels(first.h, x), attention_kernel_,
                         attention_bias_, 1, 0);
  LstmState second = second_.Step(BroadcastMulChannelwise(x, attention), state.second);
  return {{first, second}, attention};
}

AtfmEncoding Atfm::Encode(std::span<const Var> sequence) const {
  if (sequence.empty()) throw ArgumentError("atfm: cannot encode an empty sequence");
  AtfmState state = ZeroState();
  AtfmEncoding out;
  out.attention.reserve(sequence.size());
  for (const Var& x : sequence) {
    AtfmStepResult r = Step(x, state);
    state = r.state;
    out.attention.push_back(r.attention);
  }
  out.hidden = state.second.h;
  return out;
}

}  // namespace atfm
