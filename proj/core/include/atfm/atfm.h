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

// Attentive Traffic Flow Machine: two progressive ConvLSTMs bridged by a
// spatial attention map.
//
// At each step the first ConvLSTM consumes the normal feature X. A 1x1
// convolution over [H1, X] yields a single-channel map W (no output
// nonlinearity). The second ConvLSTM consumes X reweighted by W, broadcast
// across channels. The final hidden state of the second unit summarizes the
// sequence.

#ifndef ATFM_ATFM_H_
#define ATFM_ATFM_H_

#include <span>
#include <string>
#include <vector>

#include "atfm/layers.h"

namespace atfm {

struct AtfmParams {
  ConvLstmParams lstm1;
  ConvLstmParams lstm2;
  // [1, hidden + in, 1, 1] and [1].
  ParamId attention_kernel;
  ParamId attention_bias;
};

AtfmParams AddAtfmParams(ParamStore& store, const std::string& prefix,
                         int64_t in_channels, int64_t hidden_channels,
                         int64_t height, int64_t width);

struct AtfmState {
  LstmState first;
  LstmState second;
};

struct AtfmStepResult {
  AtfmState state;
  Var attention;  // [1, H, W]
};

// Final hidden state of the second ConvLSTM plus one attention map per input.
struct AtfmEncoding {
  Var hidden;
  std::vector<Var> attention;
};

class Atfm {
 public:
  Atfm(const GraphContext& ctx, const AtfmParams& params);

  AtfmState ZeroState() const;
  AtfmStepResult Step(Var x, const AtfmState& state) const;
  // Left fold of Step over `sequence` from the zero state. Throws
  // ArgumentError on an empty sequence.
  AtfmEncoding Encode(std::span<const Var> sequence) const;

 private:
  GraphContext ctx_;
  AtfmParams params_;
  ConvLstmCell first_;
  ConvLstmCell second_;
  Var attention_kernel_;
  Var attention_bias_;
};

}  // namespace atfm

#endif  // ATFM_ATFM_H_
