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


#include <random>

#include <benchmark/benchmark.h>

#include "atfm/layers.h"
#include "atfm/ops.h"
#include "atfm/param_store.h"
#include "atfm/tape.h"
#include "atfm/train.h"

namespace atfm {
namespace {

Tensor Random(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// 3x3 "same" convolution; args: channels in, channels out, grid side.
void BM_Conv2d(benchmark::State& state) {
  const int64_t cin = state.range(0), cout = state.range(1), side = state.range(2);
  std::mt19937_64 rng(1);
  const Tensor x = Random(Shape{cin, side, side}, rng);
  const Tensor k = Random(Shape{cout, cin, 3, 3}, rng);
  const Tensor b = Random(Shape{cout}, rng);
  for (auto _ : state) {
    Tape tape;
    Var y = Conv2d(tape.Constant(x), tape.Constant(k), tape.Constant(b), 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * cout * side * side * cin * 9);
}
BENCHMARK(BM_Conv2d)->Args({32, 32, 8})->Args({32, 32, 16})->Args({64, 64, 32});

// One ConvLSTM step with backward; args: channels in, hidden, grid side.
void BM_ConvLstmStep(benchmark::State& state) {
  const int64_t cin = state.range(0), hid = state.range(1), side = state.range(2);
  ParamStore store;
  const ConvLstmParams p = AddConvLstmParams(store, "cell", cin, hid, side, side);
  train::XavierInit(store, 1);
  std::mt19937_64 rng(2);
  const Tensor x = Random(Shape{cin, side, side}, rng);
  const Tensor h = Random(Shape{hid, side, side}, rng);
  const Tensor c = Random(Shape{hid, side, side}, rng);
  for (auto _ : state) {
    Tape tape;
    GraphContext ctx{tape, store};
    const LstmState s =
        ConvLstmCell(ctx, p).Step(tape.Constant(x), {tape.Constant(h), tape.Constant(c)});
    tape.Backward(Sum(s.h));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ConvLstmStep)->Args({32, 32, 8})->Args({32, 32, 16});

}  // namespace
}  // namespace atfm

BENCHMARK_MAIN();
