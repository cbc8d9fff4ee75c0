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

#ifndef ATFM_TESTS_UNIT_TEST_UTIL_H_
#define ATFM_TESTS_UNIT_TEST_UTIL_H_

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atfm/ops.h"
#include "atfm/tape.h"
#include "oracles.h"

namespace atfm::testing {

using OpFn = std::function<Var(std::span<const Var>)>;

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
// entry of every input, for the scalar sum(w . f(inputs)) with a random w.
inline double MaxGradientError(const OpFn& f, const std::vector<Tensor>& inputs,
                               uint64_t seed = 7, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.Variable(t));
    Var out = f(vars);
    weights = oracle::RandomTensor(out.shape(), rng);
    Var loss = Sum(Hadamard(out, tape.Constant(weights)));
    tape.Backward(loss);
    for (const Var& v : vars) {
      const Tensor& g = tape.grad(v);
      analytic.push_back(g.empty() ? Tensor(v.shape()) : g);
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto eval = [&](const Tensor& xi) {
      Tape tape;
      std::vector<Var> vars;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vars.push_back(tape.Variable(j == i ? xi : inputs[j]));
      }
      return Sum(Hadamard(f(vars), tape.Constant(weights))).value()[0];
    };
    const Tensor numeric = oracle::NumericGradient(eval, inputs[i], step);
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      const double a = analytic[i][k], n = numeric[k];
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
    }
  }
  return worst;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("atfm-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace atfm::testing

#endif  // ATFM_TESTS_UNIT_TEST_UTIL_H_
