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

#include "atfm/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "atfm/ops.h"
#include "atfm/train.h"

namespace atfm {
namespace {

std::string GroupOf(const std::string& name) {
  const auto slash = name.rfind('/');
  return slash == std::string::npos ? name : name.substr(0, slash);
}

struct TracedLoss {
  double value = 0.0;
  std::vector<bool> pattern;
};

TracedLoss EvalTraced(const ParamStore& params, const LossBuilder& loss) {
  ActivationTrace trace;
  Tape tape;
  GraphContext ctx{tape, params};
  const double value = loss(ctx).value()[0];
  return {value, trace.pattern()};
}

}  // namespace

double RelativeError(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::ToText() const {
  std::string out = "group                            checked  kinks    max rel err  status\n";
  char buf[160];
  for (const GradCheckGroup& g : groups) {
    std::snprintf(buf, sizeof(buf), "%-32s %7lld %6lld  %13.3e  %s\n", g.name.c_str(),
                  static_cast<long long>(g.checked), static_cast<long long>(g.kinks),
                  g.max_relative_error,
                  g.passed ? "ok" : ("FAIL at " + g.worst_entry).c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "overall: %lld entries (%lld skipped at ReLU kinks), max relative error %.3e, %s\n",
                static_cast<long long>(checked), static_cast<long long>(kinks), max_relative_error,
                passed ? "passed" : "FAILED");
  out += buf;
  return out;
}

GradCheckReport CheckGradients(ParamStore& params, const LossBuilder& loss,
                               const GradCheckOptions& options) {
  Gradients analytic = params.MakeGradients();
  {
    Tape tape;
    GraphContext ctx{tape, params};
    Var out = loss(ctx);
    tape.Backward(out);
    tape.AccumulateParamGrads(analytic);
  }

  const TracedLoss base = EvalTraced(params, loss);
  std::mt19937_64 rng(options.seed);
  std::map<std::string, GradCheckGroup> groups;
  std::vector<std::string> group_order;
  GradCheckReport report;

  for (std::size_t p = 0; p < params.size(); ++p) {
    const ParamId id{p};
    const Tensor& g = analytic[id];
    const std::size_t n = g.size();
    const bool exhaustive = options.samples_per_param <= 0 ||
                            n <= static_cast<std::size_t>(options.samples_per_param) + 1;
    const std::size_t wanted =
        exhaustive ? n : static_cast<std::size_t>(options.samples_per_param) + 1;
    std::vector<std::size_t> queue;
    std::set<std::size_t> tried;
    if (exhaustive) {
      for (std::size_t k = 0; k < n; ++k) queue.push_back(k);
    } else {
      std::size_t largest = 0;
      for (std::size_t k = 1; k < n; ++k) {
        if (std::abs(g[k]) > std::abs(g[largest])) largest = k;
      }
      queue.push_back(largest);
    }
    std::uniform_int_distribution<std::size_t> pick(0, n == 0 ? 0 : n - 1);

    const std::string group_name = GroupOf(params.name(id));
    auto [it, inserted] = groups.try_emplace(group_name);
    if (inserted) {
      it->second.name = group_name;
      group_order.push_back(group_name);
    }
    GradCheckGroup& group = it->second;

    std::size_t compared = 0;
    // Random draws beyond the wanted count cover entries lost to kinks.
    for (std::size_t attempts = 0; compared < wanted && attempts < 4 * wanted + 16; ++attempts) {
      std::size_t k;
      if (!queue.empty()) {
        k = queue.back();
        queue.pop_back();
      } else if (exhaustive) {
        break;
      } else {
        k = pick(rng);
      }
      if (!tried.insert(k).second) continue;
      double& w = params.mutable_value(id)[k];
      const double saved = w;
      w = saved + options.step;
      const TracedLoss plus = EvalTraced(params, loss);
      w = saved - options.step;
      const TracedLoss minus = EvalTraced(params, loss);
      w = saved;
      if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
        ++group.kinks;
        ++report.kinks;
        continue;
      }
      ++compared;
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double err = RelativeError(g[k], numeric, options.denominator_floor);
      ++group.checked;
      ++report.checked;
      if (err > group.max_relative_error || std::isnan(err)) {
        group.max_relative_error = err;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s[%zu] analytic=%.6e numeric=%.6e",
                      params.name(id).c_str(), k, g[k], numeric);
        group.worst_entry = buf;
      }
      if (!(err <= options.tolerance)) group.passed = false;
    }
  }
  for (const std::string& name : group_order) {
    const GradCheckGroup& g = groups[name];
    report.max_relative_error = std::max(report.max_relative_error, g.max_relative_error);
    report.passed = report.passed && g.passed;
    report.groups.push_back(g);
  }
  return report;
}

GradCheckReport CheckForecasterGradients(const SpnConfig& config, uint64_t seed,
                                         const GradCheckOptions& options) {
  ParamStore params;
  std::unique_ptr<Forecaster> model = MakeForecaster(params, config);
  train::XavierInit(params, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  std::uniform_real_distribution<double> signed_unit(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.spec(ParamId{i}).kind == ParamKind::kWeight) continue;
    for (double& v : params.mutable_value(ParamId{i}).values()) v = small(rng);
  }

  auto interval = [&] {
    Tensor flow(Shape{config.flow_channels, config.height, config.width});
    for (double& v : flow.values()) v = signed_unit(rng);
    Tensor ext(Shape{config.external_dim});
    for (double& v : ext.values()) v = unit(rng);
    return IntervalInput{std::move(flow), std::move(ext)};
  };
  SpnInput input;
  for (int k = 0; k < config.seq_len; ++k) input.sequential.push_back(interval());
  std::vector<Tensor> targets;
  for (int s = 0; s < config.horizon; ++s) {
    auto& set = input.periodic.emplace_back();
    for (int k = 0; k < config.periodic_len; ++k) set.push_back(interval());
    Tensor t(Shape{config.flow_channels, config.height, config.width});
    for (double& v : t.values()) v = signed_unit(rng);
    targets.push_back(std::move(t));
  }

  const Forecaster& m = *model;
  return CheckGradients(
      params,
      [&](const GraphContext& ctx) {
        ForecastGraph g = m.Forward(ctx, input);
        return train::EuclideanLoss(ctx, g.predictions, targets);
      },
      options);
}

}  // namespace atfm
