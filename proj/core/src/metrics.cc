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

#include "atfm/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "atfm/error.h"

namespace atfm::metrics {
namespace {

using json = nlohmann::json;

json PairJson(const std::optional<ErrorPair>& e) {
  if (!e) return nullptr;
  return {{"rmse", e->rmse}, {"mae", e->mae}};
}

std::string FormatPair(const std::optional<ErrorPair>& e) {
  if (!e) return "      absent        absent";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%12.5f  %12.5f", e->rmse, e->mae);
  return buf;
}

void CheckPair(const std::optional<ErrorPair>& e, const std::string& what) {
  if (!e) return;
  if (!std::isfinite(e->rmse) || !std::isfinite(e->mae)) {
    throw NumericError(what + ": non-finite error");
  }
  // Rounding can put MAE a few ulps above RMSE when every error is equal.
  if (e->mae > e->rmse * (1.0 + 1e-12) + 1e-300) {
    throw NumericError(what + ": MAE exceeds RMSE");
  }
}

}  // namespace

RegionMask RegionMask::Full(int64_t rows, int64_t cols) {
  return {rows, cols, std::vector<bool>(static_cast<std::size_t>(rows * cols), true)};
}

int64_t RegionMask::count() const {
  return std::count(cells.begin(), cells.end(), true);
}

void ErrorAccumulator::Add(const Tensor& pred, const Tensor& target, const RegionMask* mask) {
  CheckSameShape(pred.shape(), target.shape(), "metrics");
  if (mask == nullptr) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - target[i];
      squared_ += d * d;
      absolute_ += std::abs(d);
    }
    count_ += static_cast<int64_t>(pred.size());
    return;
  }
  const int64_t plane = mask->rows * mask->cols;
  if (pred.shape().rank() != 3 || pred.shape().dim(1) != mask->rows ||
      pred.shape().dim(2) != mask->cols ||
      static_cast<int64_t>(mask->cells.size()) != plane) {
    throw ShapeError("metrics: mask " + std::to_string(mask->rows) + "x" +
                     std::to_string(mask->cols) + " does not fit map " +
                     pred.shape().ToString());
  }
  const int64_t selected = mask->count();
  if (selected == 0) throw ArgumentError("metrics: empty region mask");
  const int64_t channels = pred.shape().dim(0);
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t k = 0; k < plane; ++k) {
      if (!mask->cells[k]) continue;
      const std::size_t i = static_cast<std::size_t>(c * plane + k);
      const double d = pred[i] - target[i];
      squared_ += d * d;
      absolute_ += std::abs(d);
    }
  }
  count_ += channels * selected;
}

void ErrorAccumulator::Merge(const ErrorAccumulator& other) {
  squared_ += other.squared_;
  absolute_ += other.absolute_;
  count_ += other.count_;
}

std::optional<ErrorPair> ErrorAccumulator::Result() const {
  if (count_ == 0) return std::nullopt;
  const double n = static_cast<double>(count_);
  return ErrorPair{std::sqrt(squared_ / n), absolute_ / n};
}

ErrorPair RmseMae(std::span<const Tensor> preds, std::span<const Tensor> targets,
                  const RegionMask* mask) {
  if (preds.size() != targets.size()) {
    throw ShapeError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (preds.empty()) throw ArgumentError("metrics: no maps to evaluate");
  ErrorAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.Add(preds[i], targets[i], mask);
  if (acc.count() == 0) throw ArgumentError("metrics: maps hold no elements");
  return *acc.Result();
}

Tensor InverseScalePredictions(const Tensor& scaled, const Scaler& scaler) {
  Tensor out = scaler.Invert(scaled);
  for (double& v : out.values()) v = std::max(v, 0.0);
  return out;
}

RegionMask TopPMask(const data::FlowSeries& series, int64_t end_index, double percent) {
  if (!(percent > 0.0) || percent > 100.0) {
    throw ArgumentError("top-p percentage must lie in (0, 100]");
  }
  const int64_t rows = series.grid().rows, cols = series.grid().cols;
  const int64_t plane = rows * cols;
  std::vector<double> totals(static_cast<std::size_t>(plane), 0.0);
  int64_t maps = 0;
  for (int64_t i = 0; i < std::min(end_index, series.size()); ++i) {
    if (!series.has_flow(i)) continue;
    const Tensor& m = series.flow(i);
    for (int64_t k = 0; k < plane; ++k) totals[k] += m[k] + m[plane + k];
    ++maps;
  }
  if (maps == 0) throw StateError("top-p ranking needs at least one training map");
  // Totals over a common count rank identically to means.
  std::vector<int64_t> order(static_cast<std::size_t>(plane));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return totals[a] > totals[b]; });
  const auto keep = static_cast<int64_t>(
      std::ceil(percent * static_cast<double>(plane) / 100.0 - 1e-9));
  RegionMask mask{rows, cols, std::vector<bool>(static_cast<std::size_t>(plane), false)};
  for (int64_t r = 0; r < std::clamp<int64_t>(keep, 1, plane); ++r) mask.cells[order[r]] = true;
  return mask;
}

bool IsWeekend(const data::IntervalTime& t) { return t.weekday >= 5; }

bool IsDaytime(const data::IntervalTime& t) {
  return t.seconds_of_day >= 6 * 3600 && t.seconds_of_day < 18 * 3600;
}

SliceReport SliceMetrics(std::span<const Tensor> preds, std::span<const Tensor> targets,
                         std::span<const data::IntervalTime> times) {
  if (preds.size() != targets.size() || preds.size() != times.size()) {
    throw ShapeError("slice metrics: predictions, targets and timestamps differ in count");
  }
  ErrorAccumulator weekday, weekend, day, night;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    (IsWeekend(times[i]) ? weekend : weekday).Add(preds[i], targets[i]);
    (IsDaytime(times[i]) ? day : night).Add(preds[i], targets[i]);
  }
  return {weekday.Result(), weekend.Result(), day.Result(), night.Result()};
}

ErrorPair ApplyErrorRatio(ErrorPair errors, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ArgumentError("error ratio must be > 0");
  return {errors.rmse * ratio, errors.mae * ratio};
}

std::optional<Tensor> HaPredict(const data::FlowSeries& series, int64_t target,
                                std::string* diagnostic) {
  if (target < 0 || target >= series.size()) {
    throw ArgumentError("HA target " + std::to_string(target) + " outside the series");
  }
  const data::IntervalTime want = series.TimeOf(target);
  const int64_t week = 7 * series.intervals_per_day();
  std::optional<Tensor> sum;
  int64_t count = 0;
  // Same weekday and slot recur exactly one week apart on the interval axis.
  for (int64_t i = target - week; i >= 0; i -= week) {
    if (!series.has_flow(i)) continue;
    if (!sum) {
      sum = series.flow(i);
    } else {
      sum->Add(series.flow(i));
    }
    ++count;
  }
  if (!sum) {
    if (diagnostic != nullptr) {
      *diagnostic = "no history for interval " + std::to_string(target) + " (weekday " +
                    std::to_string(want.weekday) + ", slot " + std::to_string(want.slot) + ")";
    }
    return std::nullopt;
  }
  for (double& v : sum->values()) v /= static_cast<double>(count);
  return sum;
}

// ---------------------------------------------------------------------------

void EvalReport::CheckConsistency() const {
  if (samples <= 0) throw NumericError("report covers no samples");
  CheckPair(overall, "overall");
  CheckPair(slices.weekday, "weekday");
  CheckPair(slices.weekend, "weekend");
  CheckPair(slices.day, "day");
  CheckPair(slices.night, "night");
  for (const TopPEntry& e : top_p) CheckPair(e.errors, "top-" + std::to_string(e.percent));
  for (std::size_t i = 0; i < per_step.size(); ++i) {
    CheckPair(per_step[i], "step " + std::to_string(i + 1));
  }
}

std::string EvalReport::ToJson() const {
  json j;
  j["model"] = model;
  j["samples"] = samples;
  j["skipped"] = skipped;
  j["overall"] = PairJson(overall);
  j["slices"] = {{"weekday", PairJson(slices.weekday)},
                 {"weekend", PairJson(slices.weekend)},
                 {"day", PairJson(slices.day)},
                 {"night", PairJson(slices.night)}};
  j["top_p"] = json::array();
  for (const TopPEntry& e : top_p) {
    j["top_p"].push_back({{"percent", e.percent}, {"cells", e.cells},
                          {"rmse", e.errors.rmse}, {"mae", e.errors.mae}});
  }
  j["per_step"] = json::array();
  for (const ErrorPair& e : per_step) j["per_step"].push_back(PairJson(e));
  j["ratio_applied"] = ratio_applied;
  j["ratio"] = ratio;
  j["diagnostics"] = diagnostics;
  return j.dump(2) + "\n";
}

std::string EvalReport::ToText() const {
  std::string out;
  auto line = [&](const std::string& label, const std::optional<ErrorPair>& e) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%-12s", label.c_str());
    out += buf + FormatPair(e) + "\n";
  };
  out += "model " + model + ", " + std::to_string(samples) + " maps";
  if (skipped > 0) out += ", " + std::to_string(skipped) + " skipped";
  if (ratio_applied) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), ", errors scaled by %.4g", ratio);
    out += buf;
  }
  out += "\nslice               rmse           mae\n";
  line("overall", overall);
  line("weekday", slices.weekday);
  line("weekend", slices.weekend);
  line("day", slices.day);
  line("night", slices.night);
  for (const TopPEntry& e : top_p) line("top-" + std::to_string(e.percent) + "%", e.errors);
  for (std::size_t i = 0; i < per_step.size(); ++i) {
    line("step-" + std::to_string(i + 1), per_step[i]);
  }
  for (const std::string& d : diagnostics) out += "note: " + d + "\n";
  return out;
}

EvalReport BuildReport(const data::FlowSeries& series, std::span<const EvalItem> items,
                       const ReportOptions& options, std::string model) {
  if (items.empty()) throw ArgumentError("report needs at least one evaluated map");
  EvalReport report;
  report.model = std::move(model);
  report.samples = static_cast<int64_t>(items.size());

  ErrorAccumulator overall, weekday, weekend, day, night;
  std::vector<ErrorAccumulator> steps;
  for (const EvalItem& item : items) {
    overall.Add(item.prediction, item.truth);
    const data::IntervalTime t = series.TimeOf(item.target);
    (IsWeekend(t) ? weekend : weekday).Add(item.prediction, item.truth);
    (IsDaytime(t) ? day : night).Add(item.prediction, item.truth);
    if (item.step >= static_cast<int>(steps.size())) steps.resize(item.step + 1);
    steps[item.step].Add(item.prediction, item.truth);
  }
  report.overall = *overall.Result();
  report.slices = {weekday.Result(), weekend.Result(), day.Result(), night.Result()};
  for (const ErrorAccumulator& s : steps) report.per_step.push_back(s.Result().value_or(ErrorPair{}));

  if (options.train_end > 0) {
    for (int p : options.top_p_percents) {
      const RegionMask mask = TopPMask(series, options.train_end, p);
      ErrorAccumulator acc;
      for (const EvalItem& item : items) acc.Add(item.prediction, item.truth, &mask);
      report.top_p.push_back({p, mask.count(), *acc.Result()});
    }
  }
  if (options.error_ratio) {
    const double r = *options.error_ratio;
    report.ratio_applied = true;
    report.ratio = r;
    auto scale = [r](std::optional<ErrorPair>& e) {
      if (e) e = ApplyErrorRatio(*e, r);
    };
    report.overall = ApplyErrorRatio(report.overall, r);
    scale(report.slices.weekday);
    scale(report.slices.weekend);
    scale(report.slices.day);
    scale(report.slices.night);
    for (TopPEntry& e : report.top_p) e.errors = ApplyErrorRatio(e.errors, r);
    for (ErrorPair& e : report.per_step) e = ApplyErrorRatio(e, r);
  }
  report.CheckConsistency();
  return report;
}

std::vector<EvalItem> PredictSamples(const Forecaster& forecaster, const ParamStore& params,
                                     const data::FlowSeries& series,
                                     std::span<const data::Sample> samples,
                                     const Scaler& flow_scaler) {
  std::vector<EvalItem> items;
  for (const data::Sample& s : samples) {
    const Forecast f = forecaster.Predict(params, data::AssembleInput(series, s, flow_scaler));
    for (std::size_t k = 0; k < s.targets.size(); ++k) {
      items.push_back({s.targets[k], static_cast<int>(k),
                       InverseScalePredictions(f.predictions[k], flow_scaler),
                       series.flow(s.targets[k])});
    }
  }
  return items;
}

std::vector<EvalItem> HaSamples(const data::FlowSeries& series,
                                std::span<const data::Sample> samples, int64_t* skipped,
                                std::vector<std::string>* diagnostics) {
  std::vector<EvalItem> items;
  int64_t missing = 0;
  for (const data::Sample& s : samples) {
    for (std::size_t k = 0; k < s.targets.size(); ++k) {
      std::string why;
      auto pred = HaPredict(series, s.targets[k], &why);
      if (!pred) {
        ++missing;
        if (diagnostics != nullptr) diagnostics->push_back(why);
        continue;
      }
      items.push_back({s.targets[k], static_cast<int>(k), std::move(*pred),
                       series.flow(s.targets[k])});
    }
  }
  if (skipped != nullptr) *skipped = missing;
  return items;
}

std::string IntervalErrorsCsv(const data::FlowSeries& series, std::span<const EvalItem> items) {
  std::string out = "target,step,day,slot,weekday,rmse,mae,pre_hour_rmse,pre_day_rmse\n";
  auto baseline = [&](int64_t index, int64_t reference) -> std::string {
    if (reference < 0 || !series.has_flow(reference) || !series.has_flow(index)) return "";
    ErrorAccumulator acc;
    acc.Add(series.flow(reference), series.flow(index));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", acc.Result()->rmse);
    return buf;
  };
  for (const EvalItem& item : items) {
    ErrorAccumulator acc;
    acc.Add(item.prediction, item.truth);
    const ErrorPair e = *acc.Result();
    const data::IntervalTime t = series.TimeOf(item.target);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%d,%lld,%lld,%d,%.9g,%.9g,",
                  static_cast<long long>(item.target), item.step + 1,
                  static_cast<long long>(t.day), static_cast<long long>(t.slot), t.weekday,
                  e.rmse, e.mae);
    out += buf;
    out += baseline(item.target, item.target - 1) + "," +
           baseline(item.target, item.target - series.intervals_per_day()) + "\n";
  }
  return out;
}

}  // namespace atfm::metrics
