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

// Error metrics in original flow units, evaluation slices, and the
// historical-average reference predictor.

#ifndef ATFM_METRICS_H_
#define ATFM_METRICS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atfm/data.h"
#include "atfm/models.h"
#include "atfm/param_store.h"
#include "atfm/scaler.h"
#include "atfm/tensor.h"

namespace atfm::metrics {

struct ErrorPair {
  double rmse = 0.0;
  double mae = 0.0;
};

// Cells of an h x w grid, row-major. Applies to both flow channels.
struct RegionMask {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<bool> cells;

  static RegionMask Full(int64_t rows, int64_t cols);
  int64_t count() const;
};

// Running sums of squared and absolute errors.
class ErrorAccumulator {
 public:
  // Throws ShapeError on mismatched maps or a mask of the wrong extent and
  // ArgumentError on an empty mask.
  void Add(const Tensor& pred, const Tensor& target, const RegionMask* mask = nullptr);
  void Merge(const ErrorAccumulator& other);

  int64_t count() const { return count_; }
  // nullopt when nothing was added.
  std::optional<ErrorPair> Result() const;

 private:
  double squared_ = 0.0;
  double absolute_ = 0.0;
  int64_t count_ = 0;
};

// RMSE and MAE over every (masked) element of every pair. Throws
// ArgumentError on empty input or an empty mask.
ErrorPair RmseMae(std::span<const Tensor> preds, std::span<const Tensor> targets,
                  const RegionMask* mask = nullptr);

// Inverse min-max scaling followed by a floor at zero.
Tensor InverseScalePredictions(const Tensor& scaled, const Scaler& scaler);

// The ceil(p*h*w/100) cells with the highest mean inflow+outflow over the
// present maps with index < `end_index`; ties go to the lower row-major
// index. Throws ArgumentError unless 0 < p <= 100 and StateError when no map
// precedes `end_index`.
RegionMask TopPMask(const data::FlowSeries& series, int64_t end_index, double percent);

// Error per slice; a slice without samples is nullopt.
struct SliceReport {
  std::optional<ErrorPair> weekday;  // Mon..Fri
  std::optional<ErrorPair> weekend;  // Sat, Sun
  std::optional<ErrorPair> day;      // [06:00, 18:00) local
  std::optional<ErrorPair> night;
};

bool IsWeekend(const data::IntervalTime& t);
bool IsDaytime(const data::IntervalTime& t);

SliceReport SliceMetrics(std::span<const Tensor> preds, std::span<const Tensor> targets,
                         std::span<const data::IntervalTime> times);

// Multiplies both errors by `ratio`. Throws ArgumentError unless ratio > 0.
ErrorPair ApplyErrorRatio(ErrorPair errors, double ratio);

// Per-cell mean of all earlier maps at the same weekday and slot, or nullopt
// (with a reason in `diagnostic`) when there is no such map.
std::optional<Tensor> HaPredict(const data::FlowSeries& series, int64_t target,
                                std::string* diagnostic = nullptr);

// ---------------------------------------------------------------------------
// Reports.

struct EvalItem {
  int64_t target = 0;  // interval index of the ground truth
  int step = 0;        // horizon step, 0-based
  Tensor prediction;   // flow units
  Tensor truth;        // flow units
};

struct TopPEntry {
  int percent = 0;
  int64_t cells = 0;
  ErrorPair errors;
};

struct EvalReport {
  std::string model;
  int64_t samples = 0;  // z, evaluated maps
  ErrorPair overall;
  SliceReport slices;
  std::vector<TopPEntry> top_p;
  std::vector<ErrorPair> per_step;  // one entry per horizon step
  bool ratio_applied = false;
  double ratio = 1.0;
  int64_t skipped = 0;
  std::vector<std::string> diagnostics;

  // Throws NumericError when any slice has MAE > RMSE or a non-finite value.
  void CheckConsistency() const;
  std::string ToJson() const;
  std::string ToText() const;
};

struct ReportOptions {
  // Ranking window for the top-p masks: maps with index < train_end.
  int64_t train_end = 0;
  std::vector<int> top_p_percents = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::optional<double> error_ratio;
};

// Throws ArgumentError when `items` is empty.
EvalReport BuildReport(const data::FlowSeries& series, std::span<const EvalItem> items,
                       const ReportOptions& options, std::string model);

// Runs `forecaster` on every sample and pairs inverse-scaled predictions with
// the unscaled ground truth.
std::vector<EvalItem> PredictSamples(const Forecaster& forecaster, const ParamStore& params,
                                     const data::FlowSeries& series,
                                     std::span<const data::Sample> samples,
                                     const Scaler& flow_scaler);

// HA predictions for the targets of `samples`; targets without history are
// counted in `skipped`.
std::vector<EvalItem> HaSamples(const data::FlowSeries& series,
                                std::span<const data::Sample> samples, int64_t* skipped,
                                std::vector<std::string>* diagnostics = nullptr);

// One row per evaluated map: its errors plus the Pre-Hour error (previous
// interval as the forecast) and Pre-Day error (same slot one day earlier).
std::string IntervalErrorsCsv(const data::FlowSeries& series, std::span<const EvalItem> items);

}  // namespace atfm::metrics

#endif  // ATFM_METRICS_H_
