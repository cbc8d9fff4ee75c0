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

// Trip records to gridded flow maps, external-factor encoding, sample
// enumeration and synthetic series.

#ifndef ATFM_DATA_H_
#define ATFM_DATA_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atfm/models.h"
#include "atfm/scaler.h"
#include "atfm/tensor.h"

namespace atfm::data {

struct TripRecord {
  int64_t pickup_time = 0;  // UTC seconds
  double pickup_lat = 0.0;
  double pickup_lon = 0.0;
  int64_t dropoff_time = 0;
  double dropoff_lat = 0.0;
  double dropoff_lon = 0.0;
};

// Region partition plus the time axis of a series. Intervals are counted from
// `epoch_start`, which must fall on a local midnight so that (day, slot)
// indexing follows the local calendar.
struct GridSpec {
  double lat_min = 0.0;
  double lat_max = 1.0;
  double lon_min = 0.0;
  double lon_max = 1.0;
  int64_t rows = 1;
  int64_t cols = 1;
  int64_t interval_seconds = 1800;
  int64_t epoch_start = 0;
  int64_t days = 1;
  int64_t utc_offset_seconds = 0;

  int64_t intervals_per_day() const { return 86400 / interval_seconds; }
  int64_t num_intervals() const { return days * intervals_per_day(); }
  // Throws ArgumentError when any invariant fails.
  void Validate() const;
};

struct Cell {
  int64_t row = 0;
  int64_t col = 0;
  friend bool operator==(Cell a, Cell b) { return a.row == b.row && a.col == b.col; }
};

// Half-open binning on both axes; row 0 holds lat_min and col 0 holds lon_min.
// Points on the max edge belong to the last cell; points outside the box
// yield nullopt.
std::optional<Cell> LocateCell(double lat, double lon, const GridSpec& grid);

// Lower edge of row `k` (k == rows gives lat_max); likewise for columns.
double RowEdge(const GridSpec& grid, int64_t k);
double ColEdge(const GridSpec& grid, int64_t k);

// Calendar position of a global interval index.
struct IntervalTime {
  int64_t day = 0;    // days since epoch_start
  int64_t slot = 0;   // interval within the day
  int weekday = 0;    // 0 = Monday .. 6 = Sunday, local time
  int64_t seconds_of_day = 0;  // local time of the interval start
};

// ---------------------------------------------------------------------------
// External factors.

struct ExternalRecord {
  int64_t interval_start = 0;  // UTC seconds
  std::string weather;
  std::string holiday;
  double temperature = 0.0;
  double wind_speed = 0.0;
};

// One-hot weather block, one-hot holiday block, then temperature and wind
// speed scaled into [0, 1].
class ExternalEncoder {
 public:
  ExternalEncoder() = default;
  ExternalEncoder(std::vector<std::string> weather_vocab,
                  std::vector<std::string> holiday_vocab, Scaler temperature,
                  Scaler wind_speed);

  // Vocabularies are the sorted distinct labels; scalers span the observed
  // ranges.
  static ExternalEncoder Fit(std::span<const ExternalRecord> records);

  bool fitted() const { return temperature_.fitted(); }
  int64_t dim() const;
  const std::vector<std::string>& weather_vocab() const { return weather_; }
  const std::vector<std::string>& holiday_vocab() const { return holiday_; }
  const Scaler& temperature_scaler() const { return temperature_; }
  const Scaler& wind_scaler() const { return wind_; }

  // Unknown labels give an all-zero block. Scalars outside the fitted range
  // are clamped into [0, 1] and counted in `clamped` when non-null.
  Tensor Encode(std::string_view weather, std::string_view holiday,
                double temperature, double wind_speed,
                std::size_t* clamped = nullptr) const;

  // FNV-1a over both vocabularies, used to detect mismatched checkpoints.
  uint64_t VocabularyHash() const;

 private:
  std::vector<std::string> weather_;
  std::vector<std::string> holiday_;
  Scaler temperature_;
  Scaler wind_;
};

// ---------------------------------------------------------------------------
// Series.

// Inflow/outflow maps and encoded externals per interval. A missing map or
// vector marks a gap.
class FlowSeries {
 public:
  FlowSeries() = default;
  explicit FlowSeries(GridSpec grid);

  const GridSpec& grid() const { return grid_; }
  int64_t size() const { return static_cast<int64_t>(flows_.size()); }
  int64_t intervals_per_day() const { return grid_.intervals_per_day(); }

  int64_t Index(int64_t day, int64_t slot) const;
  IntervalTime TimeOf(int64_t index) const;
  // UTC start time of an interval.
  int64_t StartTime(int64_t index) const;
  // Interval containing a UTC time, or nullopt outside the series.
  std::optional<int64_t> IndexOfTime(int64_t utc_seconds) const;

  bool has_flow(int64_t index) const { return flows_[index].has_value(); }
  bool has_external(int64_t index) const { return externals_[index].has_value(); }
  const Tensor& flow(int64_t index) const;       // [2, rows, cols]
  const Tensor& external(int64_t index) const;   // [dE]
  void SetFlow(int64_t index, Tensor map);
  void ClearFlow(int64_t index) { flows_[index].reset(); }
  void SetExternal(int64_t index, Tensor vector);
  void ClearExternal(int64_t index) { externals_[index].reset(); }

  int64_t external_dim() const { return encoder_.fitted() ? encoder_.dim() : 0; }
  const ExternalEncoder& encoder() const { return encoder_; }
  void set_encoder(ExternalEncoder encoder) { encoder_ = std::move(encoder); }

  int64_t CountFlowGaps() const;
  int64_t CountExternalGaps() const;

 private:
  void CheckIndex(int64_t index) const;

  GridSpec grid_;
  std::vector<std::optional<Tensor>> flows_;
  std::vector<std::optional<Tensor>> externals_;
  ExternalEncoder encoder_;
};

struct IngestionSummary {
  int64_t trips_total = 0;
  int64_t trips_malformed = 0;
  int64_t pickups_counted = 0;
  int64_t dropoffs_counted = 0;
  int64_t pickups_outside = 0;
  int64_t dropoffs_outside = 0;
  int64_t external_rows = 0;
  int64_t external_rows_outside = 0;
  int64_t external_clamped = 0;
  int64_t external_gaps = 0;
};

// Counts each pickup as outflow and each dropoff as inflow at the interval of
// the event. Endpoints outside the box or the time range are dropped
// individually; malformed records (dropoff before pickup, non-finite
// coordinates) are skipped whole.
FlowSeries BuildFlowSeries(std::span<const TripRecord> trips, const GridSpec& grid,
                           IngestionSummary* summary = nullptr);

// Fits an encoder on `records` and attaches one encoded vector per interval
// that has a row.
void AttachExternals(FlowSeries& series, std::span<const ExternalRecord> records,
                     IngestionSummary* summary = nullptr);

// ---------------------------------------------------------------------------
// Samples.

struct Sample {
  std::vector<int64_t> sequential;             // t-n+1 .. t on day d
  std::vector<std::vector<int64_t>> periodic;  // per step i: slot t+i on days d-m .. d-1
  std::vector<int64_t> targets;                // t+1 .. t+horizon on day d
};

struct SampleSet {
  std::vector<Sample> samples;
  int64_t skipped_for_gaps = 0;
  std::string diagnostic;
};

// Every target whose windows lie inside the series and whose referenced maps
// (and input external vectors) are present.
SampleSet EnumerateSamples(const FlowSeries& series, int seq_len, int periodic_len,
                           int horizon);

// Network input for one sample: flow maps scaled with `flow_scaler` and
// clipped into [-1, 1], plus external vectors.
SpnInput AssembleInput(const FlowSeries& series, const Sample& sample,
                       const Scaler& flow_scaler);
// Scaled, unclipped target maps.
std::vector<Tensor> AssembleTargets(const FlowSeries& series, const Sample& sample,
                                    const Scaler& flow_scaler);

// Fits a [-1, 1] scaler on all present maps with index < `end_index`.
Scaler FitFlowScaler(const FlowSeries& series, int64_t end_index);

// ---------------------------------------------------------------------------
// Synthetic data.

struct SynthConfig {
  int64_t rows = 8;
  int64_t cols = 8;
  int64_t days = 30;
  int64_t intervals_per_day = 48;
  int64_t epoch_start = 1704067200;  // 2024-01-01 00:00 UTC, a Monday
  double base = 40.0;
  double amplitude = 25.0;
  double ar_coefficient = 0.9;
  double ar_scale = 4.0;  // innovation standard deviation
  double noise = 1.0;
  double weekend_factor = 1.0;
  double rain_factor = 1.0;
};

// base + daily sinusoid + AR(1) + noise per cell and channel, rounded to
// non-negative integers, with a periodic weather/holiday schedule encoded as
// externals. Deterministic per seed.
FlowSeries SynthGenerate(const SynthConfig& config, uint64_t seed);

// ---------------------------------------------------------------------------
// File formats.

struct TripParseResult {
  std::vector<TripRecord> trips;
  std::vector<int64_t> bad_lines;  // 1-based line numbers
  int64_t rows = 0;
};

// `pickup_time,pickup_lat,pickup_lon,dropoff_time,dropoff_lat,dropoff_lon`;
// times in ISO-8601 UTC or integer epoch seconds.
TripParseResult ReadTripsCsv(const std::filesystem::path& path);
TripParseResult ParseTripsCsv(std::string_view text);

struct ExternalParseResult {
  std::vector<ExternalRecord> records;
  std::vector<int64_t> bad_lines;
  int64_t rows = 0;
};

// `interval_start,weather,holiday,temperature,wind_speed`.
ExternalParseResult ReadExternalsCsv(const std::filesystem::path& path);
ExternalParseResult ParseExternalsCsv(std::string_view text);

// ISO-8601 ("2016-01-01T00:30:00Z", "2016-01-01 00:30:00") or epoch seconds.
std::optional<int64_t> ParseTimestamp(std::string_view text);

// Series container ("flow" [T,2,H,W], "external" [T,dE]) plus a JSON sidecar
// at `path` + ".json" with the grid, gap bitmaps and encoder statistics.
void SaveSeries(const FlowSeries& series, const std::filesystem::path& path);
FlowSeries LoadSeries(const std::filesystem::path& path);

std::filesystem::path SidecarPath(const std::filesystem::path& path);

}  // namespace atfm::data

#endif  // ATFM_DATA_H_
