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

#include "atfm/data.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#include "atfm/container.h"
#include "atfm/error.h"

namespace atfm::data {
namespace {

using json = nlohmann::json;

int64_t FloorDiv(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Index k in [0, n) with edge(k) <= v < edge(k + 1); v == edge(n) maps to n-1.
// The arithmetic guess is corrected against the edges so the result agrees
// with a scan over the same edges.
template <typename EdgeFn>
std::optional<int64_t> Bin(double v, double lo, double hi, int64_t n, EdgeFn edge) {
  if (!(v >= lo) || !(v <= hi)) return std::nullopt;
  if (v == hi) return n - 1;
  int64_t k = static_cast<int64_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(n)));
  k = std::clamp<int64_t>(k, 0, n - 1);
  while (k > 0 && v < edge(k)) --k;
  while (k < n - 1 && v >= edge(k + 1)) ++k;
  return k;
}

std::vector<std::string_view> SplitCsvLine(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                         : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return fields;
}

std::optional<double> ParseDouble(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

template <typename Row>
void ForEachDataLine(std::string_view text, std::string_view expected_header, Row row) {
  std::size_t pos = 0;
  int64_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos
                                                                          : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      std::string h(line);
      h.erase(std::remove(h.begin(), h.end(), ' '), h.end());
      if (h != expected_header) {
        throw DataError("unexpected CSV header '" + std::string(line) + "', expected '" +
                        std::string(expected_header) + "'");
      }
      continue;
    }
    row(line_no, line);
  }
}

uint64_t Fnv1a(uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

void GridSpec::Validate() const {
  if (rows < 1 || cols < 1) throw ArgumentError("grid needs at least one row and column");
  if (!(lat_max > lat_min) || !(lon_max > lon_min)) {
    throw ArgumentError("grid bounding box must have lat_max > lat_min and lon_max > lon_min");
  }
  if (interval_seconds <= 0 || 86400 % interval_seconds != 0) {
    throw ArgumentError("interval length must be positive and divide one day");
  }
  if (days < 1) throw ArgumentError("series must span at least one day");
  if ((epoch_start + utc_offset_seconds) % 86400 != 0) {
    throw ArgumentError("series start must fall on a local midnight");
  }
}

double RowEdge(const GridSpec& grid, int64_t k) {
  if (k == grid.rows) return grid.lat_max;
  return grid.lat_min + (grid.lat_max - grid.lat_min) * static_cast<double>(k) /
                            static_cast<double>(grid.rows);
}

double ColEdge(const GridSpec& grid, int64_t k) {
  if (k == grid.cols) return grid.lon_max;
  return grid.lon_min + (grid.lon_max - grid.lon_min) * static_cast<double>(k) /
                            static_cast<double>(grid.cols);
}

std::optional<Cell> LocateCell(double lat, double lon, const GridSpec& grid) {
  auto row = Bin(lat, grid.lat_min, grid.lat_max, grid.rows,
                 [&](int64_t k) { return RowEdge(grid, k); });
  if (!row) return std::nullopt;
  auto col = Bin(lon, grid.lon_min, grid.lon_max, grid.cols,
                 [&](int64_t k) { return ColEdge(grid, k); });
  if (!col) return std::nullopt;
  return Cell{*row, *col};
}

// ---------------------------------------------------------------------------

ExternalEncoder::ExternalEncoder(std::vector<std::string> weather_vocab,
                                 std::vector<std::string> holiday_vocab,
                                 Scaler temperature, Scaler wind_speed)
    : weather_(std::move(weather_vocab)),
      holiday_(std::move(holiday_vocab)),
      temperature_(temperature),
      wind_(wind_speed) {
  if (!temperature_.fitted() || !wind_.fitted()) {
    throw StateError("external encoder requires fitted meteorology scalers");
  }
}

ExternalEncoder ExternalEncoder::Fit(std::span<const ExternalRecord> records) {
  if (records.empty()) throw DataError("cannot fit an external encoder without records");
  std::set<std::string> weather, holiday;
  std::vector<double> temps, winds;
  for (const ExternalRecord& r : records) {
    weather.insert(r.weather);
    holiday.insert(r.holiday);
    temps.push_back(r.temperature);
    winds.push_back(r.wind_speed);
  }
  return ExternalEncoder({weather.begin(), weather.end()}, {holiday.begin(), holiday.end()},
                         Scaler::Fit(temps, 0.0, 1.0), Scaler::Fit(winds, 0.0, 1.0));
}

int64_t ExternalEncoder::dim() const {
  return static_cast<int64_t>(weather_.size() + holiday_.size()) + 2;
}

Tensor ExternalEncoder::Encode(std::string_view weather, std::string_view holiday,
                               double temperature, double wind_speed,
                               std::size_t* clamped) const {
  if (!fitted()) throw StateError("external encoder used before fitting");
  Tensor out(Shape{dim()});
  auto w = std::lower_bound(weather_.begin(), weather_.end(), weather);
  if (w != weather_.end() && *w == weather) out[static_cast<std::size_t>(w - weather_.begin())] = 1.0;
  const std::size_t hol_base = weather_.size();
  auto h = std::lower_bound(holiday_.begin(), holiday_.end(), holiday);
  if (h != holiday_.end() && *h == holiday) {
    out[hol_base + static_cast<std::size_t>(h - holiday_.begin())] = 1.0;
  }
  auto scale = [&](const Scaler& s, double v) {
    double y = s.Apply(v);
    if (y < 0.0 || y > 1.0) {
      if (clamped != nullptr) ++*clamped;
      y = std::clamp(y, 0.0, 1.0);
    }
    return y;
  };
  const std::size_t n = out.size();
  out[n - 2] = scale(temperature_, temperature);
  out[n - 1] = scale(wind_, wind_speed);
  return out;
}

uint64_t ExternalEncoder::VocabularyHash() const {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& s : weather_) h = Fnv1a(Fnv1a(h, s), std::string_view("\x1f", 1));
  h = Fnv1a(h, std::string_view("\x1e", 1));
  for (const auto& s : holiday_) h = Fnv1a(Fnv1a(h, s), std::string_view("\x1f", 1));
  return h;
}

// ---------------------------------------------------------------------------

FlowSeries::FlowSeries(GridSpec grid) : grid_(grid) {
  grid_.Validate();
  flows_.resize(static_cast<std::size_t>(grid_.num_intervals()));
  externals_.resize(flows_.size());
}

void FlowSeries::CheckIndex(int64_t index) const {
  if (index < 0 || index >= size()) {
    throw ArgumentError("interval " + std::to_string(index) + " outside series of " +
                        std::to_string(size()));
  }
}

int64_t FlowSeries::Index(int64_t day, int64_t slot) const {
  return day * intervals_per_day() + slot;
}

IntervalTime FlowSeries::TimeOf(int64_t index) const {
  IntervalTime t;
  t.day = FloorDiv(index, intervals_per_day());
  t.slot = index - t.day * intervals_per_day();
  const int64_t local = StartTime(index) + grid_.utc_offset_seconds;
  const int64_t days_since_1970 = FloorDiv(local, 86400);
  // 1970-01-01 was a Thursday (weekday 3 with Monday = 0).
  t.weekday = static_cast<int>(((days_since_1970 + 3) % 7 + 7) % 7);
  t.seconds_of_day = local - days_since_1970 * 86400;
  return t;
}

int64_t FlowSeries::StartTime(int64_t index) const {
  return grid_.epoch_start + index * grid_.interval_seconds;
}

std::optional<int64_t> FlowSeries::IndexOfTime(int64_t utc_seconds) const {
  const int64_t offset = utc_seconds - grid_.epoch_start;
  if (offset < 0) return std::nullopt;
  const int64_t index = offset / grid_.interval_seconds;
  if (index >= size()) return std::nullopt;
  return index;
}

const Tensor& FlowSeries::flow(int64_t index) const {
  CheckIndex(index);
  if (!flows_[index]) throw SampleError("interval " + std::to_string(index) + " has no flow map");
  return *flows_[index];
}

const Tensor& FlowSeries::external(int64_t index) const {
  CheckIndex(index);
  if (!externals_[index]) {
    throw SampleError("interval " + std::to_string(index) + " has no external vector");
  }
  return *externals_[index];
}

void FlowSeries::SetFlow(int64_t index, Tensor map) {
  CheckIndex(index);
  CheckSameShape(map.shape(), Shape{2, grid_.rows, grid_.cols}, "FlowSeries::SetFlow");
  flows_[index] = std::move(map);
}

void FlowSeries::SetExternal(int64_t index, Tensor vector) {
  CheckIndex(index);
  if (encoder_.fitted()) {
    CheckSameShape(vector.shape(), Shape{encoder_.dim()}, "FlowSeries::SetExternal");
  }
  externals_[index] = std::move(vector);
}

int64_t FlowSeries::CountFlowGaps() const {
  return std::count_if(flows_.begin(), flows_.end(), [](const auto& f) { return !f; });
}

int64_t FlowSeries::CountExternalGaps() const {
  return std::count_if(externals_.begin(), externals_.end(), [](const auto& e) { return !e; });
}

// ---------------------------------------------------------------------------

FlowSeries BuildFlowSeries(std::span<const TripRecord> trips, const GridSpec& grid,
                           IngestionSummary* summary) {
  FlowSeries series(grid);
  const int64_t n = series.size();
  const int64_t plane = grid.rows * grid.cols;
  std::vector<double> counts(static_cast<std::size_t>(n * 2 * plane), 0.0);
  IngestionSummary s;
  s.trips_total = static_cast<int64_t>(trips.size());
  auto locate = [&](int64_t time, double lat, double lon) -> std::optional<int64_t> {
    auto index = series.IndexOfTime(time);
    if (!index) return std::nullopt;
    auto cell = LocateCell(lat, lon, grid);
    if (!cell) return std::nullopt;
    return *index * 2 * plane + cell->row * grid.cols + cell->col;
  };
  for (const TripRecord& t : trips) {
    const bool finite = std::isfinite(t.pickup_lat) && std::isfinite(t.pickup_lon) &&
                        std::isfinite(t.dropoff_lat) && std::isfinite(t.dropoff_lon);
    if (!finite || t.dropoff_time < t.pickup_time) {
      ++s.trips_malformed;
      continue;
    }
    if (auto at = locate(t.pickup_time, t.pickup_lat, t.pickup_lon)) {
      counts[static_cast<std::size_t>(*at + plane)] += 1.0;  // outflow channel
      ++s.pickups_counted;
    } else {
      ++s.pickups_outside;
    }
    if (auto at = locate(t.dropoff_time, t.dropoff_lat, t.dropoff_lon)) {
      counts[static_cast<std::size_t>(*at)] += 1.0;  // inflow channel
      ++s.dropoffs_counted;
    } else {
      ++s.dropoffs_outside;
    }
  }
  const Shape map_shape{2, grid.rows, grid.cols};
  for (int64_t i = 0; i < n; ++i) {
    auto first = counts.begin() + i * 2 * plane;
    series.SetFlow(i, Tensor(map_shape, std::vector<double>(first, first + 2 * plane)));
  }
  if (summary != nullptr) *summary = s;
  return series;
}

void AttachExternals(FlowSeries& series, std::span<const ExternalRecord> records,
                     IngestionSummary* summary) {
  ExternalEncoder encoder = ExternalEncoder::Fit(records);
  series.set_encoder(encoder);
  int64_t outside = 0;
  std::size_t clamped = 0;
  for (const ExternalRecord& r : records) {
    auto index = series.IndexOfTime(r.interval_start);
    if (!index || series.StartTime(*index) != r.interval_start) {
      ++outside;
      continue;
    }
    series.SetExternal(*index, encoder.Encode(r.weather, r.holiday, r.temperature,
                                              r.wind_speed, &clamped));
  }
  if (summary != nullptr) {
    summary->external_rows = static_cast<int64_t>(records.size());
    summary->external_rows_outside = outside;
    summary->external_clamped = static_cast<int64_t>(clamped);
    summary->external_gaps = series.CountExternalGaps();
  }
}

// ---------------------------------------------------------------------------

SampleSet EnumerateSamples(const FlowSeries& series, int seq_len, int periodic_len,
                           int horizon) {
  if (seq_len < 1 || periodic_len < 1) throw ArgumentError("n and m must be >= 1");
  if (horizon < 1) throw ArgumentError("horizon must be >= 1");
  SampleSet out;
  const int64_t per_day = series.intervals_per_day();
  const int64_t days = series.size() / per_day;
  if (seq_len + horizon > per_day || periodic_len >= days) {
    out.diagnostic = "n=" + std::to_string(seq_len) + ", m=" + std::to_string(periodic_len) +
                     ", horizon=" + std::to_string(horizon) + " exceed a series of " +
                     std::to_string(days) + " days x " + std::to_string(per_day) + " intervals";
    return out;
  }
  auto usable_input = [&](int64_t i) { return series.has_flow(i) && series.has_external(i); };
  for (int64_t day = periodic_len; day < days; ++day) {
    // first target slot s = t+1 needs t-n+1 >= 0, last target s+horizon-1 < per_day
    for (int64_t slot = seq_len; slot + horizon - 1 < per_day; ++slot) {
      Sample s;
      bool ok = true;
      for (int64_t k = seq_len; k >= 1; --k) {
        const int64_t i = series.Index(day, slot - k);
        ok = ok && usable_input(i);
        s.sequential.push_back(i);
      }
      for (int step = 0; step < horizon; ++step) {
        auto& set = s.periodic.emplace_back();
        for (int64_t k = periodic_len; k >= 1; --k) {
          const int64_t i = series.Index(day - k, slot + step);
          ok = ok && usable_input(i);
          set.push_back(i);
        }
        const int64_t target = series.Index(day, slot + step);
        ok = ok && series.has_flow(target);
        s.targets.push_back(target);
      }
      if (ok) {
        out.samples.push_back(std::move(s));
      } else {
        ++out.skipped_for_gaps;
      }
    }
  }
  if (out.samples.empty() && out.diagnostic.empty()) {
    out.diagnostic = "no complete sample windows (" + std::to_string(out.skipped_for_gaps) +
                     " windows touch gaps)";
  }
  return out;
}

SpnInput AssembleInput(const FlowSeries& series, const Sample& sample,
                       const Scaler& flow_scaler) {
  auto interval = [&](int64_t i) {
    Tensor scaled = flow_scaler.Apply(series.flow(i));
    for (double& v : scaled.values()) v = std::clamp(v, -1.0, 1.0);
    return IntervalInput{std::move(scaled), series.external(i)};
  };
  SpnInput in;
  for (int64_t i : sample.sequential) in.sequential.push_back(interval(i));
  for (const auto& set : sample.periodic) {
    auto& dst = in.periodic.emplace_back();
    for (int64_t i : set) dst.push_back(interval(i));
  }
  return in;
}

std::vector<Tensor> AssembleTargets(const FlowSeries& series, const Sample& sample,
                                    const Scaler& flow_scaler) {
  std::vector<Tensor> out;
  for (int64_t i : sample.targets) out.push_back(flow_scaler.Apply(series.flow(i)));
  return out;
}

Scaler FitFlowScaler(const FlowSeries& series, int64_t end_index) {
  std::vector<double> values;
  for (int64_t i = 0; i < std::min(end_index, series.size()); ++i) {
    if (!series.has_flow(i)) continue;
    const auto v = series.flow(i).values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Scaler::Fit(values, -1.0, 1.0);
}

// ---------------------------------------------------------------------------

FlowSeries SynthGenerate(const SynthConfig& c, uint64_t seed) {
  if (c.rows < 1 || c.cols < 1 || c.days < 1 || c.intervals_per_day < 1 ||
      86400 % c.intervals_per_day != 0) {
    throw ArgumentError("synthetic series needs positive extents and intervals dividing a day");
  }
  GridSpec grid;
  grid.rows = c.rows;
  grid.cols = c.cols;
  grid.lat_min = 0.0;
  grid.lat_max = static_cast<double>(c.rows);
  grid.lon_min = 0.0;
  grid.lon_max = static_cast<double>(c.cols);
  grid.interval_seconds = 86400 / c.intervals_per_day;
  grid.epoch_start = c.epoch_start;
  grid.days = c.days;
  FlowSeries series(grid);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int64_t cells = 2 * c.rows * c.cols;
  std::vector<double> base(cells), amplitude(cells), phase(cells), ar(cells, 0.0);
  for (int64_t k = 0; k < cells; ++k) {
    base[k] = c.base * (0.5 + unit(rng));
    amplitude[k] = c.amplitude * (0.5 + unit(rng));
    phase[k] = 2.0 * std::numbers::pi * unit(rng);
  }

  static const char* kWeather[] = {"clear", "cloudy", "rain"};
  std::vector<ExternalRecord> schedule;
  const int64_t per_day = c.intervals_per_day;
  const Shape map_shape{2, c.rows, c.cols};
  for (int64_t i = 0; i < series.size(); ++i) {
    const IntervalTime t = series.TimeOf(i);
    const bool weekend = t.weekday >= 5;
    const char* weather = kWeather[t.day % 3];
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t.slot) /
                         static_cast<double>(per_day);
    double factor = weekend ? c.weekend_factor : 1.0;
    if (weather == kWeather[2]) factor *= c.rain_factor;
    Tensor map(map_shape);
    for (int64_t k = 0; k < cells; ++k) {
      ar[k] = c.ar_coefficient * ar[k] + c.ar_scale * normal(rng);
      const double periodic = base[k] + amplitude[k] * std::sin(angle + phase[k]);
      const double value = factor * periodic + ar[k] + c.noise * normal(rng);
      map[static_cast<std::size_t>(k)] = std::max(0.0, std::round(value));
    }
    series.SetFlow(i, std::move(map));
    schedule.push_back({series.StartTime(i), weather, weekend ? "weekend" : "workday",
                        12.0 + 8.0 * std::sin(angle - std::numbers::pi / 2.0),
                        3.0 + 2.0 * std::abs(std::sin(angle + static_cast<double>(t.day)))});
  }
  AttachExternals(series, schedule);
  return series;
}

// ---------------------------------------------------------------------------

std::optional<int64_t> ParseTimestamp(std::string_view text) {
  if (text.empty()) return std::nullopt;
  bool all_digits = std::all_of(text.begin(), text.end(), [](char ch) {
    return (ch >= '0' && ch <= '9') || ch == '-';
  });
  if (all_digits && text.find('-', 1) == std::string_view::npos) {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec == std::errc() && ptr == text.data() + text.size()) return v;
    return std::nullopt;
  }
  // YYYY-MM-DD[T ]HH:MM[:SS][Z]
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > text.size()) return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
    if (ec != std::errc() || ptr != text.data() + pos + len) return std::nullopt;
    return v;
  };
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' ||
      (text[10] != 'T' && text[10] != ' ') || text[13] != ':') {
    return std::nullopt;
  }
  auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
  if (!y || !mo || !d || !h || !mi) return std::nullopt;
  int sec = 0;
  std::size_t pos = 16;
  if (pos < text.size() && text[pos] == ':') {
    auto s = num(pos + 1, 2);
    if (!s) return std::nullopt;
    sec = *s;
    pos += 3;
  }
  if (pos < text.size() && text[pos] == 'Z') ++pos;
  if (pos != text.size()) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || sec > 60) return std::nullopt;
  const int64_t days = sys_days{ymd}.time_since_epoch().count();
  return days * 86400 + *h * 3600 + *mi * 60 + sec;
}

TripParseResult ParseTripsCsv(std::string_view text) {
  TripParseResult out;
  ForEachDataLine(text, "pickup_time,pickup_lat,pickup_lon,dropoff_time,dropoff_lat,dropoff_lon",
                  [&](int64_t line_no, std::string_view line) {
                    ++out.rows;
                    auto f = SplitCsvLine(line);
                    if (f.size() != 6) {
                      out.bad_lines.push_back(line_no);
                      return;
                    }
                    auto pt = ParseTimestamp(f[0]), dt = ParseTimestamp(f[3]);
                    auto plat = ParseDouble(f[1]), plon = ParseDouble(f[2]);
                    auto dlat = ParseDouble(f[4]), dlon = ParseDouble(f[5]);
                    if (!pt || !dt || !plat || !plon || !dlat || !dlon) {
                      out.bad_lines.push_back(line_no);
                      return;
                    }
                    out.trips.push_back({*pt, *plat, *plon, *dt, *dlat, *dlon});
                  });
  return out;
}

TripParseResult ReadTripsCsv(const std::filesystem::path& path) {
  return ParseTripsCsv(ReadFileBytes(path));
}

ExternalParseResult ParseExternalsCsv(std::string_view text) {
  ExternalParseResult out;
  ForEachDataLine(text, "interval_start,weather,holiday,temperature,wind_speed",
                  [&](int64_t line_no, std::string_view line) {
                    ++out.rows;
                    auto f = SplitCsvLine(line);
                    if (f.size() != 5) {
                      out.bad_lines.push_back(line_no);
                      return;
                    }
                    auto t = ParseTimestamp(f[0]);
                    auto temp = ParseDouble(f[3]), wind = ParseDouble(f[4]);
                    if (!t || !temp || !wind) {
                      out.bad_lines.push_back(line_no);
                      return;
                    }
                    out.records.push_back({*t, std::string(f[1]), std::string(f[2]), *temp, *wind});
                  });
  return out;
}

ExternalParseResult ReadExternalsCsv(const std::filesystem::path& path) {
  return ParseExternalsCsv(ReadFileBytes(path));
}

// ---------------------------------------------------------------------------

std::filesystem::path SidecarPath(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void SaveSeries(const FlowSeries& series, const std::filesystem::path& path) {
  const GridSpec& g = series.grid();
  const int64_t n = series.size();
  const int64_t plane = 2 * g.rows * g.cols;
  Tensor flows(Shape{n, 2, g.rows, g.cols});
  std::string flow_bitmap(static_cast<std::size_t>(n), '0');
  std::string ext_bitmap(static_cast<std::size_t>(n), '0');
  for (int64_t i = 0; i < n; ++i) {
    if (!series.has_flow(i)) continue;
    flow_bitmap[i] = '1';
    const Tensor& m = series.flow(i);
    std::copy(m.data(), m.data() + plane, flows.data() + i * plane);
  }
  TensorContainer c;
  c.Put("flow", std::move(flows));
  const int64_t dim = series.external_dim();
  if (dim > 0) {
    Tensor ext(Shape{n, dim});
    for (int64_t i = 0; i < n; ++i) {
      if (!series.has_external(i)) continue;
      ext_bitmap[i] = '1';
      const Tensor& e = series.external(i);
      std::copy(e.data(), e.data() + dim, ext.data() + i * dim);
    }
    c.Put("external", std::move(ext));
  }
  c.Save(path);

  json meta;
  meta["format"] = "atfm-series";
  meta["grid"] = {{"lat_min", g.lat_min},       {"lat_max", g.lat_max},
                  {"lon_min", g.lon_min},       {"lon_max", g.lon_max},
                  {"rows", g.rows},             {"cols", g.cols},
                  {"interval_seconds", g.interval_seconds},
                  {"epoch_start", g.epoch_start}, {"days", g.days},
                  {"utc_offset_seconds", g.utc_offset_seconds}};
  meta["flow_present"] = flow_bitmap;
  meta["external_dim"] = dim;
  if (dim > 0) {
    const ExternalEncoder& e = series.encoder();
    meta["external_present"] = ext_bitmap;
    meta["encoder"] = {
        {"weather", e.weather_vocab()},
        {"holiday", e.holiday_vocab()},
        {"temperature", {e.temperature_scaler().min(), e.temperature_scaler().max()}},
        {"wind_speed", {e.wind_scaler().min(), e.wind_scaler().max()}},
        {"vocabulary_hash", std::to_string(e.VocabularyHash())}};
  }
  WriteFileBytes(SidecarPath(path), meta.dump(2) + "\n");
}

FlowSeries LoadSeries(const std::filesystem::path& path) {
  json meta;
  try {
    meta = json::parse(ReadFileBytes(SidecarPath(path)));
    if (meta.value("format", "") != "atfm-series") throw DataError("not a series sidecar");
    const json& jg = meta.at("grid");
    GridSpec g;
    g.lat_min = jg.at("lat_min");
    g.lat_max = jg.at("lat_max");
    g.lon_min = jg.at("lon_min");
    g.lon_max = jg.at("lon_max");
    g.rows = jg.at("rows");
    g.cols = jg.at("cols");
    g.interval_seconds = jg.at("interval_seconds");
    g.epoch_start = jg.at("epoch_start");
    g.days = jg.at("days");
    g.utc_offset_seconds = jg.at("utc_offset_seconds");
    FlowSeries series(g);
    const TensorContainer c = TensorContainer::Load(path);
    const Tensor& flows = c.Get("flow");
    CheckSameShape(flows.shape(), Shape{series.size(), 2, g.rows, g.cols}, "series flow");
    const std::string flow_bitmap = meta.at("flow_present");
    if (static_cast<int64_t>(flow_bitmap.size()) != series.size()) {
      throw DataError("flow presence bitmap length mismatch");
    }
    const int64_t plane = 2 * g.rows * g.cols;
    for (int64_t i = 0; i < series.size(); ++i) {
      if (flow_bitmap[i] != '1') continue;
      auto first = flows.values().begin() + i * plane;
      series.SetFlow(i, Tensor(Shape{2, g.rows, g.cols}, std::vector<double>(first, first + plane)));
    }
    const int64_t dim = meta.at("external_dim");
    if (dim > 0) {
      const json& je = meta.at("encoder");
      ExternalEncoder enc(je.at("weather").get<std::vector<std::string>>(),
                          je.at("holiday").get<std::vector<std::string>>(),
                          Scaler(je.at("temperature")[0], je.at("temperature")[1], 0.0, 1.0),
                          Scaler(je.at("wind_speed")[0], je.at("wind_speed")[1], 0.0, 1.0));
      if (enc.dim() != dim) throw DataError("encoder vocabulary disagrees with external_dim");
      series.set_encoder(enc);
      const Tensor& ext = c.Get("external");
      CheckSameShape(ext.shape(), Shape{series.size(), dim}, "series external");
      const std::string ext_bitmap = meta.at("external_present");
      for (int64_t i = 0; i < series.size(); ++i) {
        if (ext_bitmap.at(i) != '1') continue;
        auto first = ext.values().begin() + i * dim;
        series.SetExternal(i, Tensor(Shape{dim}, std::vector<double>(first, first + dim)));
      }
    }
    return series;
  } catch (const json::exception& e) {
    throw DataError("malformed series sidecar '" + SidecarPath(path).string() + "': " + e.what());
  }
}

}  // namespace atfm::data
