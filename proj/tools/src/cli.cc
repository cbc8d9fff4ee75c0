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


#include "atfm_cli/cli.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "atfm/container.h"
#include "atfm/data.h"
#include "atfm/error.h"
#include "atfm/gradcheck.h"
#include "atfm/metrics.h"
#include "atfm/models.h"
#include "atfm/train.h"

namespace atfm::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kIngest = "ingest";
constexpr const char* kSynth = "synth";
constexpr const char* kTrain = "train";
constexpr const char* kEvaluate = "evaluate";
constexpr const char* kPredict = "predict";
constexpr const char* kGradcheck = "gradcheck";
constexpr const char* kExport = "export-attention";

std::string Format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// Raw key=value settings of one invocation plus typed accessors.
class Options {
 public:
  explicit Options(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  bool Has(const std::string& key) const { return values_.count(key) > 0; }

  std::string Required(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) {
      throw ConfigError("missing required setting --" + key);
    }
    return it->second;
  }

  std::string String(const std::string& key, const std::string& fallback) const {
    return Has(key) ? values_.at(key) : fallback;
  }

  int64_t Int(const std::string& key, int64_t fallback, int64_t lo, int64_t hi) const {
    if (!Has(key)) return fallback;
    const std::string& text = values_.at(key);
    int64_t v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
      throw ConfigError("--" + key + " expects an integer, got '" + text + "'");
    }
    if (v < lo || v > hi) {
      throw ConfigError("--" + key + " must lie in [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "], got " + text);
    }
    return v;
  }

  double Double(const std::string& key, double fallback) const {
    if (!Has(key)) return fallback;
    return ParseNumber(key, values_.at(key));
  }

  std::optional<double> OptionalDouble(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    return ParseNumber(key, values_.at(key));
  }

  // Relative paths resolve against $ATFM_DATA_DIR when it is set.
  fs::path Path(const std::string& key) const { return Resolve(Required(key)); }
  std::optional<fs::path> OptionalPath(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    return Resolve(Required(key));
  }

  static double ParseNumber(const std::string& key, const std::string& text) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v)) {
      throw ConfigError("--" + key + " expects a number, got '" + text + "'");
    }
    return v;
  }

 private:
  static fs::path Resolve(const std::string& raw) {
    fs::path p(raw);
    if (p.is_relative()) {
      if (const char* root = std::getenv("ATFM_DATA_DIR"); root != nullptr && *root != '\0') {
        return fs::path(root) / p;
      }
    }
    return p;
  }

  std::map<std::string, std::string> values_;
};

std::pair<int64_t, int64_t> ParseGrid(const Options& o, std::pair<int64_t, int64_t> fallback) {
  if (!o.Has("grid")) return fallback;
  const std::string text = o.Required("grid");
  const auto x = text.find_first_of("xX");
  int64_t h = 0, w = 0;
  bool ok = x != std::string::npos;
  if (ok) {
    auto r1 = std::from_chars(text.data(), text.data() + x, h);
    auto r2 = std::from_chars(text.data() + x + 1, text.data() + text.size(), w);
    ok = r1.ec == std::errc() && r1.ptr == text.data() + x && r2.ec == std::errc() &&
         r2.ptr == text.data() + text.size() && h > 0 && w > 0 && h <= 4096 && w <= 4096;
  }
  if (!ok) throw ConfigError("--grid expects HxW with positive extents, got '" + text + "'");
  return {h, w};
}

int64_t IntervalSeconds(const Options& o) {
  const int64_t mins = o.Int("interval-mins", 30, 1, 1440);
  if (1440 % mins != 0) {
    throw ConfigError("--interval-mins must divide 1440, got " + std::to_string(mins));
  }
  return mins * 60;
}

std::optional<int64_t> ParseStart(const Options& o) {
  if (!o.Has("start")) return std::nullopt;
  const std::string text = o.Required("start");
  auto t = data::ParseTimestamp(text);
  if (!t && text.size() == 10) t = data::ParseTimestamp(text + "T00:00:00Z");
  if (!t || *t % 86400 != 0) {
    throw ConfigError("--start expects a date YYYY-MM-DD, got '" + text + "'");
  }
  return t;
}

SpnConfig ModelConfig(const Options& o, int default_residual_units) {
  SpnConfig c;
  c.seq_len = static_cast<int>(o.Int("n", 4, 1, 48));
  c.periodic_len = static_cast<int>(o.Int("m", 2, 1, 28));
  c.residual_units = static_cast<int>(o.Int("residual-units", default_residual_units, 0, 64));
  c.horizon = static_cast<int>(o.Int("horizon", 1, 1, 4));
  if (c.horizon != 1 && c.horizon != 4) throw ConfigError("--horizon must be 1 or 4");
  return c;
}

const char* ModelName(const SpnConfig& c) { return c.horizon == 1 ? "spn" : "spn-long"; }

// ---------------------------------------------------------------------------

int CmdSynth(const Options& o, std::ostream& out) {
  data::SynthConfig sc;
  std::tie(sc.rows, sc.cols) = ParseGrid(o, {8, 8});
  sc.days = o.Int("days", 30, 1, 3660);
  sc.intervals_per_day = 86400 / IntervalSeconds(o);
  if (auto start = ParseStart(o)) sc.epoch_start = *start;
  const auto seed = static_cast<uint64_t>(o.Int("seed", 1, 0, INT64_MAX));
  const fs::path path = o.Path("out");
  const data::FlowSeries series = data::SynthGenerate(sc, seed);
  data::SaveSeries(series, path);
  out << "wrote " << series.size() << " intervals of " << sc.rows << "x" << sc.cols << " maps ("
      << series.external_dim() << " external features) to " << path.string() << "\n";
  return kOk;
}

std::string LineList(const std::vector<int64_t>& lines) {
  std::string s;
  const std::size_t shown = std::min<std::size_t>(lines.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) s += (i ? ", " : "") + std::to_string(lines[i]);
  if (lines.size() > shown) s += ", ... (" + std::to_string(lines.size()) + " total)";
  return s;
}

void CheckBadRows(const std::string& what, const std::vector<int64_t>& bad, int64_t rows,
                  double threshold, std::ostream& err) {
  if (bad.empty()) return;
  const double fraction = static_cast<double>(bad.size()) / static_cast<double>(rows);
  if (fraction > threshold) {
    throw DataError(std::to_string(bad.size()) + " of " + std::to_string(rows) + " " + what +
                    " rows are unparseable (limit " + Format("%g", 100.0 * threshold) +
                    "%); lines " + LineList(bad));
  }
  err << "warning: skipped " << bad.size() << " unparseable " << what << " rows; lines "
      << LineList(bad) << "\n";
}

int CmdIngest(const Options& o, std::ostream& out, std::ostream& err) {
  data::GridSpec g;
  if (!o.Has("grid")) throw ConfigError("missing required setting --grid");
  std::tie(g.rows, g.cols) = ParseGrid(o, {0, 0});
  {
    const std::string text = o.Required("bbox");
    std::vector<double> v;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
      v.push_back(Options::ParseNumber("bbox", part));
    }
    if (v.size() != 4) throw ConfigError("--bbox expects latmin,lonmin,latmax,lonmax");
    g.lat_min = v[0];
    g.lon_min = v[1];
    g.lat_max = v[2];
    g.lon_max = v[3];
  }
  g.interval_seconds = IntervalSeconds(o);
  g.utc_offset_seconds = 60 * o.Int("utc-offset-mins", 0, -14 * 60, 14 * 60);
  const double threshold = o.Double("max-bad-fraction", 0.01);
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("--max-bad-fraction must lie in [0, 1]");
  }

  const fs::path trips_path = o.Path("trips");
  const data::TripParseResult trips = data::ReadTripsCsv(trips_path);
  CheckBadRows("trip", trips.bad_lines, trips.rows, threshold, err);

  // Time axis: explicit, or the local days spanned by the trips.
  const int64_t off = g.utc_offset_seconds;
  auto floor_day = [](int64_t t) { return (t >= 0 ? t : t - 86399) / 86400 * 86400; };
  std::optional<int64_t> start_local = ParseStart(o);
  if (!start_local) {
    if (trips.trips.empty()) {
      throw ConfigError("--start is required when the trips file holds no records");
    }
    int64_t lo = INT64_MAX;
    for (const data::TripRecord& t : trips.trips) lo = std::min(lo, t.pickup_time);
    start_local = floor_day(lo + off);
  }
  g.epoch_start = *start_local - off;
  if (o.Has("days")) {
    g.days = o.Int("days", 1, 1, 3660);
  } else {
    if (trips.trips.empty()) {
      throw ConfigError("--days is required when the trips file holds no records");
    }
    int64_t hi = INT64_MIN;
    for (const data::TripRecord& t : trips.trips) {
      hi = std::max({hi, t.pickup_time, t.dropoff_time});
    }
    g.days = std::max<int64_t>(1, (floor_day(hi + off) - *start_local) / 86400 + 1);
  }
  g.Validate();

  data::IngestionSummary summary;
  data::FlowSeries series = data::BuildFlowSeries(trips.trips, g, &summary);

  if (auto ext_path = o.OptionalPath("externals")) {
    if (fs::exists(*ext_path)) {
      const data::ExternalParseResult ext = data::ReadExternalsCsv(*ext_path);
      CheckBadRows("external", ext.bad_lines, ext.rows, threshold, err);
      if (!ext.records.empty()) data::AttachExternals(series, ext.records, &summary);
    } else {
      err << "warning: externals file " << ext_path->string()
          << " not found; the series has no external factors\n";
    }
  }
  if (series.external_dim() == 0) {
    err << "warning: no external factors; training on this series will fail\n";
  }

  const fs::path out_path = o.Path("out");
  data::SaveSeries(series, out_path);
  const int64_t kept = summary.trips_total - summary.trips_malformed;
  out << "trips: " << summary.trips_total << " read, " << kept << " kept, "
      << summary.trips_malformed << " malformed, " << trips.bad_lines.size()
      << " unparseable\n";
  out << "pickups counted " << summary.pickups_counted << " (" << summary.pickups_outside
      << " outside), dropoffs counted " << summary.dropoffs_counted << " ("
      << summary.dropoffs_outside << " outside)\n";
  out << "intervals " << series.size() << ", flow gaps " << series.CountFlowGaps()
      << ", external dim " << series.external_dim() << ", external gaps "
      << (series.external_dim() > 0 ? series.CountExternalGaps() : series.size()) << "\n";
  if (summary.external_clamped > 0) {
    out << "external values clamped: " << summary.external_clamped << "\n";
  }
  out << "wrote " << out_path.string() << "\n";
  return kOk;
}

int CmdTrain(const Options& o, std::ostream& out) {
  const data::FlowSeries series = data::LoadSeries(o.Path("series"));
  if (series.external_dim() == 0) {
    throw DataError("series has no external factors; re-run ingest with --externals");
  }
  SpnConfig mc = ModelConfig(o, 4);
  mc.height = series.grid().rows;
  mc.width = series.grid().cols;
  mc.external_dim = series.external_dim();

  train::TrainConfig tc;
  tc.learning_rate = o.Double("lr", tc.learning_rate);
  tc.batch_size = static_cast<int>(o.Int("batch", tc.batch_size, 1, 1 << 20));
  tc.max_epochs = static_cast<int>(o.Int("epochs", tc.max_epochs, 1, 1 << 20));
  tc.max_steps = o.Int("max-steps", 0, 0, INT64_MAX);
  tc.patience = static_cast<int>(o.Int("patience", tc.patience, 1, 1 << 20));
  tc.clip_norm = o.OptionalDouble("clip-norm");
  tc.gate_warmup_steps = o.Int("gate-warmup", 100, 0, INT64_MAX);
  tc.validation_fraction = o.Double("val-fraction", tc.validation_fraction);
  tc.early_stopping = tc.validation_fraction > 0.0;
  tc.seed = static_cast<uint64_t>(o.Int("seed", 1, 0, INT64_MAX));
  tc.threads = static_cast<int>(o.Int("threads", 1, 1, 256));
  tc.Validate();
  const int64_t test_days = o.Int("test-days", 4, 1, 3660);

  const data::SampleSet all =
      data::EnumerateSamples(series, mc.seq_len, mc.periodic_len, mc.horizon);
  const train::HoldoutSplit split = train::SplitHoldout(series, all.samples, test_days);
  auto [fit_samples, val_samples] =
      train::SplitValidation(split.train, tc.validation_fraction);
  if (fit_samples.empty()) {
    throw DataError("no training samples before the held-out days" +
                    (all.diagnostic.empty() ? std::string() : "; " + all.diagnostic));
  }
  const Scaler scaler = data::FitFlowScaler(series, split.train_end);

  ParamStore params;
  auto model = MakeForecaster(params, mc);
  train::XavierInit(params, tc.seed);
  train::ForecastObjective objective(
      *model, params, train::ForecastObjective::Assemble(series, fit_samples, scaler),
      train::ForecastObjective::Assemble(series, val_samples, scaler));
  out << ModelName(mc) << ": " << params.size() << " tensors, " << params.num_scalars()
      << " parameters; " << fit_samples.size() << " training, " << val_samples.size()
      << " validation, " << split.test.size() << " held-out samples\n";

  const train::FitResult result = train::Fit(params, objective, tc, [&](const train::HistoryRow& r) {
    if (r.split != "val") return;
    out << "epoch " << r.epoch << " step " << r.step << " val loss " << Format("%.6g", r.loss)
        << " rmse " << Format("%.6g", r.rmse) << "\n";
  });
  params.RoundToStoragePrecision();

  train::CheckpointMeta meta;
  meta.model = mc;
  meta.flow_min = scaler.min();
  meta.flow_max = scaler.max();
  meta.vocabulary_hash = series.encoder().VocabularyHash();
  meta.interval_seconds = series.grid().interval_seconds;
  meta.train_end = split.train_end;
  meta.epoch = result.best_epoch > 0 ? result.best_epoch : result.epochs_run;
  meta.step = result.steps;
  const fs::path ckpt = o.Path("checkpoint");
  train::SaveCheckpoint(ckpt, params, meta);
  const fs::path history =
      o.OptionalPath("history").value_or(fs::path(ckpt.string() + ".history.csv"));
  WriteFileBytes(history, train::HistoryCsv(result.history));
  out << "trained " << result.epochs_run << " epochs (" << result.steps << " steps"
      << (result.stopped_early ? ", stopped early" : "") << ")";
  if (result.best_epoch > 0) {
    out << ", best epoch " << result.best_epoch << " val rmse "
        << Format("%.6g", result.best_validation_rmse);
  }
  out << "\nwrote " << ckpt.string() << " and " << history.string() << "\n";
  return kOk;
}

struct LoadedModel {
  train::CheckpointMeta meta;
  ParamStore params;
  std::unique_ptr<Forecaster> model;
};

std::unique_ptr<LoadedModel> LoadModel(const fs::path& ckpt, const fs::path& series_path,
                                       const data::FlowSeries& series) {
  auto m = std::make_unique<LoadedModel>();
  m->meta = train::LoadCheckpointMeta(ckpt);
  const std::vector<std::string> diff = train::CompatibilityDiff(m->meta, series);
  if (!diff.empty()) {
    std::string msg = "metadata mismatch between " + data::SidecarPath(ckpt).string() + " and " +
                      data::SidecarPath(series_path).string() + "; refusing to run:";
    for (const std::string& line : diff) msg += "\n  " + line;
    throw ContractError(msg);
  }
  m->model = MakeForecaster(m->params, m->meta.model);
  train::LoadCheckpointParams(ckpt, m->params);
  return m;
}

int CmdEvaluate(const Options& o, std::ostream& out) {
  const fs::path series_path = o.Path("series");
  const data::FlowSeries series = data::LoadSeries(series_path);
  const auto m = LoadModel(o.Path("checkpoint"), series_path, series);
  const SpnConfig& mc = m->meta.model;
  const data::SampleSet all =
      data::EnumerateSamples(series, mc.seq_len, mc.periodic_len, mc.horizon);
  const train::HoldoutSplit split = train::SplitAt(all.samples, m->meta.train_end);
  if (split.test.empty()) throw DataError("no held-out samples to evaluate");

  metrics::ReportOptions ro;
  ro.train_end = m->meta.train_end;
  ro.error_ratio = o.OptionalDouble("error-ratio");
  const auto items = metrics::PredictSamples(*m->model, m->params, series, split.test,
                                             m->meta.flow_scaler());
  metrics::EvalReport report = metrics::BuildReport(series, items, ro, ModelName(mc));
  report.CheckConsistency();

  int64_t ha_skipped = 0;
  std::vector<std::string> ha_notes;
  const auto ha_items = metrics::HaSamples(series, split.test, &ha_skipped, &ha_notes);
  std::optional<metrics::EvalReport> ha;
  if (!ha_items.empty()) {
    ha = metrics::BuildReport(series, ha_items, ro, "ha");
    ha->skipped = ha_skipped;
    ha->CheckConsistency();
  }

  out << report.ToText();
  if (ha) {
    out << "\n" << ha->ToText();
  } else {
    out << "\nha: no held-out interval has history one week earlier\n";
  }
  if (auto path = o.OptionalPath("report")) {
    json j;
    j["model"] = json::parse(report.ToJson());
    j["ha"] = ha ? json::parse(ha->ToJson()) : json();
    WriteFileBytes(*path, j.dump(2) + "\n");
  }
  if (auto path = o.OptionalPath("intervals")) {
    WriteFileBytes(*path, metrics::IntervalErrorsCsv(series, items));
  }
  return kOk;
}

int64_t ResolveTarget(const Options& o, const data::FlowSeries& series) {
  const std::string text = o.Required("target");
  int64_t index = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), index);
  if (ec == std::errc() && end == text.data() + text.size() && text.size() < 9) {
    if (index < 0 || index >= series.size()) {
      throw ConfigError("--target " + text + " lies outside the series (0.." +
                        std::to_string(series.size() - 1) + ")");
    }
    return index;
  }
  const auto t = data::ParseTimestamp(text);
  if (!t) throw ConfigError("--target expects an interval index or a timestamp, got '" + text + "'");
  const auto i = series.IndexOfTime(*t);
  if (!i) throw ConfigError("--target " + text + " lies outside the series");
  return *i;
}

data::Sample FindSample(const data::FlowSeries& series, const SpnConfig& mc, int64_t target) {
  const data::SampleSet all =
      data::EnumerateSamples(series, mc.seq_len, mc.periodic_len, mc.horizon);
  for (const data::Sample& s : all.samples) {
    if (s.targets.front() == target) return s;
  }
  const data::IntervalTime t = series.TimeOf(target);
  throw SampleError("no complete input window for interval " + std::to_string(target) +
                    " (day " + std::to_string(t.day) + ", slot " + std::to_string(t.slot) +
                    "): needs " + std::to_string(mc.seq_len) + " earlier intervals that day, " +
                    std::to_string(mc.periodic_len) + " earlier days and " +
                    std::to_string(mc.horizon) + " target intervals, all present");
}

int CmdPredict(const Options& o, std::ostream& out) {
  const fs::path series_path = o.Path("series");
  const data::FlowSeries series = data::LoadSeries(series_path);
  const auto m = LoadModel(o.Path("checkpoint"), series_path, series);
  const SpnConfig& mc = m->meta.model;
  if (o.Has("horizon") && o.Int("horizon", 1, 1, 4) != mc.horizon) {
    throw ContractError("--horizon " + o.Required("horizon") + " does not match the checkpoint (" +
                        std::to_string(mc.horizon) + ")");
  }
  const int64_t target = ResolveTarget(o, series);
  const data::Sample sample = FindSample(series, mc, target);
  const Scaler scaler = m->meta.flow_scaler();
  const Forecast f =
      m->model->Predict(m->params, data::AssembleInput(series, sample, scaler));
  TensorContainer c;
  for (std::size_t i = 0; i < f.predictions.size(); ++i) {
    const Tensor map = metrics::InverseScalePredictions(f.predictions[i], scaler);
    double in = 0.0, outflow = 0.0;
    const std::size_t plane = map.size() / 2;
    for (std::size_t k = 0; k < plane; ++k) {
      in += map[k];
      outflow += map[plane + k];
    }
    out << "interval " << sample.targets[i] << ": total inflow " << Format("%.3f", in)
        << ", outflow " << Format("%.3f", outflow) << "\n";
    c.Put("step" + std::to_string(i + 1), map);
  }
  const fs::path path = o.Path("out");
  c.Save(path);
  out << "wrote " << c.size() << " maps to " << path.string() << "\n";
  return kOk;
}

int CmdExportAttention(const Options& o, std::ostream& out) {
  const fs::path series_path = o.Path("series");
  const data::FlowSeries series = data::LoadSeries(series_path);
  const auto m = LoadModel(o.Path("checkpoint"), series_path, series);
  const SpnConfig& mc = m->meta.model;
  const int64_t target = ResolveTarget(o, series);
  const data::Sample sample = FindSample(series, mc, target);
  const Forecast f = m->model->Predict(
      m->params, data::AssembleInput(series, sample, m->meta.flow_scaler()));
  TensorContainer c;
  for (std::size_t k = 0; k < f.sequential_attention.size(); ++k) {
    c.Put("sequential/" + std::to_string(k), f.sequential_attention[k]);
  }
  for (std::size_t s = 0; s < f.periodic_attention.size(); ++s) {
    for (std::size_t k = 0; k < f.periodic_attention[s].size(); ++k) {
      c.Put("periodic/step" + std::to_string(s + 1) + "/" + std::to_string(k),
            f.periodic_attention[s][k]);
    }
  }
  c.Put("fusion_weight", Tensor(Shape{static_cast<int64_t>(f.fusion_weights.size())},
                                f.fusion_weights));
  const fs::path path = o.Path("out");
  c.Save(path);
  out << "fusion weight r:";
  for (double r : f.fusion_weights) out << " " << Format("%.6f", r);
  out << "\nwrote " << c.size() << " arrays to " << path.string() << "\n";
  return kOk;
}

int CmdGradcheck(const Options& o, std::ostream& out) {
  SpnConfig c = ModelConfig(o, 2);
  std::tie(c.height, c.width) = ParseGrid(o, {4, 4});
  c.external_dim = 6;
  GradCheckOptions opt;
  opt.samples_per_param = static_cast<int>(o.Int("samples", 6, 0, 1 << 20));
  const auto seed = static_cast<uint64_t>(o.Int("seed", 1, 0, INT64_MAX));
  opt.seed = seed;
  const GradCheckReport report = CheckForecasterGradients(c, seed, opt);
  out << ModelName(c) << " " << c.height << "x" << c.width << ", " << c.residual_units
      << " residual units, n=" << c.seq_len << ", m=" << c.periodic_len << "\n";
  out << report.ToText();
  if (!report.passed) {
    throw NumericError("gradient check failed: max relative error " +
                       Format("%.3g", report.max_relative_error) + " exceeds " +
                       Format("%g", opt.tolerance));
  }
  return kOk;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& Commands() {
  static const std::vector<std::pair<std::string, std::string>> commands = {
      {kIngest, "bin trip records into a cached flow series"},
      {kSynth, "generate a synthetic flow series"},
      {kTrain, "train a model and write a checkpoint and history CSV"},
      {kEvaluate, "report held-out errors of a checkpoint next to the HA baseline"},
      {kPredict, "forecast the maps starting at one interval"},
      {kGradcheck, "compare analytic and finite-difference gradients"},
      {kExport, "write attention maps and fusion weights for one sample"},
  };
  return commands;
}

const std::vector<FlagSpec>& Schema() {
  const std::vector<std::string> all = {kIngest,  kSynth,     kTrain, kEvaluate,
                                        kPredict, kGradcheck, kExport};
  static const std::vector<FlagSpec> schema = {
      {"config", "PATH", "key=value settings file; command-line flags take precedence", all},
      {"series", "PATH", "cached series file", {kTrain, kEvaluate, kPredict, kExport}},
      {"trips", "PATH", "trip records CSV", {kIngest}},
      {"externals", "PATH", "external factors CSV (optional)", {kIngest}},
      {"out", "PATH", "output file", {kIngest, kSynth, kPredict, kExport}},
      {"checkpoint", "PATH", "model checkpoint", {kTrain, kEvaluate, kPredict, kExport}},
      {"history", "PATH", "training history CSV (default <checkpoint>.history.csv)", {kTrain}},
      {"report", "PATH", "also write the report as JSON", {kEvaluate}},
      {"intervals", "PATH", "also write per-interval errors as CSV", {kEvaluate}},
      {"grid", "HxW", "grid rows and columns (synth 8x8, gradcheck 4x4)",
       {kIngest, kSynth, kGradcheck}},
      {"bbox", "LATMIN,LONMIN,LATMAX,LONMAX", "bounding box of the grid", {kIngest}},
      {"interval-mins", "MIN", "interval length in minutes, dividing 1440 (30)", {kIngest, kSynth}},
      {"start", "DATE", "local date of the first day (ingest: day of the first pickup; "
                        "synth: 2024-01-01)", {kIngest, kSynth}},
      {"days", "N", "number of days (ingest: span of the trips; synth: 30)", {kIngest, kSynth}},
      {"utc-offset-mins", "MIN", "local time offset from UTC (0)", {kIngest}},
      {"max-bad-fraction", "F", "abort when more rows than this are unparseable (0.01)",
       {kIngest}},
      {"n", "N", "sequential intervals per sample (4)", {kTrain, kGradcheck}},
      {"m", "M", "periodic days per sample (2)", {kTrain, kGradcheck}},
      {"residual-units", "N", "residual units in the feature extractor (4; gradcheck 2)",
       {kTrain, kGradcheck}},
      {"horizon", "1|4", "forecast steps (1)", {kTrain, kPredict, kGradcheck}},
      {"lr", "RATE", "Adam learning rate (1e-4)", {kTrain}},
      {"batch", "N", "mini-batch size (64)", {kTrain}},
      {"epochs", "N", "maximum epochs (200)", {kTrain}},
      {"max-steps", "N", "maximum updates, 0 for no limit (0)", {kTrain}},
      {"patience", "N", "early-stopping patience in epochs (10)", {kTrain}},
      {"clip-norm", "NORM", "clip gradients to this global norm (off)", {kTrain}},
      {"gate-warmup", "N", "updates during which the fusion gates stay at r = 0.5 (100)",
       {kTrain}},
      {"val-fraction", "F", "share of training samples held for validation; 0 disables "
                            "early stopping (0.1)", {kTrain}},
      {"test-days", "N", "trailing days held out for evaluation (4)", {kTrain}},
      {"error-ratio", "R", "multiply reported errors by R", {kEvaluate}},
      {"target", "INDEX|TIME", "first forecast interval, as an index or timestamp",
       {kPredict, kExport}},
      {"seed", "N", "random seed (1)", {kSynth, kTrain, kGradcheck}},
      {"threads", "N", "worker threads; results do not depend on it (1)", {kTrain}},
      {"samples", "N", "entries checked per parameter tensor, 0 for all (6)", {kGradcheck}},
  };
  return schema;
}

std::string SchemaHelp() {
  std::string s = "Settings (flag --KEY VALUE or config line KEY=VALUE):\n";
  for (const FlagSpec& f : Schema()) {
    std::string head = "  --" + f.key + " " + f.value_name;
    if (head.size() < 36) head.resize(36, ' ');
    else head += "\n" + std::string(36, ' ');
    std::string cmds;
    for (const std::string& c : f.commands) cmds += (cmds.empty() ? "" : ", ") + c;
    if (f.commands.size() == Commands().size()) cmds = "all commands";
    s += head + f.help + " [" + cmds + "]\n";
  }
  s += "Relative paths resolve against $ATFM_DATA_DIR when set.\n"
       "Exit codes: 0 ok, 2 usage, 3 data error, 4 contract or metadata mismatch, "
       "5 numeric failure.\n";
  return s;
}

std::map<std::string, std::string> ParseConfigText(const std::string& text) {
  std::set<std::string> known;
  for (const FlagSpec& f : Schema()) known.insert(f.key);
  known.erase("config");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  std::map<std::string, std::string> values;
  std::stringstream ss(text);
  int line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!known.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!values.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
  }
  return values;
}

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attentive traffic flow forecasting toolkit", "atfm"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::map<std::string, CLI::Option*>> opts;
  for (const auto& [name, description] : Commands()) {
    CLI::App* sub = app.add_subcommand(name, description);
    for (const FlagSpec& f : Schema()) {
      if (std::find(f.commands.begin(), f.commands.end(), name) == f.commands.end()) continue;
      opts[name][f.key] = sub->add_option("--" + f.key, raw[name][f.key], f.help)
                              ->type_name(f.value_name);
    }
  }

  app.footer(SchemaHelp());

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (CLI::App* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'atfm --help' for usage\n";
    return kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    std::map<std::string, std::string> values;
    if (opts[command]["config"]->count() > 0) {
      const Options paths({{"config", raw[command]["config"]}});
      const fs::path config_path = paths.Path("config");
      if (!fs::exists(config_path)) {
        throw ConfigError("config file " + config_path.string() + " not found");
      }
      values = ParseConfigText(ReadFileBytes(config_path));
    }
    for (const auto& [key, option] : opts[command]) {
      if (key != "config" && option->count() > 0) values[key] = raw[command][key];
    }
    const Options o(std::move(values));
    if (command == kSynth) return CmdSynth(o, out);
    if (command == kIngest) return CmdIngest(o, out, err);
    if (command == kTrain) return CmdTrain(o, out);
    if (command == kEvaluate) return CmdEvaluate(o, out);
    if (command == kPredict) return CmdPredict(o, out);
    if (command == kGradcheck) return CmdGradcheck(o, out);
    return CmdExportAttention(o, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DegenerateScalerError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const StateError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << "\n";
    return kContractError;
  } catch (const ShapeError& e) {
    err << "contract error: " << e.what() << "\n";
    return kContractError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  }
}

}  // namespace atfm::cli
