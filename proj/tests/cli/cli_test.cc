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


#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "atfm/container.h"
#include "atfm/data.h"
#include "atfm/error.h"
#include "atfm_cli/cli.h"
#include "test_util.h"

namespace atfm::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result Atfm(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = Run(args, out, err);
  return {code, out.str(), err.str()};
}

void WriteText(const fs::path& p, const std::string& text) { WriteFileBytes(p, text); }

const fs::path kData = ATFM_TEST_DATA_DIR;

std::vector<std::string> GoldenIngest(const fs::path& out) {
  return {"ingest", "--trips", (kData / "golden_trips.csv").string(), "--out", out.string(),
          "--grid", "4x4", "--bbox", "40.0,-74.0,40.4,-73.6", "--interval-mins", "60",
          "--start", "2016-01-01", "--days", "1"};
}

TEST_CASE("help enumerates every schema key") {
  const Result r = Atfm({"--help"});
  CHECK(r.code == kOk);
  for (const FlagSpec& f : Schema()) {
    CHECK_MESSAGE(r.out.find("--" + f.key + " ") != std::string::npos, f.key);
  }
  for (const auto& [name, description] : Commands()) {
    CHECK(r.out.find(name) != std::string::npos);
    const Result sub = Atfm({name, "--help"});
    CHECK(sub.code == kOk);
    for (const FlagSpec& f : Schema()) {
      const bool applies =
          std::find(f.commands.begin(), f.commands.end(), name) != f.commands.end();
      CHECK_MESSAGE((sub.out.find("--" + f.key + " ") != std::string::npos) == applies,
                    (name + " --" + f.key));
    }
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(Atfm({}).code == kUsage);
  CHECK(Atfm({"frobnicate"}).code == kUsage);
  CHECK(Atfm({"synth", "--no-such-flag", "1"}).code == kUsage);
  CHECK(Atfm({"synth", "--out", "x", "--grid", "8by8"}).code == kUsage);
  CHECK(Atfm({"synth", "--out", "x", "--interval-mins", "7"}).code == kUsage);
  CHECK(Atfm({"synth", "--out", "x", "--days", "two"}).code == kUsage);
  CHECK(Atfm({"synth"}).code == kUsage);
  CHECK(Atfm({"gradcheck", "--horizon", "2"}).code == kUsage);
  CHECK(Atfm({"synth", "--out", "x", "--config", "/nonexistent/cfg"}).code == kUsage);
}

TEST_CASE("config files are validated and flags win") {
  testing::TempDir dir;
  const fs::path cfg = dir.path() / "run.cfg";
  WriteText(cfg, "# synthetic run\ngrid = 2x3\ndays=2\ninterval-mins=360\n");
  const fs::path out = dir.path() / "s.atfm";
  REQUIRE(Atfm({"synth", "--config", cfg.string(), "--out", out.string(), "--days", "3"}).code ==
          kOk);
  const data::FlowSeries s = data::LoadSeries(out);
  CHECK(s.grid().rows == 2);
  CHECK(s.grid().cols == 3);
  CHECK(s.size() == 12);

  WriteText(cfg, "grid=2x3\ncolour=blue\n");
  const Result bad = Atfm({"synth", "--config", cfg.string(), "--out", out.string()});
  CHECK(bad.code == kUsage);
  CHECK(bad.err.find("unknown key 'colour'") != std::string::npos);
  CHECK_THROWS_AS(ParseConfigText("days=1\ndays=2\n"), ConfigError);
  CHECK_THROWS_AS(ParseConfigText("days\n"), ConfigError);
  CHECK_THROWS_AS(ParseConfigText("config=x\n"), ConfigError);
  CHECK(ParseConfigText("  lr = 1e-3  # fast\n\n").at("lr") == "1e-3");
}

TEST_CASE("relative paths resolve against ATFM_DATA_DIR") {
  testing::TempDir dir;
  ::setenv("ATFM_DATA_DIR", dir.path().c_str(), 1);
  const Result r = Atfm({"synth", "--out", "sub/s.atfm", "--grid", "2x2", "--days", "1"});
  ::unsetenv("ATFM_DATA_DIR");
  CHECK(r.code == kOk);
  CHECK(fs::exists(dir.path() / "sub" / "s.atfm"));
  CHECK(fs::exists(dir.path() / "sub" / "s.atfm.json"));
}

TEST_CASE("ingest golden fixture is byte-stable") {
  testing::TempDir dir;
  const fs::path a = dir.path() / "a.atfm", b = dir.path() / "b.atfm";
  const Result r = Atfm(GoldenIngest(a));
  REQUIRE_MESSAGE(r.code == kOk, r.err);
  CHECK(r.out.find("20 read, 19 kept, 1 malformed") != std::string::npos);
  REQUIRE(Atfm(GoldenIngest(b)).code == kOk);
  const std::string golden = ReadFileBytes(kData / "golden_series.atfm");
  CHECK(ReadFileBytes(a) == golden);
  CHECK(ReadFileBytes(b) == golden);
  CHECK(ReadFileBytes(data::SidecarPath(a)) == ReadFileBytes(data::SidecarPath(b)));
}

TEST_CASE("ingest edge cases") {
  testing::TempDir dir;
  const std::string header =
      "pickup_time,pickup_lat,pickup_lon,dropoff_time,dropoff_lat,dropoff_lon\n";
  const fs::path trips = dir.path() / "trips.csv";
  const fs::path out = dir.path() / "s.atfm";
  auto ingest = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = {"ingest", "--trips", trips.string(), "--out", out.string(),
                                     "--grid", "2x2", "--bbox", "0,0,1,1"};
    args.insert(args.end(), extra.begin(), extra.end());
    return Atfm(args);
  };

  SUBCASE("empty trips give an all-zero series") {
    WriteText(trips, header);
    const Result r = ingest({"--start", "2016-01-01", "--days", "2"});
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    CHECK(r.out.find("0 read, 0 kept") != std::string::npos);
    const data::FlowSeries s = data::LoadSeries(out);
    CHECK(s.size() == 96);
    CHECK(s.CountFlowGaps() == 0);
    for (int64_t i = 0; i < s.size(); ++i) CHECK(s.flow(i).MaxAbs() == 0.0);
    CHECK(ingest({}).code == kUsage);
  }

  SUBCASE("unparseable rows beyond the threshold abort with line numbers") {
    std::string text = header;
    for (int i = 0; i < 50; ++i) text += "1451606400,0.5,0.5,1451606500,0.5,0.5\n";
    text += "garbage\n";
    WriteText(trips, text);
    const Result r = ingest({});
    CHECK(r.code == kDataError);
    CHECK(r.err.find("lines 52") != std::string::npos);
    const Result lenient = ingest({"--max-bad-fraction", "0.05"});
    CHECK(lenient.code == kOk);
    CHECK(lenient.err.find("lines 52") != std::string::npos);
    CHECK(data::LoadSeries(out).size() == 48);
  }

  SUBCASE("missing externals give a series that training rejects") {
    WriteText(trips, header + "2016-01-01T00:10:00Z,0.5,0.5,2016-01-01T00:20:00Z,0.2,0.2\n");
    const Result r = ingest({"--externals", (dir.path() / "absent.csv").string()});
    REQUIRE(r.code == kOk);
    CHECK(r.err.find("not found") != std::string::npos);
    CHECK(data::LoadSeries(out).external_dim() == 0);
    const Result t = Atfm({"train", "--series", out.string(), "--checkpoint",
                           (dir.path() / "m.ckpt").string()});
    CHECK(t.code == kDataError);
    CHECK(t.err.find("no external factors") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path() / "m.ckpt"));
  }

  SUBCASE("externals are encoded") {
    WriteText(trips, header + "2016-01-01T00:10:00Z,0.5,0.5,2016-01-01T00:20:00Z,0.2,0.2\n");
    const fs::path ext = dir.path() / "ext.csv";
    WriteText(ext,
              "interval_start,weather,holiday,temperature,wind_speed\n"
              "2016-01-01T00:00:00Z,sunny,holiday,3.0,10\n"
              "2016-01-01T00:30:00Z,rain,holiday,5.0,20\n");
    const Result r = ingest({"--externals", ext.string()});
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    const data::FlowSeries s = data::LoadSeries(out);
    CHECK(s.external_dim() == 5);
    CHECK(s.has_external(1));
    CHECK_FALSE(s.has_external(2));
  }
}

class Workspace {
 public:
  Workspace() {
    series = dir.path() / "s.atfm";
    REQUIRE(Atfm({"synth", "--out", series.string(), "--grid", "3x3", "--days", "9",
                  "--interval-mins", "120", "--seed", "4"})
                .code == kOk);
  }
  Result Train(const fs::path& ckpt, std::vector<std::string> extra = {}) const {
    std::vector<std::string> args = {"train", "--series", series.string(), "--checkpoint",
                                     ckpt.string(), "--residual-units", "1", "--epochs", "1",
                                     "--batch", "8", "--test-days", "1", "--lr", "1e-3"};
    args.insert(args.end(), extra.begin(), extra.end());
    return Atfm(args);
  }

  testing::TempDir dir;
  fs::path series;
};

TEST_CASE("train, evaluate, predict and export") {
  Workspace ws;
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  const Result t = ws.Train(ckpt);
  REQUIRE_MESSAGE(t.code == kOk, t.err);
  CHECK(fs::exists(ckpt.string() + ".history.csv"));
  CHECK(ReadFileBytes(ckpt.string() + ".history.csv").rfind("step,epoch,split,loss,rmse\n", 0) ==
        0);

  // Identical inputs and seeds give identical outputs.
  const fs::path again = ws.dir.path() / "again.ckpt";
  REQUIRE(ws.Train(again).code == kOk);
  CHECK(ReadFileBytes(ckpt) == ReadFileBytes(again));
  CHECK(ReadFileBytes(ckpt.string() + ".history.csv") ==
        ReadFileBytes(again.string() + ".history.csv"));

  const fs::path report = ws.dir.path() / "report.json";
  const Result e = Atfm({"evaluate", "--series", ws.series.string(), "--checkpoint",
                         ckpt.string(), "--report", report.string()});
  REQUIRE_MESSAGE(e.code == kOk, e.err);
  CHECK(e.out.find("model spn") != std::string::npos);
  CHECK(e.out.find("model ha") != std::string::npos);
  const auto j = nlohmann::json::parse(ReadFileBytes(report));
  for (const char* slice : {"weekday", "weekend", "day", "night"}) {
    const auto& s = j["model"]["slices"][slice];
    if (s.is_null()) continue;
    CHECK(s["mae"].get<double>() <= s["rmse"].get<double>());
  }
  CHECK(j["model"]["overall"]["mae"].get<double>() <= j["model"]["overall"]["rmse"].get<double>());

  const fs::path pred = ws.dir.path() / "p.atfm";
  const Result p = Atfm({"predict", "--series", ws.series.string(), "--checkpoint", ckpt.string(),
                         "--target", "54", "--out", pred.string()});
  REQUIRE_MESSAGE(p.code == kOk, p.err);
  const TensorContainer maps = TensorContainer::Load(pred);
  CHECK(maps.size() == 1);
  CHECK(maps.Get("step1").shape() == Shape{2, 3, 3});
  const Result p2 = Atfm({"predict", "--series", ws.series.string(), "--checkpoint",
                          ckpt.string(), "--target", "54", "--out", pred.string() + "2"});
  CHECK(ReadFileBytes(pred) == ReadFileBytes(pred.string() + "2"));

  // The first slots of a day have no sequential window.
  CHECK(Atfm({"predict", "--series", ws.series.string(), "--checkpoint", ckpt.string(),
              "--target", "48", "--out", pred.string()})
            .code == kDataError);
  CHECK(Atfm({"predict", "--series", ws.series.string(), "--checkpoint", ckpt.string(),
              "--target", "54", "--horizon", "4", "--out", pred.string()})
            .code == kContractError);
  CHECK(Atfm({"predict", "--series", ws.series.string(), "--checkpoint", ckpt.string(),
              "--target", "9999", "--out", pred.string()})
            .code == kUsage);

  const fs::path attn = ws.dir.path() / "a.atfm";
  const Result a = Atfm({"export-attention", "--series", ws.series.string(), "--checkpoint",
                         ckpt.string(), "--target", "2024-01-09T12:00:00Z", "--out",
                         attn.string()});
  REQUIRE_MESSAGE(a.code == kOk, a.err);
  const TensorContainer arrays = TensorContainer::Load(attn);
  CHECK(arrays.Get("sequential/3").shape() == Shape{1, 3, 3});
  CHECK(arrays.Get("periodic/step1/1").shape() == Shape{1, 3, 3});
  const double r = arrays.Get("fusion_weight")[0];
  CHECK((r > 0.0 && r < 1.0));
}

TEST_CASE("horizon 4 predictions hold exactly four maps") {
  Workspace ws;
  const fs::path ckpt = ws.dir.path() / "long.ckpt";
  const Result t = ws.Train(ckpt, {"--horizon", "4"});
  REQUIRE_MESSAGE(t.code == kOk, t.err);
  const fs::path pred = ws.dir.path() / "p.atfm";
  const Result p = Atfm({"predict", "--series", ws.series.string(), "--checkpoint", ckpt.string(),
                         "--target", "53", "--horizon", "4", "--out", pred.string()});
  REQUIRE_MESSAGE(p.code == kOk, p.err);
  const TensorContainer maps = TensorContainer::Load(pred);
  CHECK(maps.size() == 4);
  for (int i = 1; i <= 4; ++i) CHECK(maps.Contains("step" + std::to_string(i)));
}

TEST_CASE("metadata mismatch refuses to run and prints a diff") {
  Workspace ws;
  const fs::path ckpt = ws.dir.path() / "m.ckpt";
  REQUIRE(ws.Train(ckpt).code == kOk);
  const fs::path other = ws.dir.path() / "other.atfm";
  REQUIRE(Atfm({"synth", "--out", other.string(), "--grid", "4x3", "--days", "9",
                "--interval-mins", "120"})
              .code == kOk);
  const Result e =
      Atfm({"evaluate", "--series", other.string(), "--checkpoint", ckpt.string()});
  CHECK(e.code == kContractError);
  CHECK(e.err.find("metadata mismatch") != std::string::npos);
  CHECK(e.err.find("grid") != std::string::npos);
  CHECK(e.out.empty());
}

TEST_CASE("gradcheck on the default tiny configuration") {
  const Result r = Atfm({"gradcheck", "--samples", "2"});
  CHECK_MESSAGE(r.code == kOk, (r.out + r.err));
  CHECK(r.out.find("passed") != std::string::npos);
  CHECK(r.out.find("tvf/fc1") != std::string::npos);
}

}  // namespace
}  // namespace atfm::cli
