// SPDX-License-Identifier: Apache-2.0

#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

#include "moeskew/cli.hpp"
#include "moeskew/report.hpp"
#include "moeskew/trace_io.hpp"
#include "test_util.hpp"

namespace moeskew {
namespace {

using testing::TempDir;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_generate(const std::filesystem::path& path) {
  return {"--seed", "5", "generate", "--out", path.string(), "--alpha", "0.3", "--experts", "32", "--topk", "4",
          "--ep", "8", "--tokens", "4096", "--steps", "6", "--layers", "2", "--timing"};
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"analyze", "--trace", "/nonexistent.jsonl"}).code, cli::kUsage);
  EXPECT_EQ(run({"classify", "--mock", "0.3"}).code, cli::kUsage);
  EXPECT_EQ(run({"generate", "--out", "/tmp/x.jsonl"}).code, cli::kUsage);
  EXPECT_EQ(run({"generate", "--out", "/tmp/x.jsonl", "--preset", "extreme"}).code, cli::kUsage);
}

TEST(Cli, ClassifyPrintsLabel) {
  const auto r = run({"classify", "--mock", "0.235", "--real", "0.105"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("data_resilient"), std::string::npos);
  EXPECT_NE(run({"classify", "--mock", "0.382", "--real", "0.245"}).out.find("persistently_concentrated"),
            std::string::npos);
  EXPECT_EQ(run({"classify", "--mock", "-1", "--real", "0.1"}).code, cli::kUsage);
}

TEST(Cli, GenerateAnalyzeSimulate) {
  TempDir dir;
  const auto trace = dir / "t.jsonl.gz";
  auto g = run(small_generate(trace));
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(read_trace(trace).records.size(), 12u);

  const auto summary = dir / "a.json";
  auto a = run({"analyze", "--trace", trace.string(), "--out", (dir / "a.csv").string(), "--summary",
                summary.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto doc = read_csv(dir / "a.csv");
  EXPECT_EQ(doc.schema, "moeskew.analyze/1");
  EXPECT_EQ(doc.rows.size(), 12u);
  const auto j = nlohmann::json::parse(testing::slurp(summary));
  EXPECT_EQ(j["records"], 12);
  EXPECT_TRUE(j["p99_ms"].is_number());
  EXPECT_EQ(j["config"]["command"], "analyze");

  auto s = run({"simulate", "--trace", trace.string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("# schema: moeskew.simulate/1"), std::string::npos);

  auto d = run({"depth-profile", "--trace", trace.string()});
  ASSERT_EQ(d.code, 0) << d.err;
  auto l = run({"lags", "--trace", trace.string(), "--max-lag", "3", "--null-permutations", "20"});
  ASSERT_EQ(l.code, 0) << l.err;
}

TEST(Cli, MalformedTraceIsDataError) {
  TempDir dir;
  testing::spit(dir / "bad.jsonl", "{\"model\":\"m\"}\n");
  const auto r = run({"analyze", "--trace", (dir / "bad.jsonl").string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("bad.jsonl:1:"), std::string::npos) << r.err;
}

TEST(Cli, OutputsIndependentOfThreads) {
  TempDir dir;
  auto args1 = small_generate(dir / "one.jsonl");
  args1.insert(args1.begin(), {"--threads", "1"});
  auto args4 = small_generate(dir / "four.jsonl");
  args4.insert(args4.begin(), {"--threads", "4"});
  ASSERT_EQ(run(args1).code, 0);
  ASSERT_EQ(run(args4).code, 0);
  EXPECT_EQ(testing::slurp(dir / "one.jsonl"), testing::slurp(dir / "four.jsonl"));
}

TEST(Cli, ScanCorrelateFactorialReport) {
  TempDir dir;
  auto scan = run({"scan-ep", "--alpha", "0.3", "--experts", "32", "--topk", "2", "--ep", "4,8", "--warmup", "1",
                   "--measure", "3", "--tokens", "4096", "--mode", "fixed", "--summary",
                   (dir / "scan.json").string()});
  ASSERT_EQ(scan.code, 0) << scan.err;
  const auto sj = nlohmann::json::parse(testing::slurp(dir / "scan.json"));
  EXPECT_EQ(sj["loads_identical"], true);
  EXPECT_EQ(sj["flatness_pct"], 0.0);

  auto corr = run({"correlate", "--synthetic", "6", "--tokens", "4096", "--steps", "2", "--permutations", "50",
                   "--cells-out", (dir / "cells.csv").string()});
  ASSERT_EQ(corr.code, 0) << corr.err;
  EXPECT_NE(corr.out.find("pooled"), std::string::npos);

  const auto a = dir / "a.jsonl";
  const auto b = dir / "b.jsonl";
  ASSERT_EQ(run(small_generate(a)).code, 0);
  auto gb = small_generate(b);
  gb[6] = "2.0";  // --alpha value
  ASSERT_EQ(run(gb).code, 0);
  auto fac = run({"factorial", "--trace-cell", "mha:mock:" + a.string(), "--trace-cell",
                  "mha:wikitext:" + b.string(), "--out", (dir / "f.csv").string(), "--heatmap",
                  (dir / "f.svg").string(), "--summary", (dir / "f.json").string()});
  ASSERT_EQ(fac.code, 0) << fac.err;
  const auto fj = nlohmann::json::parse(testing::slurp(dir / "f.json"));
  EXPECT_GT(fj["rows"][0]["improvement_ratio"].get<double>(), 1.0);
  EXPECT_EQ(run({"factorial", "--trace-cell", "mha-mock-" + a.string()}).code, cli::kUsage);

  auto rep = run({"report", "--factorial", testing::fixture("reference_cells.csv").string(), "--heatmap",
                  (dir / "r.svg").string(), "--plot-data", (dir / "r.csv").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(testing::slurp(dir / "r.svg").find("0.105*"), std::string::npos);
}

}  // namespace
}  // namespace moeskew
