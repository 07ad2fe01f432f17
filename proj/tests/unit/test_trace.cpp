// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <string>

#include <gtest/gtest.h>

#include "moeskew/analysis.hpp"
#include "moeskew/error.hpp"
#include "moeskew/trace.hpp"
#include "moeskew/trace_io.hpp"
#include "test_util.hpp"

namespace moeskew {
namespace {

using testing::TempDir;

TraceMetadata small_meta(int p = 4, int e = 8, int k = 2) {
  TraceMetadata m;
  m.model = "toy";
  m.condition = "mock";
  m.ep = p;
  m.experts = e;
  m.topk = k;
  m.gbs = 2;
  m.seqlen = 16;
  m.hidden = 64;
  m.bytes_per_elem = 2;
  return m;
}

StepRecord record_from(std::int64_t step, int layer, int p, std::vector<Count> cells) {
  StepRecord r;
  r.step = step;
  r.layer = layer;
  r.send_counts = SendCounts(p, std::move(cells));
  return r;
}

TEST(SendCounts, ConstructionChecksShapeAndSign) {
  EXPECT_THROW(SendCounts(2, {1, 2, 3}), DataError);
  EXPECT_THROW(SendCounts(2, {1, 2, 3, -1}), DataError);
  const SendCounts s(2, {1, 2, 3, 4});
  EXPECT_EQ(s.at(1, 0), 3);
  EXPECT_EQ(s.row_sum(0), 3);
  EXPECT_EQ(s.column_sum(1), 6);
  EXPECT_EQ(s.total(), 10);
}

TEST(RankLoads, ColumnSumsOfTwoByTwo) {
  const auto c = rank_loads_from(SendCounts(2, {1, 2, 3, 4}));
  EXPECT_EQ(c.counts, (std::vector<Count>{4, 6}));
}

TEST(RankLoads, ZeroMatrixGivesZeroVector) {
  EXPECT_EQ(rank_loads_from(SendCounts(3)).counts, (std::vector<Count>{0, 0, 0}));
}

TEST(RankLoads, MatchesDoubleLoopAndConservesTotal) {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<Count> cell(0, 1'000'000'000'000LL);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 8;
    std::vector<Count> data(64);
    for (auto& v : data) v = cell(gen);
    const SendCounts s(p, data);
    const auto c = rank_loads_from(s);
    Count sum = 0;
    for (int j = 0; j < p; ++j) {
      Count col = 0;
      for (int i = 0; i < p; ++i) col += data[static_cast<std::size_t>(i * p + j)];
      EXPECT_EQ(c.counts[static_cast<std::size_t>(j)], col);
      sum += c.counts[static_cast<std::size_t>(j)];
    }
    EXPECT_EQ(sum, s.total());
  }
}

TEST(Placement, RequiresBalancedBijection) {
  EXPECT_NO_THROW(Placement({0, 1, 0, 1}, 2));
  EXPECT_THROW(Placement({0, 0, 0, 1}, 2), InvalidArgument);
  EXPECT_THROW(Placement({0, 1, 2}, 2), InvalidArgument);
  EXPECT_THROW(Placement({0, 2, 0, 1}, 2), InvalidArgument);
}

TEST(Topology, NodeMapping) {
  TopologySpec t;
  t.p = 8;
  EXPECT_EQ(t.node_of(3), 0);
  EXPECT_EQ(t.node_of(4), 1);
  EXPECT_TRUE(t.same_node(4, 7));
  EXPECT_FALSE(t.same_node(3, 4));
  t.bw_inter = 0.0;
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST(Validation, RejectsNegativeCellNamingIt) {
  auto rec = record_from(0, 0, 2, {1, 2, 3, 4});
  rec.send_counts.at(1, 0) = -5;
  try {
    validate_record(small_meta(2, 4, 1), rec);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("send_counts[1][0]"), std::string::npos) << e.what();
  }
}

TEST(Validation, RejectsRankMismatch) {
  EXPECT_THROW(validate_record(small_meta(4), record_from(0, 0, 2, {1, 2, 3, 4})), DataError);
}

TEST(Validation, RejectsExpertLengthAndConservation) {
  auto meta = small_meta(2, 4, 1);
  auto rec = record_from(0, 0, 2, {1, 2, 3, 4});
  rec.expert_loads = ExpertLoads{{1, 2, 3}};
  EXPECT_THROW(validate_record(meta, rec), DataError);
  rec.expert_loads = ExpertLoads{{1, 2, 3, 3}};
  EXPECT_THROW(validate_record(meta, rec), DataError);
  rec.expert_loads = ExpertLoads{{1, 2, 3, 4}};
  EXPECT_NO_THROW(validate_record(meta, rec));
}

TEST(Validation, RejectsTimingLength) {
  auto rec = record_from(0, 0, 2, {1, 2, 3, 4});
  rec.rank_dispatch_ms = std::vector<double>{0.1};
  EXPECT_THROW(validate_record(small_meta(2, 4, 1), rec), DataError);
}

TEST(Validation, RejectsDuplicateStepLayer) {
  DispatchTrace t;
  t.metadata = small_meta(2, 4, 1);
  t.records = {record_from(0, 0, 2, {1, 0, 0, 1}), record_from(0, 0, 2, {1, 0, 0, 1})};
  EXPECT_THROW(t.validate(), DataError);
  t.records[1].layer = 1;
  EXPECT_NO_THROW(t.validate());
}

TEST(Validation, AcceptsGeneratorOutputAndRejectsDecrementedRow) {
  GenerateConfig cfg;
  cfg.metadata = small_meta(4, 8, 2);
  cfg.tokens_per_step = 64;
  cfg.steps = 5;
  cfg.layers = 2;
  cfg.alpha = 0.5;
  auto trace = generate_trace(cfg, 5);
  ASSERT_TRUE(trace.metadata.local_tokens.has_value());
  EXPECT_EQ(*trace.metadata.local_tokens, 16);
  EXPECT_NO_THROW(trace.validate());

  // Drop one token from a cell with a positive count: row sums no longer
  // equal local_tokens * topk.
  auto& s = trace.records[3].send_counts;
  for (int j = 0; j < s.p(); ++j) {
    if (s.at(1, j) > 0) {
      --s.at(1, j);
      break;
    }
  }
  trace.records[3].expert_loads.reset();
  try {
    trace.validate();
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(TraceIo, RoundTripIsExact) {
  TempDir dir;
  DispatchTrace t;
  t.metadata = small_meta(2, 4, 1);
  t.metadata.dispatcher_version = "toy-1";
  auto r0 = record_from(0, 0, 2, {5, 1, 0, 6});
  r0.expert_loads = ExpertLoads{{3, 2, 4, 3}};
  r0.rank_dispatch_ms = std::vector<double>{0.1, 1.0 / 3.0};
  r0.timing_source = "cuda_event";
  auto r1 = record_from(1, 3, 2, {0, 0, 0, 0});
  r1.rank_dispatch_ms = std::vector<double>{0.0, 0.0};
  t.records = {r0, r1};
  for (const char* name : {"t.jsonl", "t.jsonl.gz"}) {
    write_trace(t, dir / name);
    EXPECT_EQ(read_trace(dir / name), t) << name;
  }
}

TEST(TraceIo, RoundTripOverGeneratedTraces) {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GenerateConfig cfg;
    cfg.metadata = small_meta(4, 16, 3);
    cfg.tokens_per_step = 100 + 37 * seed;
    cfg.steps = 4;
    cfg.layers = 3;
    cfg.alpha = 0.2 + 0.3 * static_cast<double>(seed);
    cfg.timing_topology = TopologySpec{4, 2, 450e9, 25e9, 20e-6};
    const auto trace = generate_trace(cfg, seed);
    const auto path = dir / (seed % 2 ? "g.jsonl.gz" : "g.jsonl");
    write_trace(trace, path);
    EXPECT_EQ(read_trace(path), trace);
  }
}

TEST(TraceIo, EmptyTraceIsHeaderOnly) {
  TempDir dir;
  DispatchTrace t;
  t.metadata = small_meta();
  write_trace(t, dir / "e.jsonl");
  const auto text = testing::slurp(dir / "e.jsonl");
  EXPECT_EQ(text, format_metadata(t.metadata) + "\n");
  EXPECT_EQ(read_trace(dir / "e.jsonl"), t);
}

TEST(TraceIo, OneStepIsOneDataLine) {
  TempDir dir;
  DispatchTrace t;
  t.metadata = small_meta(2, 2, 1);
  t.records = {record_from(0, 0, 2, {1, 2, 3, 4})};
  write_trace(t, dir / "o.jsonl");
  EXPECT_EQ(testing::slurp(dir / "o.jsonl"),
            format_metadata(t.metadata) + "\n{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4]}\n");
}

TEST(TraceIo, MetadataLineIsBitExact) {
  auto m = small_meta(2, 4, 1);
  m.local_tokens = 3;
  EXPECT_EQ(format_metadata(m),
            "{\"format\":\"moe-dispatch-trace/1\",\"model\":\"toy\",\"condition\":\"mock\",\"ep\":2,\"tp\":1,"
            "\"experts\":4,\"topk\":1,\"gbs\":2,\"seqlen\":16,\"hidden\":64,\"bytes_per_elem\":2,"
            "\"local_tokens\":3}");
}

TEST(TraceIo, StrictParsing) {
  const std::string ok = "{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4]}";
  EXPECT_NO_THROW(parse_record(ok));
  EXPECT_THROW(parse_record("{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4],\"extra\":1}"), DataError);
  EXPECT_THROW(parse_record("{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3]}"), DataError);
  EXPECT_THROW(parse_record("{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4.5]}"), DataError);
  EXPECT_THROW(parse_record("{\"step\":\"0\",\"layer\":0,\"send_counts\":[1,2,3,4]}"), DataError);
  EXPECT_THROW(parse_record("{\"layer\":0,\"send_counts\":[1,2,3,4]}"), DataError);
  EXPECT_THROW(parse_record("not json"), DataError);
  EXPECT_THROW(parse_metadata("{\"format\":\"other/9\",\"model\":\"m\"}"), DataError);
}

TEST(TraceIo, ErrorsCarryLineNumbers) {
  TempDir dir;
  const auto meta = format_metadata(small_meta(2, 4, 1));
  testing::spit(dir / "bad.jsonl", meta + "\n{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4]}\n" +
                                       "{\"step\":1,\"layer\":0,\"send_counts\":[1,-2,3,4]}\n");
  try {
    read_trace(dir / "bad.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("bad.jsonl:3:"), std::string::npos) << what;
  }
  testing::spit(dir / "dup.jsonl", meta + "\n{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4]}\n" +
                                       "{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4]}\n");
  EXPECT_THROW(read_trace(dir / "dup.jsonl"), DataError);
  testing::spit(dir / "mismatch.jsonl", meta + "\n{\"step\":0,\"layer\":0,\"send_counts\":[1,2,3,4,5,6,7,8,9]}\n");
  EXPECT_THROW(read_trace(dir / "mismatch.jsonl"), DataError);
}

TEST(TraceIo, MissingFileIsIoError) {
  EXPECT_THROW(read_trace("/nonexistent/trace.jsonl"), IoError);
}

TEST(TraceIo, StreamingWriteOfTenThousandSteps) {
  TempDir dir;
  const int p = 16;
  auto meta = small_meta(p, 128, 8);
  meta.local_tokens = 32;
  const auto path = dir / "long.jsonl.gz";
  {
    TraceWriter writer(path, meta);
    SendCounts s(p);
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < p; ++j) s.at(i, j) = 16;
    }
    StepRecord rec;
    rec.send_counts = s;
    for (std::int64_t step = 0; step < 10'000; ++step) {
      rec.step = step;
      writer.write(rec);
    }
    writer.close();
    EXPECT_EQ(writer.records_written(), 10'000u);
  }
  TraceReader reader(path);
  std::int64_t expect = 0;
  while (auto rec = reader.next()) {
    ASSERT_EQ(rec->step, expect);
    ++expect;
  }
  EXPECT_EQ(expect, 10'000);
}

TEST(TraceIo, WriterValidatesRecords) {
  TempDir dir;
  TraceWriter writer(dir / "w.jsonl", small_meta(2, 4, 1));
  EXPECT_THROW(writer.write(record_from(0, 0, 3, std::vector<Count>(9, 1))), DataError);
  writer.write(record_from(0, 0, 2, {1, 1, 1, 1}));
  EXPECT_THROW(writer.write(record_from(0, 0, 2, {1, 1, 1, 1})), DataError);
}

}  // namespace
}  // namespace moeskew
