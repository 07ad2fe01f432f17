// SPDX-License-Identifier: Apache-2.0

#include "moeskew/trace_io.hpp"

#include <cstring>
#include <limits>
#include <set>
#include <utility>

#include <fmt/format.h>
#include <zlib.h>

#include "json.hpp"
#include "moeskew/error.hpp"

namespace moeskew {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::int64_t as_int64(const json& v, std::string_view key) {
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw DataError(fmt::format("{}: integer {} exceeds 64-bit range", key, u));
    }
    return static_cast<std::int64_t>(u);
  }
  if (v.is_number_integer()) return v.get<std::int64_t>();
  throw DataError(fmt::format("{}: expected integer, got {}", key, v.type_name()));
}

int as_int(const json& v, std::string_view key) {
  const auto x = as_int64(v, key);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw DataError(fmt::format("{}: integer {} out of range", key, x));
  }
  return static_cast<int>(x);
}

std::string as_string(const json& v, std::string_view key) {
  if (!v.is_string()) throw DataError(fmt::format("{}: expected string, got {}", key, v.type_name()));
  return v.get<std::string>();
}

std::vector<Count> as_count_array(const json& v, std::string_view key) {
  if (!v.is_array()) throw DataError(fmt::format("{}: expected array, got {}", key, v.type_name()));
  std::vector<Count> out;
  out.reserve(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    try {
      out.push_back(as_int64(v[n], key));
    } catch (const DataError&) {
      throw DataError(fmt::format("{}[{}]: expected integer, got {}", key, n, v[n].dump()));
    }
  }
  return out;
}

std::vector<double> as_double_array(const json& v, std::string_view key) {
  if (!v.is_array()) throw DataError(fmt::format("{}: expected array, got {}", key, v.type_name()));
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    if (!v[n].is_number()) {
      throw DataError(fmt::format("{}[{}]: expected number, got {}", key, n, v[n].dump()));
    }
    out.push_back(v[n].get<double>());
  }
  return out;
}

json parse_object(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw DataError("not valid JSON");
  if (!j.is_object()) throw DataError(fmt::format("expected a JSON object, got {}", j.type_name()));
  return j;
}

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(fmt::format("missing required key \"{}\"", key));
  return *it;
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw DataError(fmt::format("unknown key \"{}\"", key));
  }
}

}  // namespace

std::string format_metadata(const TraceMetadata& meta) {
  ordered_json j;
  j["format"] = kTraceFormat;
  j["model"] = meta.model;
  j["condition"] = meta.condition;
  j["ep"] = meta.ep;
  j["tp"] = meta.tp;
  j["experts"] = meta.experts;
  j["topk"] = meta.topk;
  j["gbs"] = meta.gbs;
  j["seqlen"] = meta.seqlen;
  j["hidden"] = meta.hidden;
  j["bytes_per_elem"] = meta.bytes_per_elem;
  if (meta.local_tokens) j["local_tokens"] = *meta.local_tokens;
  if (meta.dispatcher_version) j["dispatcher_version"] = *meta.dispatcher_version;
  return j.dump();
}

std::string format_record(const StepRecord& rec) {
  ordered_json j;
  j["step"] = rec.step;
  j["layer"] = rec.layer;
  auto cells = rec.send_counts.row_major();
  j["send_counts"] = std::vector<Count>(cells.begin(), cells.end());
  if (rec.expert_loads) j["expert_loads"] = rec.expert_loads->counts;
  if (rec.rank_dispatch_ms) j["rank_dispatch_ms"] = *rec.rank_dispatch_ms;
  if (rec.timing_source) j["timing_source"] = *rec.timing_source;
  return j.dump();
}

TraceMetadata parse_metadata(std::string_view line) {
  const json j = parse_object(line);
  reject_unknown(j, {"format", "model", "condition", "ep", "tp", "experts", "topk", "gbs", "seqlen",
                     "hidden", "bytes_per_elem", "local_tokens", "dispatcher_version"});
  if (auto it = j.find("format"); it != j.end() && as_string(*it, "format") != kTraceFormat) {
    throw DataError(fmt::format("unsupported format \"{}\" (expected \"{}\")", it->get<std::string>(),
                                kTraceFormat));
  }
  TraceMetadata m;
  m.model = as_string(require(j, "model"), "model");
  m.condition = as_string(require(j, "condition"), "condition");
  m.ep = as_int(require(j, "ep"), "ep");
  m.tp = as_int(require(j, "tp"), "tp");
  m.experts = as_int(require(j, "experts"), "experts");
  m.topk = as_int(require(j, "topk"), "topk");
  m.gbs = as_int64(require(j, "gbs"), "gbs");
  m.seqlen = as_int64(require(j, "seqlen"), "seqlen");
  m.hidden = as_int64(require(j, "hidden"), "hidden");
  m.bytes_per_elem = as_int64(require(j, "bytes_per_elem"), "bytes_per_elem");
  if (auto it = j.find("local_tokens"); it != j.end()) m.local_tokens = as_int64(*it, "local_tokens");
  if (auto it = j.find("dispatcher_version"); it != j.end()) {
    m.dispatcher_version = as_string(*it, "dispatcher_version");
  }
  return m;
}

StepRecord parse_record(std::string_view line) {
  const json j = parse_object(line);
  reject_unknown(j, {"step", "layer", "send_counts", "expert_loads", "rank_dispatch_ms", "timing_source"});
  StepRecord r;
  r.step = as_int64(require(j, "step"), "step");
  r.layer = as_int(require(j, "layer"), "layer");
  auto cells = as_count_array(require(j, "send_counts"), "send_counts");
  std::size_t p = 0;
  while (p * p < cells.size()) ++p;
  if (p * p != cells.size() || p == 0) {
    throw DataError(fmt::format("send_counts has {} entries, which is not a non-zero perfect square",
                                cells.size()));
  }
  r.send_counts = SendCounts(static_cast<int>(p), std::move(cells));
  if (auto it = j.find("expert_loads"); it != j.end()) {
    r.expert_loads = ExpertLoads{as_count_array(*it, "expert_loads")};
  }
  if (auto it = j.find("rank_dispatch_ms"); it != j.end()) {
    r.rank_dispatch_ms = as_double_array(*it, "rank_dispatch_ms");
  }
  if (auto it = j.find("timing_source"); it != j.end()) {
    r.timing_source = as_string(*it, "timing_source");
  }
  return r;
}

// ---------------------------------------------------------------------------
// TraceReader

struct TraceReader::Impl {
  gzFile file = nullptr;
  std::filesystem::path path;
  std::size_t line = 0;
  std::size_t records = 0;
  std::set<std::pair<std::int64_t, int>> seen;

  ~Impl() {
    if (file) gzclose(file);
  }

  // Reads one line without the trailing newline. Returns false at EOF.
  bool getline(std::string& out) {
    out.clear();
    char buf[1 << 16];
    bool any = false;
    while (gzgets(file, buf, sizeof(buf)) != nullptr) {
      any = true;
      const auto n = std::strlen(buf);
      if (n > 0 && buf[n - 1] == '\n') {
        out.append(buf, n - 1);
        break;
      }
      out.append(buf, n);
    }
    if (!any) {
      int err = Z_OK;
      const char* msg = gzerror(file, &err);
      if (err != Z_OK && err != Z_STREAM_END) {
        throw IoError(fmt::format("{}: read failed: {}", path.string(), msg));
      }
      return false;
    }
    if (!out.empty() && out.back() == '\r') out.pop_back();
    ++line;
    return true;
  }
};

TraceReader::TraceReader(const std::filesystem::path& path) : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->file = gzopen(path.c_str(), "rb");
  if (!impl_->file) throw IoError(fmt::format("{}: cannot open for reading", path.string()));
  std::string first;
  do {
    if (!impl_->getline(first)) throw DataError(fmt::format("{}: empty trace file", path.string()));
  } while (first.find_first_not_of(" \t") == std::string::npos);
  try {
    metadata_ = parse_metadata(first);
    metadata_.validate();
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}:{}: metadata: {}", path.string(), impl_->line, e.what()));
  }
}

TraceReader::~TraceReader() = default;
TraceReader::TraceReader(TraceReader&&) noexcept = default;
TraceReader& TraceReader::operator=(TraceReader&&) noexcept = default;

std::size_t TraceReader::line_number() const { return impl_->line; }

std::optional<StepRecord> TraceReader::next() {
  std::string text;
  while (impl_->getline(text)) {
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    const auto n = impl_->records;
    try {
      StepRecord rec = parse_record(text);
      validate_record(metadata_, rec);
      if (!impl_->seen.emplace(rec.step, rec.layer).second) {
        throw DataError(fmt::format("duplicate (step {}, layer {})", rec.step, rec.layer));
      }
      ++impl_->records;
      return rec;
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: record {}: {}", impl_->path.string(), impl_->line, n, e.what()));
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// TraceWriter

struct TraceWriter::Impl {
  gzFile file = nullptr;
  std::filesystem::path path;
  TraceMetadata meta;
  std::size_t records = 0;
  std::set<std::pair<std::int64_t, int>> seen;

  void put_line(const std::string& s) {
    if (gzwrite(file, s.data(), static_cast<unsigned>(s.size())) != static_cast<int>(s.size()) ||
        gzputc(file, '\n') != '\n') {
      int err = Z_OK;
      throw IoError(fmt::format("{}: write failed: {}", path.string(), gzerror(file, &err)));
    }
  }

  void close() {
    if (!file) return;
    const int rc = gzclose(file);
    file = nullptr;
    if (rc != Z_OK) throw IoError(fmt::format("{}: close failed (zlib error {})", path.string(), rc));
  }

  ~Impl() {
    try {
      close();
    } catch (...) {
    }
  }
};

TraceWriter::TraceWriter(const std::filesystem::path& path, const TraceMetadata& meta)
    : impl_(std::make_unique<Impl>()) {
  meta.validate();
  impl_->path = path;
  impl_->meta = meta;
  // "T" selects transparent (uncompressed) output.
  impl_->file = gzopen(path.c_str(), has_gz_suffix(path) ? "wb6" : "wbT");
  if (!impl_->file) throw IoError(fmt::format("{}: cannot open for writing", path.string()));
  impl_->put_line(format_metadata(meta));
}

TraceWriter::~TraceWriter() = default;
TraceWriter::TraceWriter(TraceWriter&&) noexcept = default;
TraceWriter& TraceWriter::operator=(TraceWriter&&) noexcept = default;

void TraceWriter::write(const StepRecord& rec) {
  if (!impl_->file) throw IoError(fmt::format("{}: writer already closed", impl_->path.string()));
  try {
    validate_record(impl_->meta, rec);
  } catch (const DataError& e) {
    throw DataError(fmt::format("record {} (step {}, layer {}): {}", impl_->records, rec.step, rec.layer,
                                e.what()));
  }
  if (!impl_->seen.emplace(rec.step, rec.layer).second) {
    throw DataError(fmt::format("record {}: duplicate (step {}, layer {})", impl_->records, rec.step,
                                rec.layer));
  }
  impl_->put_line(format_record(rec));
  ++impl_->records;
}

void TraceWriter::close() { impl_->close(); }

std::size_t TraceWriter::records_written() const { return impl_->records; }

DispatchTrace read_trace(const std::filesystem::path& path) {
  TraceReader reader(path);
  DispatchTrace trace;
  trace.metadata = reader.metadata();
  while (auto rec = reader.next()) trace.records.push_back(std::move(*rec));
  return trace;
}

void write_trace(const DispatchTrace& trace, const std::filesystem::path& path) {
  TraceWriter writer(path, trace.metadata);
  for (const auto& rec : trace.records) writer.write(rec);
  writer.close();
}

}  // namespace moeskew
