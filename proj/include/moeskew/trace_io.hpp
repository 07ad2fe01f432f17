// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "moeskew/trace.hpp"

namespace moeskew {

/// Identifier written in the metadata line's "format" key.
inline constexpr std::string_view kTraceFormat = "moe-dispatch-trace/1";

// Single-line JSON encodings. Keys are written in the documented order with
// no insignificant whitespace (see docs/trace_format.md).
std::string format_metadata(const TraceMetadata& meta);
std::string format_record(const StepRecord& rec);

/// Strict parse: unknown keys, wrong types, and out-of-range integers are
/// DataErrors. Does not check the record against metadata.
TraceMetadata parse_metadata(std::string_view line);
StepRecord parse_record(std::string_view line);

/// Streaming reader. Files ending in .gz are decompressed transparently
/// (plain files are accepted under any name). Every record returned by
/// next() has been validated against the metadata and checked for
/// (step, layer) uniqueness; errors carry the 1-based line number.
class TraceReader {
public:
  explicit TraceReader(const std::filesystem::path& path);
  ~TraceReader();
  TraceReader(TraceReader&&) noexcept;
  TraceReader& operator=(TraceReader&&) noexcept;

  const TraceMetadata& metadata() const { return metadata_; }

  /// Next record, or nullopt at end of file. Blank lines are skipped.
  std::optional<StepRecord> next();

  std::size_t line_number() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  TraceMetadata metadata_;
};

/// Streaming writer: holds at most one encoded record in memory. Paths
/// ending in .gz are gzip-compressed.
class TraceWriter {
public:
  TraceWriter(const std::filesystem::path& path, const TraceMetadata& meta);
  ~TraceWriter();
  TraceWriter(TraceWriter&&) noexcept;
  TraceWriter& operator=(TraceWriter&&) noexcept;

  /// Validates rec against the metadata, then appends one line.
  void write(const StepRecord& rec);

  /// Flushes and closes; throws IoError if the final flush fails. Called by
  /// the destructor (which swallows errors) if not called explicitly.
  void close();

  std::size_t records_written() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

DispatchTrace read_trace(const std::filesystem::path& path);
void write_trace(const DispatchTrace& trace, const std::filesystem::path& path);

}  // namespace moeskew
