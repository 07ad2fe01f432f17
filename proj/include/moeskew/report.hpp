// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "moeskew/analysis.hpp"

namespace moeskew {

using Json = nlohmann::ordered_json;

/// A table bound for a versioned CSV file. schema names the column layout,
/// e.g. "moeskew.analyze/1"; docs/csv_schemas.md lists every schema.
struct CsvTable {
  std::string schema;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

/// Shortest decimal that round-trips the double; "inf"/"-inf"/"nan" for
/// non-finite values. Locale independent.
std::string format_number(double v);
std::string format_optional(const std::optional<double>& v);

/// Writes two comment lines ("# schema: ..." and "# config: <compact
/// JSON>"), the column header, then the rows. Fields containing a comma,
/// quote, or newline are quoted. Throws IoError on failure.
void write_csv(std::ostream& out, const CsvTable& table, const Json& config);
void write_csv(const std::filesystem::path& path, const CsvTable& table, const Json& config);

/// Parsed CSV: comment lines (leading '#') and blank lines are skipped, the
/// first remaining line is the header. Quoted fields are unquoted.
struct CsvDocument {
  std::string schema;  // from a "# schema:" line, empty if absent
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
};

CsvDocument read_csv(const std::filesystem::path& path);

// Factorial cell tables ("moeskew.cells/1").

CsvTable cells_table(std::span<const CellResult> cells);

/// Reads a cell table. Required columns: architecture, condition,
/// gini_mean. Optional: replicate, the other gini_* summary columns,
/// alpha_*, max_mean_*, p99_ms. Missing summary columns default to the
/// mean (single-value window). Throws DataError naming the line on bad
/// values.
std::vector<CellResult> read_cells_csv(const std::filesystem::path& path);

/// Per-architecture rows of a factorial matrix ("moeskew.factorial_rows/1").
CsvTable factorial_rows_table(const FactorialMatrix& m);

/// One row per (architecture, condition) grid position, missing cells
/// included with an empty value ("moeskew.heatmap/1").
CsvTable heatmap_table(const FactorialMatrix& m);

struct HeatmapStyle {
  double cell_width = 104.0;
  double cell_height = 40.0;
  double label_width = 96.0;
  double header_height = 36.0;
  std::string title = "Per-rank routing Gini";
};

/// Standalone SVG: one cell per grid position coloured from green (lowest
/// value in the matrix) to red (highest), value labels to three decimals,
/// the per-row minimum bold with a trailing star, and missing cells drawn
/// as hatched gaps labelled "n/a". The resolved config is embedded in a
/// <desc> element. Throws InvalidArgument on an empty matrix.
std::string render_heatmap(const FactorialMatrix& m, const Json& config, const HeatmapStyle& style = {});

/// Writes render_heatmap to svg_path and, when given, heatmap_table to
/// plot_data_path.
void emit_heatmap(const FactorialMatrix& m, const std::filesystem::path& svg_path, const Json& config,
                  const std::optional<std::filesystem::path>& plot_data_path = std::nullopt,
                  const HeatmapStyle& style = {});

/// JSON form of a metric summary (mean, stdev, p50, p99, min, max, count).
Json to_json(const MetricSummary& s);

/// Writes pretty-printed JSON followed by a newline. Throws IoError.
void write_json(const std::filesystem::path& path, const Json& value);

}  // namespace moeskew
