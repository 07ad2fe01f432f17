// SPDX-License-Identifier: Apache-2.0

#include "moeskew/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "moeskew/error.hpp"

namespace moeskew {

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) {
    throw InvalidArgument(fmt::format("csv {}: row has {} fields, header has {}", schema, row.size(), columns.size()));
  }
  rows.push_back(std::move(row));
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_line(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_field(fields[i]);
  }
  out << '\n';
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError(fmt::format("line {}: unterminated quoted field", line_no));
  out.push_back(std::move(field));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("{}: cannot open for writing", path.string()));
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("{}: write failed", path.string()));
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table, const Json& config) {
  out << "# schema: " << table.schema << '\n';
  out << "# config: " << config.dump() << '\n';
  write_line(out, table.columns);
  for (const auto& row : table.rows) write_line(out, row);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table, const Json& config) {
  auto out = open_output(path);
  write_csv(out, table, config);
  finish(out, path);
}

std::optional<std::size_t> CsvDocument::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  return std::nullopt;
}

CsvDocument read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("{}: cannot open", path.string()));
  CsvDocument doc;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view tag = "# schema:";
      if (line.rfind(tag, 0) == 0) doc.schema = trim(line.substr(tag.size()));
      continue;
    }
    auto fields = split_csv_line(line, line_no);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      doc.columns = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != doc.columns.size()) {
      throw DataError(fmt::format("{}:{}: {} fields, header has {}", path.string(), line_no, fields.size(),
                                  doc.columns.size()));
    }
    doc.rows.push_back(std::move(fields));
  }
  if (!have_header) throw DataError(fmt::format("{}: no header row", path.string()));
  return doc;
}

// ---------------------------------------------------------------------------
// Cell tables

namespace {

const std::vector<std::string> kSummaryFields = {"mean", "stdev", "p50", "p99", "min", "max", "count"};

void append_summary(std::vector<std::string>& row, const std::optional<MetricSummary>& s) {
  if (!s) {
    row.insert(row.end(), kSummaryFields.size(), std::string());
    return;
  }
  for (double v : {s->mean, s->stdev, s->p50, s->p99, s->min, s->max}) row.push_back(format_number(v));
  row.push_back(std::to_string(s->count));
}

double parse_double(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (text.empty() || used != text.size()) throw DataError(fmt::format("{}: \"{}\" is not a number", where, text));
  return v;
}

std::optional<MetricSummary> parse_summary(const CsvDocument& doc, const std::vector<std::string>& row,
                                           const std::string& prefix, const std::string& where) {
  const auto mean_col = doc.column(prefix + "_mean");
  if (!mean_col || row[*mean_col].empty()) return std::nullopt;
  MetricSummary s;
  s.mean = parse_double(row[*mean_col], where + ": " + prefix + "_mean");
  s.p50 = s.p99 = s.min = s.max = s.mean;
  s.count = 1;
  auto field = [&](const char* name, double& dst) {
    const auto col = doc.column(prefix + "_" + name);
    if (col && !row[*col].empty()) dst = parse_double(row[*col], where + ": " + prefix + "_" + name);
  };
  field("stdev", s.stdev);
  field("p50", s.p50);
  field("p99", s.p99);
  field("min", s.min);
  field("max", s.max);
  double count = 1.0;
  field("count", count);
  if (!(count >= 1.0) || count != std::floor(count)) {
    throw DataError(fmt::format("{}: {}_count must be a positive integer", where, prefix));
  }
  s.count = static_cast<std::size_t>(count);
  return s;
}

}  // namespace

CsvTable cells_table(std::span<const CellResult> cells) {
  CsvTable t;
  t.schema = "moeskew.cells/1";
  t.columns = {"architecture", "condition", "replicate"};
  for (const char* prefix : {"gini", "alpha", "max_mean"}) {
    for (const auto& f : kSummaryFields) t.columns.push_back(std::string(prefix) + "_" + f);
  }
  t.columns.push_back("p99_ms");
  for (const auto& c : cells) {
    std::vector<std::string> row{to_string(c.architecture), to_string(c.condition), std::to_string(c.replicate)};
    append_summary(row, c.gini);
    append_summary(row, c.alpha);
    append_summary(row, c.max_mean);
    row.push_back(format_optional(c.p99_ms));
    t.add_row(std::move(row));
  }
  return t;
}

std::vector<CellResult> read_cells_csv(const std::filesystem::path& path) {
  const auto doc = read_csv(path);
  for (const char* required : {"architecture", "condition", "gini_mean"}) {
    if (!doc.column(required)) throw DataError(fmt::format("{}: missing column \"{}\"", path.string(), required));
  }
  std::vector<CellResult> out;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    const auto where = fmt::format("{}: row {}", path.string(), r + 1);
    CellResult c;
    try {
      c.architecture = parse_architecture(row[*doc.column("architecture")]);
      c.condition = parse_condition(row[*doc.column("condition")]);
    } catch (const InvalidArgument& e) {
      throw DataError(fmt::format("{}: {}", where, e.what()));
    }
    if (const auto col = doc.column("replicate"); col && !row[*col].empty()) {
      c.replicate = static_cast<int>(parse_double(row[*col], where + ": replicate"));
    }
    const auto gini = parse_summary(doc, row, "gini", where);
    if (!gini) throw DataError(fmt::format("{}: empty gini_mean", where));
    c.gini = *gini;
    c.alpha = parse_summary(doc, row, "alpha", where);
    c.max_mean = parse_summary(doc, row, "max_mean", where);
    if (const auto col = doc.column("p99_ms"); col && !row[*col].empty()) {
      c.p99_ms = parse_double(row[*col], where + ": p99_ms");
    }
    out.push_back(c);
  }
  return out;
}

CsvTable factorial_rows_table(const FactorialMatrix& m) {
  CsvTable t;
  t.schema = "moeskew.factorial_rows/1";
  t.columns = {"architecture", "best_condition", "best_gini", "mock_gini", "best_real_condition",
               "best_real_gini", "improvement_ratio", "missing_counterpart", "class"};
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto a = m.rows[i];
    const auto& s = m.summaries[i];
    const auto* mock = m.find(a, Condition::mock);
    std::vector<std::string> row{to_string(a)};
    row.push_back(s.best ? to_string(*s.best) : "");
    row.push_back(s.best ? format_number(m.find(a, *s.best)->gini.mean) : "");
    row.push_back(mock ? format_number(mock->gini.mean) : "");
    row.push_back(s.best_real ? to_string(*s.best_real) : "");
    row.push_back(s.best_real ? format_number(m.find(a, *s.best_real)->gini.mean) : "");
    row.push_back(format_optional(s.improvement_ratio));
    row.push_back(s.missing_counterpart ? "1" : "0");
    row.push_back(s.label ? to_string(*s.label) : "");
    t.add_row(std::move(row));
  }
  return t;
}

CsvTable heatmap_table(const FactorialMatrix& m) {
  CsvTable t;
  t.schema = "moeskew.heatmap/1";
  t.columns = {"row", "column", "architecture", "condition", "gini", "row_min", "missing"};
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      const auto a = m.rows[i];
      const auto c = m.columns[j];
      const auto* cell = m.find(a, c);
      const bool best = m.summaries[i].best && *m.summaries[i].best == c;
      t.add_row({std::to_string(i), std::to_string(j), to_string(a), to_string(c),
                 cell ? format_number(cell->gini.mean) : "", best ? "1" : "0", cell ? "0" : "1"});
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Heatmap

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// t in [0, 1]: hue 120 (green) down to 0 (red) at fixed saturation and
// lightness.
std::string ramp_colour(double t) {
  const double h = 120.0 * (1.0 - std::clamp(t, 0.0, 1.0));
  const double s = 0.65;
  const double l = 0.55;
  const double c = (1.0 - std::fabs(2.0 * l - 1.0)) * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0;
  if (hp < 1.0) {
    r = c;
    g = x;
  } else {
    r = x;
    g = c;
  }
  const double m = l - c / 2.0;
  auto channel = [&](double v) { return static_cast<int>(std::lround((v + m) * 255.0)); };
  return fmt::format("#{:02x}{:02x}{:02x}", channel(r), channel(g), channel(0.0));
}

}  // namespace

std::string render_heatmap(const FactorialMatrix& m, const Json& config, const HeatmapStyle& st) {
  if (m.rows.empty() || m.columns.empty()) throw InvalidArgument("heatmap: empty matrix");
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& [key, cell] : m.cells) {
    lo = any ? std::min(lo, cell.gini.mean) : cell.gini.mean;
    hi = any ? std::max(hi, cell.gini.mean) : cell.gini.mean;
    any = true;
  }
  const double width = st.label_width + st.cell_width * static_cast<double>(m.columns.size()) + 8.0;
  const double top = 2.0 * st.header_height;
  const double height = top + st.cell_height * static_cast<double>(m.rows.size()) + 8.0;

  std::ostringstream svg;
  svg << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"Helvetica, Arial, sans-serif\">\n",
      width, height);
  svg << "<desc>" << xml_escape(config.dump()) << "</desc>\n";
  svg << "<defs><pattern id=\"gap\" patternUnits=\"userSpaceOnUse\" width=\"8\" height=\"8\">"
         "<path d=\"M0,8 L8,0\" stroke=\"#b0b0b0\" stroke-width=\"1\"/></pattern></defs>\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
  svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n", width / 2.0,
                     st.header_height * 0.6, xml_escape(st.title));
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    const double cx = st.label_width + st.cell_width * (static_cast<double>(j) + 0.5);
    svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n", cx,
                       st.header_height * 1.6, xml_escape(display_name(m.columns[j])));
  }
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const double y = top + st.cell_height * static_cast<double>(i);
    svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"end\">{}</text>\n",
                       st.label_width - 8.0, y + st.cell_height * 0.6, xml_escape(display_name(m.rows[i])));
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      const double x = st.label_width + st.cell_width * static_cast<double>(j);
      const double cx = x + st.cell_width / 2.0;
      const double cy = y + st.cell_height * 0.6;
      const auto* cell = m.find(m.rows[i], m.columns[j]);
      if (!cell) {
        svg << fmt::format(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"url(#gap)\" stroke=\"#808080\" "
            "stroke-dasharray=\"4 3\"/>\n",
            x, y, st.cell_width, st.cell_height);
        svg << fmt::format(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#606060\">n/a</text>\n", cx, cy);
        continue;
      }
      const double t = hi > lo ? (cell->gini.mean - lo) / (hi - lo) : 0.5;
      svg << fmt::format(
          "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"/>\n", x, y,
          st.cell_width, st.cell_height, ramp_colour(t));
      const bool best = m.summaries[i].best && *m.summaries[i].best == m.columns[j];
      svg << fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\"{}>{:.3f}{}</text>\n", cx,
                         cy, best ? " font-weight=\"bold\"" : "", cell->gini.mean, best ? "*" : "");
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_heatmap(const FactorialMatrix& m, const std::filesystem::path& svg_path, const Json& config,
                  const std::optional<std::filesystem::path>& plot_data_path, const HeatmapStyle& style) {
  const auto svg = render_heatmap(m, config, style);
  auto out = open_output(svg_path);
  out << svg;
  finish(out, svg_path);
  if (plot_data_path) write_csv(*plot_data_path, heatmap_table(m), config);
}

Json to_json(const MetricSummary& s) {
  Json j;
  j["mean"] = s.mean;
  j["stdev"] = s.stdev;
  j["p50"] = s.p50;
  j["p99"] = s.p99;
  j["min"] = s.min;
  j["max"] = s.max;
  j["count"] = s.count;
  return j;
}

void write_json(const std::filesystem::path& path, const Json& value) {
  auto out = open_output(path);
  out << value.dump(2) << '\n';
  finish(out, path);
}

}  // namespace moeskew
