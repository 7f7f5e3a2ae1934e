#include "edgecap/cli/table.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "edgecap/error.hpp"

namespace edgecap::cli {

namespace {

std::string format_value(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad_right(const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); }
std::string pad_left(const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; }

}  // namespace

RenderedTable emit_table(const Table& t) {
  if (t.rows.empty()) throw ContractError("table '" + t.title + "' has no rows");
  if (t.precision.size() != t.columns.size()) throw ContractError("table: one precision per column is required");
  for (const auto& r : t.rows) {
    if (r.values.size() != t.columns.size()) {
      throw ContractError("table: row '" + r.label + "' has " + std::to_string(r.values.size()) + " values for " +
                          std::to_string(t.columns.size()) + " columns");
    }
  }

  std::vector<std::vector<std::string>> cells;
  std::size_t label_w = t.label_header.size();
  std::vector<std::size_t> widths;
  for (const auto& c : t.columns) widths.push_back(c.size());
  for (const auto& r : t.rows) {
    label_w = std::max(label_w, r.label.size());
    auto& row = cells.emplace_back();
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      row.push_back(format_value(r.values[c], t.precision[c]));
      widths[c] = std::max(widths[c], row.back().size());
    }
  }

  std::string text;
  if (!t.title.empty()) text += t.title + "\n";
  std::string header = pad_right(t.label_header, label_w);
  std::size_t total = label_w;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    header += "  " + pad_left(t.columns[c], widths[c]);
    total += 2 + widths[c];
  }
  text += header + "\n" + std::string(total, '-') + "\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::string line = pad_right(t.rows[r].label, label_w);
    for (std::size_t c = 0; c < t.columns.size(); ++c) line += "  " + pad_left(cells[r][c], widths[c]);
    text += line + "\n";
  }

  nlohmann::ordered_json j;
  j["title"] = t.title;
  j["columns"] = t.columns;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json row;
    row["label"] = r.label;
    nlohmann::ordered_json values;
    for (std::size_t c = 0; c < t.columns.size(); ++c) values[t.columns[c]] = r.values[c];
    row["values"] = values;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return {text, j.dump(2) + "\n"};
}

Table metric_table(std::string title, const std::vector<std::pair<std::string, metrics::MetricReport>>& rows) {
  Table t;
  t.title = std::move(title);
  for (const char* name : metrics::MetricReport::column_names()) t.columns.emplace_back(name);
  t.precision.assign(t.columns.size(), 4);
  for (const auto& [label, report] : rows) {
    const auto cols = report.columns();
    t.rows.push_back({label, std::vector<double>(cols.begin(), cols.end())});
  }
  return t;
}

}  // namespace edgecap::cli
