#pragma once

#include <string>
#include <vector>

#include "edgecap/metrics/metrics.hpp"

namespace edgecap::cli {

struct TableRow {
  std::string label;
  std::vector<double> values;
};

struct Table {
  std::string title;
  std::string label_header = "Model";
  std::vector<std::string> columns;
  std::vector<int> precision;  // digits after the point, one per column
  std::vector<TableRow> rows;
};

struct RenderedTable {
  std::string text;
  std::string json;  // full-precision sidecar
};

// ContractError for a table without rows or with ragged rows.
RenderedTable emit_table(const Table& t);

// Metric columns in the fixed order BLEU-1..4, METEOR, ROUGE-L, CIDEr, four
// decimals.
Table metric_table(std::string title, const std::vector<std::pair<std::string, metrics::MetricReport>>& rows);

}  // namespace edgecap::cli
