#include "thrifty/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "thrifty/errors.hpp"

namespace thrifty {

namespace {

const std::vector<std::string> kLogColumns = {"epoch", "lr", "train_loss", "train_acc", "test_acc", "lambda"};

bool same_double(double a, double b) {
  return a == b || (std::isnan(a) && std::isnan(b));
}

}  // namespace

bool MetricRow::same_values(const MetricRow& o) const {
  return epoch == o.epoch && same_double(lr, o.lr) && same_double(train_loss, o.train_loss) &&
         same_double(train_acc, o.train_acc) && same_double(test_acc, o.test_acc) &&
         same_double(lambda, o.lambda);
}

void MetricLog::append(const MetricRow& row) {
  if (!rows.empty() && row.epoch <= rows.back().epoch) {
    throw ConfigError("metric log epochs must be strictly increasing");
  }
  for (double acc : {row.train_acc, row.test_acc}) {
    if (!(acc >= 0.0 && acc <= 100.0)) throw ConfigError("accuracy outside [0, 100]");
  }
  rows.push_back(row);
}

bool MetricLog::same_values(const MetricLog& other) const {
  if (rows.size() != other.rows.size()) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].same_values(other.rows[i])) return false;
  }
  return true;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw InternalError("format_number failed");
  return std::string(buf, ptr);
}

std::string format_number(long long value) { return std::to_string(value); }

double parse_number(const std::string& cell) {
  if (cell == "nan") return NAN;
  if (cell == "inf") return INFINITY;
  if (cell == "-inf") return -INFINITY;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError("not a number: '" + cell + "'");
  }
  return v;
}

std::string to_csv(const CsvTable& table) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(table.columns);
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw InternalError("csv row width mismatch");
    line(row);
  }
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (header) {
      t.columns = std::move(cells);
      header = false;
    } else {
      if (cells.size() != t.columns.size()) {
        throw FormatError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(t.columns.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (header) throw FormatError("csv is empty");
  return t;
}

CsvTable metric_log_table(const MetricLog& log) {
  CsvTable t;
  t.columns = kLogColumns;
  for (const auto& r : log.rows) {
    t.rows.push_back({format_number(static_cast<long long>(r.epoch)), format_number(r.lr),
                      format_number(r.train_loss), format_number(r.train_acc), format_number(r.test_acc),
                      format_number(r.lambda)});
  }
  return t;
}

MetricLog metric_log_from_table(const CsvTable& table) {
  if (table.columns != kLogColumns) throw FormatError("not a metric log: unexpected columns");
  MetricLog log;
  for (const auto& cells : table.rows) {
    MetricRow r;
    r.epoch = static_cast<std::size_t>(parse_number(cells[0]));
    r.lr = parse_number(cells[1]);
    r.train_loss = parse_number(cells[2]);
    r.train_acc = parse_number(cells[3]);
    r.test_acc = parse_number(cells[4]);
    r.lambda = parse_number(cells[5]);
    log.append(r);
  }
  return log;
}

CsvTable activation_matrix_table(const std::vector<double>& matrix, std::size_t rows, std::size_t cols) {
  if (matrix.size() != rows * cols) throw InternalError("activation matrix size mismatch");
  CsvTable t;
  t.columns.push_back("iteration");
  for (std::size_t c = 0; c < cols; ++c) t.columns.push_back("f" + std::to_string(c));
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::string> cells{format_number(static_cast<long long>(r))};
    for (std::size_t c = 0; c < cols; ++c) cells.push_back(format_number(matrix[r * cols + c]));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  write_text_file(path, to_csv(table));
}

void write_csv(const std::filesystem::path& path, const MetricLog& log) {
  write_csv(path, metric_log_table(log));
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text_file(path)); }

MetricLog read_metric_log(const std::filesystem::path& path) { return metric_log_from_table(read_csv(path)); }

}  // namespace thrifty
