#pragma once

// Machine-readable experiment outputs: training curves, trade-off tables and
// the per-iteration mean-activation matrix. All files are comma-separated with
// a header row, '.' decimals, shortest round-trip number formatting and '\n'
// line endings, so identical inputs give byte-identical files.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace thrifty {

struct MetricRow {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // percent
  double test_acc = 0.0;   // percent
  double lambda = 0.0;
  double wall_time_s = 0.0;  // not serialized: it would break byte-identical reruns

  // Equality on every serialized field.
  bool same_values(const MetricRow& other) const;
};

struct MetricLog {
  std::vector<MetricRow> rows;

  // Throws ConfigError if epochs are not strictly increasing or an accuracy
  // is outside [0, 100].
  void append(const MetricRow& row);
  bool same_values(const MetricLog& other) const;
};

// Generic table: named columns of numbers plus an optional leading text column.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // already formatted cells
};

std::string format_number(double value);
std::string format_number(long long value);
double parse_number(const std::string& cell);

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text);

CsvTable metric_log_table(const MetricLog& log);
MetricLog metric_log_from_table(const CsvTable& table);

// T x f matrix, row-major; columns "iteration,f0,f1,...".
CsvTable activation_matrix_table(const std::vector<double>& matrix, std::size_t rows, std::size_t cols);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
void write_csv(const std::filesystem::path& path, const MetricLog& log);
CsvTable read_csv(const std::filesystem::path& path);
MetricLog read_metric_log(const std::filesystem::path& path);

}  // namespace thrifty
