#include "thrifty/sweep.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "thrifty/errors.hpp"

namespace thrifty {

std::vector<SweepPoint> parse_sweep_manifest(const std::string& text, const ModelSpec& defaults) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("sweep manifest: ") + e.what());
  }
  std::map<std::string, std::string> shared;
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::string>> sections;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    // The INI reader splits "1,2,1" into three inputs; list-valued keys want them back.
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    if (item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == "default")) {
      shared[item.name] = value;
      continue;
    }
    std::string section = item.parents[0];
    for (std::size_t i = 1; i < item.parents.size(); ++i) section += "." + item.parents[i];
    if (!sections.count(section)) order.push_back(section);
    sections[section][item.name] = value;
  }
  ModelSpec base = defaults;
  apply_keys(base, shared);
  std::vector<SweepPoint> points;
  for (const auto& name : order) {
    SweepPoint p{name, base};
    apply_keys(p.spec, sections[name]);
    points.push_back(std::move(p));
  }
  if (points.empty()) throw ConfigError("sweep manifest lists no [sections]");
  return points;
}

std::vector<SweepPoint> load_sweep_manifest(const std::filesystem::path& path, const ModelSpec& defaults) {
  if (!std::filesystem::exists(path)) throw ConfigError("sweep manifest not found: " + path.string());
  return parse_sweep_manifest(read_text_file(path), defaults);
}

std::vector<SweepRow> sweep(const std::vector<SweepPoint>& points, const ImageDataset& train_set,
                            const ImageDataset& test_set, const TrainConfig& config, std::size_t repeats) {
  if (repeats == 0) throw ConfigError("repeats must be >= 1");
  std::vector<SweepRow> rows;
  for (const auto& point : points) {
    SweepRow row;
    row.name = point.name;
    try {
      const ThriftyConfig mc =
          resolve(point.spec, train_set.images.shape().h, train_set.images.shape().w);
      const ParamCount pc = param_count(mc);
      row.filters = mc.filters;
      row.iterations = mc.iterations;
      row.history = mc.history;
      row.n_pools = mc.schedule.pool_count();
      row.params_total = pc.total;
      row.macs_total = mac_count(mc, train_set.images.shape().h, train_set.images.shape().w).total;
      std::vector<double> accs;
      for (std::size_t r = 0; r < repeats; ++r) {
        TrainConfig tc = config;
        tc.seed = config.seed + r;
        ThriftyModel<float> model(mc, tc.seed);
        accs.push_back(train(model, train_set, test_set, tc).final_test_acc);
      }
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      row.test_acc = mean;
      row.test_acc_std = std::sqrt(var / static_cast<double>(accs.size()));
      row.repeats = repeats;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      row.test_acc = NAN;
      row.test_acc_std = NAN;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

CsvTable sweep_table(const std::vector<SweepRow>& rows) {
  CsvTable t;
  t.columns = {"name",       "filters",  "iterations",   "history", "n_pools", "params_total",
               "macs_total", "test_acc", "test_acc_std", "repeats", "status"};
  for (const auto& r : rows) {
    std::string status = r.ok ? "ok" : "failed: " + r.error;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    auto n = [](auto v) { return format_number(static_cast<long long>(v)); };
    t.rows.push_back({r.name, n(r.filters), n(r.iterations), n(r.history), n(r.n_pools), n(r.params_total),
                      n(r.macs_total), format_number(r.test_acc), format_number(r.test_acc_std), n(r.repeats),
                      status});
  }
  return t;
}

}  // namespace thrifty
