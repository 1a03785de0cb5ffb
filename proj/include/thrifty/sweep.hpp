#pragma once

// Trade-off sweeps: train a list of model configurations with one shared
// training configuration and tabulate size, cost and accuracy.

#include <filesystem>
#include <string>
#include <vector>

#include "thrifty/metrics.hpp"
#include "thrifty/model_spec.hpp"
#include "thrifty/train.hpp"

namespace thrifty {

struct SweepPoint {
  std::string name;
  ModelSpec spec;
};

// INI manifest, one section per point; keys as in apply_keys(). Keys before
// the first section are defaults for every point.
//
//   budget = 40000
//   iterations = 30
//   [pools1]
//   pools = 1
//   [pools4]
//   pools = 4
std::vector<SweepPoint> parse_sweep_manifest(const std::string& text, const ModelSpec& defaults = {});
std::vector<SweepPoint> load_sweep_manifest(const std::filesystem::path& path, const ModelSpec& defaults = {});

struct SweepRow {
  std::string name;
  std::size_t filters = 0;
  std::size_t iterations = 0;
  std::size_t history = 0;
  std::size_t n_pools = 0;
  std::uint64_t params_total = 0;
  std::uint64_t macs_total = 0;
  double test_acc = 0.0;      // mean over repeats
  double test_acc_std = 0.0;  // population std over repeats, 0 for one repeat
  std::size_t repeats = 0;
  bool ok = false;
  std::string error;
};

// Repeat r trains with seed config.seed + r for both initialization and
// batching. A failing point yields a row with ok = false and the sweep
// continues. Rows are in manifest order.
std::vector<SweepRow> sweep(const std::vector<SweepPoint>& points, const ImageDataset& train_set,
                            const ImageDataset& test_set, const TrainConfig& config, std::size_t repeats = 1);

CsvTable sweep_table(const std::vector<SweepRow>& rows);

}  // namespace thrifty
