#pragma once

// Budget-first model description: structural hyperparameters plus either an
// explicit filter count or a parameter budget that the planner solves for f.

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "thrifty/config.hpp"
#include "thrifty/planner.hpp"

namespace thrifty {

struct ModelSpec {
  std::size_t filters = 0;  // 0: solve from budget
  std::uint64_t budget = 40000;
  BudgetConvention convention = BudgetConvention::total;
  std::size_t iterations = 15;
  std::size_t history = 0;
  std::size_t kernel = 3;
  ConvMode conv_mode = ConvMode::classical;
  Activation activation = Activation::relu;
  PoolOrder pool_order = PoolOrder::pool_then_normalize;
  std::size_t pools = 4;
  Placement placement = Placement::regular;
  std::string schedule;  // comma list of 1/2 factors, used with Placement::explicit_list
  std::size_t num_classes = 10;
  std::size_t input_channels = 3;
};

// Solves f if needed, builds and validates the config for an HxW input.
ThriftyConfig resolve(const ModelSpec& spec, std::size_t input_h = 32, std::size_t input_w = 32);

// Applies key = value overrides (keys as the ModelSpec field names; "schedule"
// also sets placement to explicit). Unknown keys throw ConfigError.
void apply_keys(ModelSpec& spec, const std::map<std::string, std::string>& keys);

std::size_t parse_size(const std::string& key, const std::string& value);

}  // namespace thrifty
