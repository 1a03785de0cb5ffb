#include "thrifty/model_spec.hpp"

#include <charconv>

#include "thrifty/errors.hpp"

namespace thrifty {

std::size_t parse_size(const std::string& key, const std::string& value) {
  unsigned long long v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

ThriftyConfig resolve(const ModelSpec& spec, std::size_t input_h, std::size_t input_w) {
  ThriftyConfig c;
  c.kernel_h = c.kernel_w = spec.kernel;
  c.iterations = spec.iterations;
  c.history = spec.history;
  c.conv_mode = spec.conv_mode;
  c.activation = spec.activation;
  c.pool_order = spec.pool_order;
  c.num_classes = spec.num_classes;
  c.input_channels = spec.input_channels;
  if (spec.filters > 0) {
    c.filters = spec.filters;
  } else {
    FilterProblem p;
    p.budget = spec.budget;
    p.iterations = spec.iterations;
    p.history = spec.history;
    p.kernel_h = p.kernel_w = spec.kernel;
    p.conv_mode = spec.conv_mode;
    p.num_classes = spec.num_classes;
    p.convention = spec.convention;
    c.filters = solve_filters(p);
  }
  if (spec.placement == Placement::explicit_list) {
    const DownsampleSchedule s = parse_schedule(spec.schedule);
    c.schedule = make_schedule(spec.iterations, s.pool_count(), Placement::explicit_list,
                               std::min(input_h, input_w), s.factors);
  } else {
    c.schedule = make_schedule(spec.iterations, spec.pools, spec.placement, std::min(input_h, input_w));
  }
  c.validate();
  c.validate_input(input_h, input_w);
  return c;
}

void apply_keys(ModelSpec& spec, const std::map<std::string, std::string>& keys) {
  for (const auto& [key, value] : keys) {
    if (key == "filters") spec.filters = parse_size(key, value);
    else if (key == "budget") spec.budget = parse_size(key, value);
    else if (key == "budget_convention") spec.convention = parse_budget_convention(value);
    else if (key == "iterations") spec.iterations = parse_size(key, value);
    else if (key == "history") spec.history = parse_size(key, value);
    else if (key == "kernel") spec.kernel = parse_size(key, value);
    else if (key == "conv_mode") spec.conv_mode = parse_conv_mode(value);
    else if (key == "activation") spec.activation = parse_activation(value);
    else if (key == "pool_order") spec.pool_order = parse_pool_order(value);
    else if (key == "pools") spec.pools = parse_size(key, value);
    else if (key == "placement") spec.placement = parse_placement(value);
    else if (key == "schedule") {
      spec.schedule = value;
      spec.placement = Placement::explicit_list;
    } else if (key == "num_classes") spec.num_classes = parse_size(key, value);
    else if (key == "input_channels") spec.input_channels = parse_size(key, value);
    else throw ConfigError("unknown model key '" + key + "'");
  }
}

}  // namespace thrifty
