#include "thrifty/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "thrifty/errors.hpp"

namespace thrifty {

std::string_view to_string(ConvMode mode) {
  return mode == ConvMode::classical ? "classical" : "grouped";
}

std::string_view to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "tanh";
}

std::string_view to_string(PoolOrder order) {
  return order == PoolOrder::pool_then_normalize ? "pool_then_normalize" : "normalize_then_pool";
}

ConvMode parse_conv_mode(std::string_view text) {
  if (text == "classical") return ConvMode::classical;
  if (text == "grouped") return ConvMode::grouped;
  throw ConfigError("unknown conv mode '" + std::string(text) + "' (classical|grouped)");
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(text) + "' (relu|tanh)");
}

PoolOrder parse_pool_order(std::string_view text) {
  if (text == "pool_then_normalize") return PoolOrder::pool_then_normalize;
  if (text == "normalize_then_pool") return PoolOrder::normalize_then_pool;
  throw ConfigError("unknown pool order '" + std::string(text) +
                    "' (pool_then_normalize|normalize_then_pool)");
}

std::size_t DownsampleSchedule::pool_count() const {
  return static_cast<std::size_t>(std::count(factors.begin(), factors.end(), 2u));
}

std::string DownsampleSchedule::str() const {
  std::string out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(factors[i]);
  }
  return out;
}

DownsampleSchedule parse_schedule(std::string_view text) {
  DownsampleSchedule s;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string_view item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || (v != 1 && v != 2)) {
      throw ConfigError("schedule entries must be 1 or 2, got '" + std::string(item) + "'");
    }
    s.factors.push_back(v);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return s;
}

void ThriftyConfig::validate() const {
  if (filters == 0) throw ConfigError("filters must be positive");
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (kernel_h == 0 || kernel_w == 0 || kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw ConfigError("kernel dims must be odd positive integers, got " + std::to_string(kernel_h) +
                      "x" + std::to_string(kernel_w));
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (input_channels == 0) throw ConfigError("input_channels must be positive");
  if (input_channels > filters) {
    throw ConfigError("input has " + std::to_string(input_channels) +
                      " channels but the network only has " + std::to_string(filters) + " filters");
  }
  if (schedule.size() != iterations) {
    throw ConfigError("schedule length " + std::to_string(schedule.size()) +
                      " does not match iterations " + std::to_string(iterations));
  }
  for (auto f : schedule.factors) {
    if (f != 1 && f != 2) throw ConfigError("schedule factors must be 1 or 2");
  }
  if (residual() && pool_order != PoolOrder::pool_then_normalize) {
    throw ConfigError("the residual recursion always pools before normalizing");
  }
}

void ThriftyConfig::validate_input(std::size_t height, std::size_t width) const {
  validate();
  const std::size_t pools = schedule.pool_count();
  if (pools >= 63 || (std::size_t{1} << pools) > std::min(height, width)) {
    throw ConfigError("schedule with " + std::to_string(pools) + " pools collapses a " +
                      std::to_string(height) + "x" + std::to_string(width) + " input");
  }
}

std::string describe(const ThriftyConfig& c) {
  std::ostringstream os;
  os << "filters=" << c.filters << " kernel=" << c.kernel_h << "x" << c.kernel_w
     << " iterations=" << c.iterations << " history=" << c.history << " conv=" << to_string(c.conv_mode)
     << " activation=" << to_string(c.activation) << " classes=" << c.num_classes
     << " input_channels=" << c.input_channels << " schedule=" << c.schedule.str();
  if (!c.residual()) os << " pool_order=" << to_string(c.pool_order);
  return os.str();
}

}  // namespace thrifty
