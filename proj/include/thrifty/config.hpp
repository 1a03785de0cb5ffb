#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace thrifty {

enum class ConvMode { classical, grouped };
enum class Activation { relu, tanh };

// Where the plain (h = 0) recursion applies D_t relative to BN_t.
//   pool_then_normalize:  x_{t+1} = BN_t(D_t[sigma(W*x_t)] + D_t[x_t])
//   normalize_then_pool:  x_{t+1} = D_t[BN_t(x_t + sigma(W*x_t))]
// The residual recursion always pools before normalizing.
enum class PoolOrder { pool_then_normalize, normalize_then_pool };

std::string_view to_string(ConvMode mode);
std::string_view to_string(Activation activation);
std::string_view to_string(PoolOrder order);
ConvMode parse_conv_mode(std::string_view text);
Activation parse_activation(std::string_view text);
PoolOrder parse_pool_order(std::string_view text);

// Per-iteration spatial reduction: 1 = identity, 2 = 2x2 max pool.
struct DownsampleSchedule {
  std::vector<std::uint32_t> factors;

  std::size_t size() const { return factors.size(); }
  bool pools_at(std::size_t t) const { return factors.at(t) == 2; }
  std::size_t pool_count() const;
  std::string str() const;  // e.g. "1,1,2,1"
  friend bool operator==(const DownsampleSchedule&, const DownsampleSchedule&) = default;
};

DownsampleSchedule parse_schedule(std::string_view text);

struct ThriftyConfig {
  std::size_t filters = 64;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t iterations = 15;
  std::size_t history = 0;  // 0 selects the plain recursion
  DownsampleSchedule schedule;
  ConvMode conv_mode = ConvMode::classical;
  Activation activation = Activation::relu;
  PoolOrder pool_order = PoolOrder::pool_then_normalize;
  std::size_t num_classes = 10;
  std::size_t input_channels = 3;

  bool residual() const { return history > 0; }

  // Throws ConfigError on any violated invariant.
  void validate() const;
  // Checks that the schedule keeps every spatial dim >= 1 for this input size
  // and that the product of reductions does not exceed min(h, w).
  void validate_input(std::size_t height, std::size_t width) const;

  friend bool operator==(const ThriftyConfig&, const ThriftyConfig&) = default;
};

std::string describe(const ThriftyConfig& config);

}  // namespace thrifty
