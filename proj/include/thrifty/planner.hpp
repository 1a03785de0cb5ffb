#pragma once

// Parameter and multiply-accumulate accounting, budget-constrained filter
// solving and downsampling schedule templates.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "thrifty/config.hpp"

namespace thrifty {

struct ParamCount {
  std::uint64_t core = 0;         // conv weights + 2fT batchnorm affine terms
  std::uint64_t alpha_full = 0;   // T(h+1) when residual, else 0
  std::uint64_t alpha_table = 0;  // hT, the tabulated convention
  std::uint64_t head = 0;         // fK + K
  std::uint64_t total = 0;        // core + alpha_full + head: exact trainable count
  std::uint64_t tabulated_total = 0; // core + hT
};

ParamCount param_count(const ThriftyConfig& config);

struct MacCount {
  std::vector<std::uint64_t> per_iteration;  // shared-conv Macs at each iteration
  std::uint64_t head = 0;                    // fK
  std::uint64_t total = 0;
};

// Macs for one input sample. Pooling, BN, activations and the alpha sums are
// not counted.
MacCount mac_count(const ThriftyConfig& config, std::size_t height, std::size_t width);

enum class BudgetConvention {
  total,   // ParamCount::total (includes head and full alpha matrix)
  tabulated,  // ParamCount::tabulated_total (core + hT)
};

BudgetConvention parse_budget_convention(std::string_view text);
std::string_view to_string(BudgetConvention convention);

struct FilterProblem {
  std::uint64_t budget = 40000;
  std::size_t iterations = 15;
  std::size_t history = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  ConvMode conv_mode = ConvMode::classical;
  std::size_t num_classes = 10;
  BudgetConvention convention = BudgetConvention::total;
};

std::uint64_t budgeted_params(const FilterProblem& problem, std::size_t filters);

// Largest f >= 1 whose parameter count under problem.convention fits the
// budget. Throws ConfigError when even f = 1 does not fit.
std::size_t solve_filters(const FilterProblem& problem);

enum class Placement { regular, front_loaded, explicit_list };

Placement parse_placement(std::string_view text);
std::string_view to_string(Placement placement);

// regular: pool k fires at iteration floor((k+1) T / (n+1)) - 1 (all
//          iterations pool when n == T);
// front_loaded: pools at iterations 0 .. n-1;
// explicit_list: `explicit_factors` validated and returned.
// min_extent is the smallest input spatial dim; 2^n must not exceed it.
DownsampleSchedule make_schedule(std::size_t iterations, std::size_t n_pools, Placement placement,
                                 std::size_t min_extent = 32,
                                 const std::vector<std::uint32_t>& explicit_factors = {});

struct PlanRow {
  std::size_t filters = 0;
  std::size_t iterations = 0;
  std::size_t history = 0;
  std::size_t n_pools = 0;
  std::uint64_t params_core = 0;
  std::uint64_t params_total = 0;
  std::uint64_t macs_total = 0;
  std::string schedule;
};

struct PlanRequest {
  FilterProblem problem;        // iterations ignored; taken from the lists below
  std::vector<std::size_t> iteration_options;
  std::vector<std::size_t> pool_options;
  Placement placement = Placement::regular;
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t input_channels = 3;
};

// Every feasible (T, n_pools) combination with f solved for the budget,
// sorted by macs_total (ties by T, then n_pools).
std::vector<PlanRow> plan(const PlanRequest& request);

}  // namespace thrifty
