#include "thrifty/planner.hpp"

#include <algorithm>
#include <cmath>

#include "thrifty/errors.hpp"
#include "thrifty/ops.hpp"

namespace thrifty {

namespace {

std::uint64_t conv_weights(ConvMode mode, std::uint64_t f, std::uint64_t ab) {
  return mode == ConvMode::classical ? f * f * ab : f * (ab + f);
}

}  // namespace

ParamCount param_count(const ThriftyConfig& c) {
  const std::uint64_t f = c.filters;
  const std::uint64_t ab = c.kernel_h * c.kernel_w;
  const std::uint64_t t = c.iterations;
  const std::uint64_t h = c.history;
  const std::uint64_t k = c.num_classes;
  ParamCount p;
  p.core = conv_weights(c.conv_mode, f, ab) + 2 * f * t;
  p.alpha_full = c.residual() ? t * (h + 1) : 0;
  p.alpha_table = h * t;
  p.head = f * k + k;
  p.total = p.core + p.alpha_full + p.head;
  p.tabulated_total = p.core + p.alpha_table;
  return p;
}

MacCount mac_count(const ThriftyConfig& c, std::size_t height, std::size_t width) {
  c.validate_input(height, width);
  const std::uint64_t f = c.filters;
  const std::uint64_t ab = c.kernel_h * c.kernel_w;
  const std::uint64_t per_position = c.conv_mode == ConvMode::classical ? f * f * ab : f * ab + f * f;
  MacCount m;
  std::size_t h = height;
  std::size_t w = width;
  for (std::size_t t = 0; t < c.iterations; ++t) {
    m.per_iteration.push_back(per_position * h * w);
    if (c.schedule.pools_at(t)) {
      h = pooled_extent(h);
      w = pooled_extent(w);
    }
  }
  m.head = f * c.num_classes;
  m.total = m.head;
  for (auto v : m.per_iteration) m.total += v;
  return m;
}

BudgetConvention parse_budget_convention(std::string_view text) {
  if (text == "total") return BudgetConvention::total;
  if (text == "tabulated") return BudgetConvention::tabulated;
  throw ConfigError("unknown budget convention '" + std::string(text) + "' (total|tabulated)");
}

std::string_view to_string(BudgetConvention convention) {
  return convention == BudgetConvention::total ? "total" : "tabulated";
}

std::uint64_t budgeted_params(const FilterProblem& pr, std::size_t filters) {
  ThriftyConfig c;
  c.filters = filters;
  c.kernel_h = pr.kernel_h;
  c.kernel_w = pr.kernel_w;
  c.iterations = pr.iterations;
  c.history = pr.history;
  c.conv_mode = pr.conv_mode;
  c.num_classes = pr.num_classes;
  const ParamCount p = param_count(c);
  return pr.convention == BudgetConvention::total ? p.total : p.tabulated_total;
}

std::size_t solve_filters(const FilterProblem& pr) {
  if (pr.iterations == 0) throw ConfigError("solve_filters: iterations must be positive");
  if (budgeted_params(pr, 1) > pr.budget) {
    throw ConfigError("parameter budget " + std::to_string(pr.budget) +
                      " is too small for a single filter (needs " +
                      std::to_string(budgeted_params(pr, 1)) + ")");
  }
  // count(f) = qa f^2 + qb f + qc, increasing for f >= 1.
  const double ab = static_cast<double>(pr.kernel_h * pr.kernel_w);
  const double t = static_cast<double>(pr.iterations);
  const double h = static_cast<double>(pr.history);
  const double k = static_cast<double>(pr.num_classes);
  const bool total = pr.convention == BudgetConvention::total;
  const double qa = pr.conv_mode == ConvMode::classical ? ab : 1.0;
  double qb = 2.0 * t + (pr.conv_mode == ConvMode::grouped ? ab : 0.0) + (total ? k : 0.0);
  double qc = total ? k + (pr.history > 0 ? t * (h + 1) : 0.0) : h * t;
  qc -= static_cast<double>(pr.budget);
  const double root = (-qb + std::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
  std::size_t f = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::max(root, 1.0))));
  while (f > 1 && budgeted_params(pr, f) > pr.budget) --f;
  while (budgeted_params(pr, f + 1) <= pr.budget) ++f;
  return f;
}

Placement parse_placement(std::string_view text) {
  if (text == "regular") return Placement::regular;
  if (text == "front_loaded" || text == "front-loaded") return Placement::front_loaded;
  if (text == "explicit") return Placement::explicit_list;
  throw ConfigError("unknown schedule placement '" + std::string(text) +
                    "' (regular|front_loaded|explicit)");
}

std::string_view to_string(Placement placement) {
  switch (placement) {
    case Placement::regular: return "regular";
    case Placement::front_loaded: return "front_loaded";
    case Placement::explicit_list: return "explicit";
  }
  return "regular";
}

DownsampleSchedule make_schedule(std::size_t iterations, std::size_t n_pools, Placement placement,
                                 std::size_t min_extent, const std::vector<std::uint32_t>& explicit_factors) {
  if (iterations == 0) throw ConfigError("schedule: iterations must be positive");
  DownsampleSchedule s;
  if (placement == Placement::explicit_list) {
    s.factors = explicit_factors;
    if (s.size() != iterations) {
      throw ConfigError("explicit schedule has " + std::to_string(s.size()) + " entries for " +
                        std::to_string(iterations) + " iterations");
    }
    for (auto v : s.factors) {
      if (v != 1 && v != 2) throw ConfigError("schedule factors must be 1 or 2");
    }
    n_pools = s.pool_count();
  } else {
    if (n_pools > iterations) {
      throw ConfigError("cannot place " + std::to_string(n_pools) + " pools in " +
                        std::to_string(iterations) + " iterations");
    }
    s.factors.assign(iterations, 1);
    for (std::size_t k = 0; k < n_pools; ++k) {
      std::size_t at = k;
      if (placement == Placement::regular && n_pools < iterations) {
        at = (k + 1) * iterations / (n_pools + 1) - 1;
      }
      s.factors[at] = 2;
    }
  }
  if (n_pools >= 63 || (std::size_t{1} << n_pools) > min_extent) {
    throw ConfigError(std::to_string(n_pools) + " pools exceed the input extent " +
                      std::to_string(min_extent));
  }
  return s;
}

std::vector<PlanRow> plan(const PlanRequest& req) {
  std::vector<PlanRow> rows;
  const std::size_t min_extent = std::min(req.input_h, req.input_w);
  for (std::size_t t : req.iteration_options) {
    for (std::size_t n : req.pool_options) {
      if (n > t || n >= 63 || (std::size_t{1} << n) > min_extent) continue;
      FilterProblem pr = req.problem;
      pr.iterations = t;
      std::size_t f;
      try {
        f = solve_filters(pr);
      } catch (const ConfigError&) {
        continue;
      }
      if (f < req.input_channels) continue;
      ThriftyConfig c;
      c.filters = f;
      c.kernel_h = pr.kernel_h;
      c.kernel_w = pr.kernel_w;
      c.iterations = t;
      c.history = pr.history;
      c.conv_mode = pr.conv_mode;
      c.num_classes = pr.num_classes;
      c.input_channels = req.input_channels;
      c.schedule = make_schedule(t, n, req.placement, min_extent);
      const ParamCount p = param_count(c);
      const MacCount m = mac_count(c, req.input_h, req.input_w);
      rows.push_back({f, t, pr.history, n, p.core, p.total, m.total, c.schedule.str()});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const PlanRow& a, const PlanRow& b) {
    if (a.macs_total != b.macs_total) return a.macs_total < b.macs_total;
    if (a.iterations != b.iterations) return a.iterations < b.iterations;
    return a.n_pools < b.n_pools;
  });
  return rows;
}

}  // namespace thrifty
