#pragma once

// End-to-end finite-difference check of the model's analytic gradients.

#include <cstdint>
#include <string>
#include <vector>

#include "thrifty/model.hpp"

namespace thrifty {

struct GradCheckOptions {
  std::size_t batch = 4;
  std::size_t height = 8;
  std::size_t width = 8;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  Mode mode = Mode::train;
  // Coordinates whose +-step stencil changes a ReLU sign or pooling argmax
  // are not differentiable there; they are skipped and counted.
  bool skip_kinks = true;
  // Test hook: perturb the analytic gradient of this group before comparing.
  std::string inject_fault_group;
};

struct GroupReport {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GroupReport> groups;
  bool pass() const;
  std::string str() const;
};

// Mean cross-entropy on a seeded random batch, differentiated with respect to
// every trainable coordinate.
GradCheckReport gradcheck(const ThriftyConfig& config, const ThriftyParams<double>& params,
                          const GradCheckOptions& options = {});

}  // namespace thrifty
