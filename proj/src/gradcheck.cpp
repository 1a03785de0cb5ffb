#include "thrifty/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

#include "thrifty/errors.hpp"
#include "thrifty/instrument.hpp"

namespace thrifty {

bool GradCheckReport::pass() const {
  if (groups.empty()) return false;
  return std::all_of(groups.begin(), groups.end(), [](const GroupReport& g) { return g.pass; });
}

std::string GradCheckReport::str() const {
  std::string out;
  char line[160];
  for (const auto& g : groups) {
    std::snprintf(line, sizeof(line), "%-6s max_rel_err=%.3e checked=%zu skipped=%zu %s\n", g.group.c_str(),
                  g.max_rel_error, g.checked, g.skipped, g.pass ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

namespace {

struct Eval {
  double loss;
  std::uint64_t fingerprint;
};

Eval loss_at(const ThriftyConfig& config, ThriftyParams<double>& params, const Tensor4<double>& input,
             const std::vector<int>& labels, Mode mode) {
  ScopedBranchTrace trace;
  Tape<double> tape(false);
  ForwardArgs<double> args;
  args.mode = mode;
  Var<double> logits = forward(config, params, input, tape, args);
  const double loss = softmax_cross_entropy(logits->value, labels).loss;
  return {loss, trace.fingerprint()};
}

}  // namespace

GradCheckReport gradcheck(const ThriftyConfig& config, const ThriftyParams<double>& initial,
                          const GradCheckOptions& options) {
  config.validate();
  config.validate_input(options.height, options.width);
  ThriftyParams<double> params = initial;

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor4<double> input({options.batch, config.input_channels, options.height, options.width});
  for (auto& v : input.data()) v = normal(rng);
  std::vector<int> labels(options.batch);
  for (auto& l : labels) l = static_cast<int>(rng() % config.num_classes);

  // BN running stats move on every train-mode forward; restore them each time
  // so every evaluation sees identical state.
  const ThriftyParams<double> frozen = params;
  auto restore_stats = [&]() {
    for (std::size_t t = 0; t < params.bn.size(); ++t) {
      params.bn[t].running_mean = frozen.bn[t].running_mean;
      params.bn[t].running_var = frozen.bn[t].running_var;
    }
  };

  ThriftyParams<double> grads = zeros_like(params);
  {
    Tape<double> tape(true);
    ForwardArgs<double> args;
    args.mode = options.mode;
    args.grads = &grads;
    Var<double> logits = forward(config, params, input, tape, args);
    Var<double> loss = ad::softmax_cross_entropy<double>(tape, logits, labels);
    tape.backward(loss);
  }
  restore_stats();
  const Eval base = loss_at(config, params, input, labels, options.mode);
  restore_stats();

  auto p_slots = trainables(params, config);
  auto g_slots = trainables(grads, config);
  if (!options.inject_fault_group.empty()) {
    bool found = false;
    for (auto& slot : g_slots) {
      if (slot.group != options.inject_fault_group) continue;
      double& g = slot.tensor->data()[0];
      g = g * 1.1 + 1e-3;
      found = true;
      break;
    }
    if (!found) throw ConfigError("no parameter group named '" + options.inject_fault_group + "'");
  }

  std::map<std::string, GroupReport> by_group;
  std::vector<std::string> order;
  for (std::size_t s = 0; s < p_slots.size(); ++s) {
    const std::string& group = p_slots[s].group;
    if (!by_group.count(group)) {
      by_group[group].group = group;
      order.push_back(group);
    }
    GroupReport& rep = by_group[group];
    auto p = p_slots[s].tensor->data();
    auto g = g_slots[s].tensor->data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + options.step;
      const Eval plus = loss_at(config, params, input, labels, options.mode);
      restore_stats();
      p[i] = keep - options.step;
      const Eval minus = loss_at(config, params, input, labels, options.mode);
      restore_stats();
      p[i] = keep;
      if (options.skip_kinks &&
          (plus.fingerprint != base.fingerprint || minus.fingerprint != base.fingerprint)) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double analytic = g[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(analytic - numeric) / denom);
      ++rep.checked;
    }
  }

  GradCheckReport report;
  for (const auto& name : order) {
    GroupReport rep = by_group[name];
    rep.pass = rep.checked > 0 && rep.max_rel_error < options.tolerance;
    report.groups.push_back(rep);
  }
  return report;
}

}  // namespace thrifty
