#pragma once

// Plain and residual thrifty recursion: a single shared convolution applied
// recursively T times, with per-iteration batch norm, an additive shortcut,
// scheduled 2x2 max pooling, global max pooling and a linear classifier.

#include <cstdint>
#include <string>
#include <vector>

#include "thrifty/config.hpp"
#include "thrifty/ops.hpp"
#include "thrifty/tape.hpp"

namespace thrifty {

template <typename T>
struct ThriftyParams {
  Tensor4<T> conv;       // classical: (f, f, a, b)
  Tensor4<T> depthwise;  // grouped: (f, 1, a, b)
  Tensor4<T> pointwise;  // grouped: (f, f, 1, 1)
  std::vector<BatchNormState<T>> bn;  // one per iteration
  Tensor4<T> alpha;      // residual: (1, 1, T, h + 1); alpha(0,0,t,i) weights x_{t-i}
  Tensor4<T> fc_weight;  // (1, 1, f, K)
  Tensor4<T> fc_bias;    // (1, 1, 1, K)

  friend bool operator==(const ThriftyParams&, const ThriftyParams&) = default;
};

// alpha(t, i) contributes only when t - i >= 0.
inline bool alpha_unmasked(std::size_t t, std::size_t lag) { return lag <= t; }

enum class AlphaInit {
  identity,  // alpha[t,0] = 1, others 0: starts as the plain recursion
  uniform,   // U(0, 1) on every entry
};

// Deterministic given seed. Conv and FC weights ~ U(+-sqrt(6 / (fan_in + fan_out))),
// gamma = 1, beta = 0, running stats (0, 1), FC bias 0.
template <typename T>
ThriftyParams<T> init_params(const ThriftyConfig& config, std::uint64_t seed,
                             AlphaInit alpha_init = AlphaInit::identity);

// Same layout, all zeros; used for gradients and optimizer velocity.
template <typename T>
ThriftyParams<T> zeros_like(const ThriftyParams<T>& params);

template <typename T>
struct ParamSlot {
  std::string group;  // conv | gamma | beta | alpha | fc_w | fc_b
  std::string name;
  Tensor4<T>* tensor;
};

// Trainable tensors in checkpoint order: conv weights, (gamma_t, beta_t) per
// iteration, alpha (residual only), FC weights, FC bias.
template <typename T>
std::vector<ParamSlot<T>> trainables(ThriftyParams<T>& params, const ThriftyConfig& config);

template <typename T>
std::size_t trainable_count(const ThriftyParams<T>& params, const ThriftyConfig& config);

// Per-iteration channel sums of x_{t+1} (post) and of sigma(W*x_t) (pre, before
// any pooling); `count` holds the number of summed elements per channel.
struct ActivationProbe {
  std::size_t iterations = 0;
  std::size_t channels = 0;
  std::vector<double> post_sum;
  std::vector<double> pre_sum;
  std::vector<double> post_count;
  std::vector<double> pre_count;

  ActivationProbe(std::size_t iterations, std::size_t channels);
  // Row-major T x f means.
  std::vector<double> post_means() const;
  std::vector<double> pre_means() const;
};

template <typename T>
struct ForwardArgs {
  Mode mode = Mode::eval;
  ThriftyParams<T>* grads = nullptr;  // gradient sinks; required for backward
  ActivationProbe* probe = nullptr;
};

// Plain recursion. Ignores alpha, so it can be run on residual parameters.
template <typename T>
Var<T> forward_thrifty(const ThriftyConfig& config, ThriftyParams<T>& params,
                       const Tensor4<T>& input, Tape<T>& tape, const ForwardArgs<T>& args);

// Residual recursion with a history of the last h + 1 activations.
template <typename T>
Var<T> forward_residual(const ThriftyConfig& config, ThriftyParams<T>& params,
                        const Tensor4<T>& input, Tape<T>& tape, const ForwardArgs<T>& args);

// Dispatches on config.residual().
template <typename T>
Var<T> forward(const ThriftyConfig& config, ThriftyParams<T>& params, const Tensor4<T>& input,
               Tape<T>& tape, const ForwardArgs<T>& args);

template <typename T>
struct ThriftyModel {
  ThriftyConfig config;
  ThriftyParams<T> params;

  ThriftyModel() = default;
  ThriftyModel(ThriftyConfig cfg, std::uint64_t seed, AlphaInit alpha_init = AlphaInit::identity)
      : config(std::move(cfg)), params(init_params<T>(config, seed, alpha_init)) {}
  ThriftyModel(ThriftyConfig cfg, ThriftyParams<T> p) : config(std::move(cfg)), params(std::move(p)) {}

  // Eval-mode logits (N, K, 1, 1); no tape is kept.
  Tensor4<T> predict(const Tensor4<T>& input);
};

}  // namespace thrifty
