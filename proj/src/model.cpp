#include "thrifty/model.hpp"

#include <cmath>
#include <deque>
#include <random>

namespace thrifty {

namespace {

template <typename T>
void fill_uniform(Tensor4<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
struct Leaves {
  Var<T> conv;
  Var<T> depthwise;
  Var<T> pointwise;
  std::vector<Var<T>> gamma;
  std::vector<Var<T>> beta;
  Var<T> alpha;
  Var<T> fc_weight;
  Var<T> fc_bias;
};

template <typename T>
Leaves<T> make_leaves(const ThriftyConfig& config, ThriftyParams<T>& params, Tape<T>& tape,
                      ThriftyParams<T>* grads, bool with_alpha) {
  auto sink = [grads](Tensor4<T> ThriftyParams<T>::*member) -> Tensor4<T>* {
    return grads ? &(grads->*member) : nullptr;
  };
  Leaves<T> l;
  if (config.conv_mode == ConvMode::classical) {
    l.conv = tape.parameter(params.conv, sink(&ThriftyParams<T>::conv));
  } else {
    l.depthwise = tape.parameter(params.depthwise, sink(&ThriftyParams<T>::depthwise));
    l.pointwise = tape.parameter(params.pointwise, sink(&ThriftyParams<T>::pointwise));
  }
  for (std::size_t t = 0; t < config.iterations; ++t) {
    l.gamma.push_back(tape.parameter(params.bn[t].gamma, grads ? &grads->bn[t].gamma : nullptr));
    l.beta.push_back(tape.parameter(params.bn[t].beta, grads ? &grads->bn[t].beta : nullptr));
  }
  if (with_alpha) l.alpha = tape.parameter(params.alpha, sink(&ThriftyParams<T>::alpha));
  l.fc_weight = tape.parameter(params.fc_weight, sink(&ThriftyParams<T>::fc_weight));
  l.fc_bias = tape.parameter(params.fc_bias, sink(&ThriftyParams<T>::fc_bias));
  return l;
}

template <typename T>
Var<T> shared_conv(Tape<T>& tape, const ThriftyConfig& config, const Leaves<T>& l, const Var<T>& x) {
  const Padding same = same_padding(config.kernel_h, config.kernel_w);
  if (config.conv_mode == ConvMode::classical) return ad::conv2d(tape, x, l.conv, 1, same);
  Var<T> spatial = ad::conv2d(tape, x, l.depthwise, config.filters, same);
  return ad::conv2d(tape, spatial, l.pointwise, 1, Padding{0, 0});
}

template <typename T>
Var<T> activate(Tape<T>& tape, const ThriftyConfig& config, const Var<T>& x) {
  return config.activation == Activation::relu ? ad::relu(tape, x) : ad::tanh_act(tape, x);
}

template <typename T>
void accumulate_probe(std::vector<double>& sums, std::vector<double>& counts, std::size_t t,
                      const Tensor4<T>& v) {
  const Shape s = v.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (T x : v.plane(n, c)) acc += x;
    sums[t * s.c + c] += acc;
    counts[t * s.c + c] += static_cast<double>(s.n * s.plane());
  }
}

template <typename T>
void check_input(const ThriftyConfig& config, const ThriftyParams<T>& params, const Tensor4<T>& input) {
  config.validate_input(input.h(), input.w());
  if (input.c() != config.input_channels) {
    throw ConfigError("input has " + std::to_string(input.c()) + " channels, config expects " +
                      std::to_string(config.input_channels));
  }
  if (params.bn.size() != config.iterations) {
    throw ConfigError("parameter set has " + std::to_string(params.bn.size()) +
                      " batchnorm states for " + std::to_string(config.iterations) + " iterations");
  }
}

template <typename T>
Var<T> head(Tape<T>& tape, const Leaves<T>& l, const Var<T>& x) {
  Var<T> pooled = ad::global_max_pool(tape, x);
  return ad::linear(tape, pooled, l.fc_weight, l.fc_bias);
}

}  // namespace

template <typename T>
ThriftyParams<T> init_params(const ThriftyConfig& config, std::uint64_t seed, AlphaInit alpha_init) {
  config.validate();
  const std::size_t f = config.filters;
  const std::size_t ab = config.kernel_h * config.kernel_w;
  const std::size_t k = config.num_classes;
  std::mt19937_64 rng(seed);
  ThriftyParams<T> p;
  if (config.conv_mode == ConvMode::classical) {
    p.conv = Tensor4<T>({f, f, config.kernel_h, config.kernel_w});
    fill_uniform(p.conv, glorot_bound(f * ab, f * ab), rng);
  } else {
    p.depthwise = Tensor4<T>({f, 1, config.kernel_h, config.kernel_w});
    fill_uniform(p.depthwise, glorot_bound(ab, ab), rng);
    p.pointwise = Tensor4<T>({f, f, 1, 1});
    fill_uniform(p.pointwise, glorot_bound(f, f), rng);
  }
  p.bn.assign(config.iterations, BatchNormState<T>(f));
  p.fc_weight = Tensor4<T>({1, 1, f, k});
  fill_uniform(p.fc_weight, glorot_bound(f, k), rng);
  p.fc_bias = Tensor4<T>({1, 1, 1, k});
  if (config.residual()) {
    p.alpha = Tensor4<T>({1, 1, config.iterations, config.history + 1});
    if (alpha_init == AlphaInit::identity) {
      for (std::size_t t = 0; t < config.iterations; ++t) p.alpha(0, 0, t, 0) = T(1);
    } else {
      // Separate stream so the other parameters do not depend on the alpha init.
      std::mt19937_64 alpha_rng(seed ^ 0xa1fa5eedULL);
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      for (auto& v : p.alpha.data()) v = static_cast<T>(dist(alpha_rng));
    }
  }
  return p;
}

template <typename T>
ThriftyParams<T> zeros_like(const ThriftyParams<T>& params) {
  ThriftyParams<T> z;
  z.conv = Tensor4<T>::zeros_like(params.conv);
  z.depthwise = Tensor4<T>::zeros_like(params.depthwise);
  z.pointwise = Tensor4<T>::zeros_like(params.pointwise);
  for (const auto& bn : params.bn) {
    BatchNormState<T> s(bn.channels());
    s.gamma.fill(T(0));
    s.beta.fill(T(0));
    std::fill(s.running_var.begin(), s.running_var.end(), T(0));
    z.bn.push_back(std::move(s));
  }
  z.alpha = Tensor4<T>::zeros_like(params.alpha);
  z.fc_weight = Tensor4<T>::zeros_like(params.fc_weight);
  z.fc_bias = Tensor4<T>::zeros_like(params.fc_bias);
  return z;
}

template <typename T>
std::vector<ParamSlot<T>> trainables(ThriftyParams<T>& p, const ThriftyConfig& config) {
  std::vector<ParamSlot<T>> slots;
  if (config.conv_mode == ConvMode::classical) {
    slots.push_back({"conv", "conv", &p.conv});
  } else {
    slots.push_back({"conv", "conv.depthwise", &p.depthwise});
    slots.push_back({"conv", "conv.pointwise", &p.pointwise});
  }
  for (std::size_t t = 0; t < p.bn.size(); ++t) {
    slots.push_back({"gamma", "gamma[" + std::to_string(t) + "]", &p.bn[t].gamma});
    slots.push_back({"beta", "beta[" + std::to_string(t) + "]", &p.bn[t].beta});
  }
  if (config.residual()) slots.push_back({"alpha", "alpha", &p.alpha});
  slots.push_back({"fc_w", "fc_w", &p.fc_weight});
  slots.push_back({"fc_b", "fc_b", &p.fc_bias});
  return slots;
}

template <typename T>
std::size_t trainable_count(const ThriftyParams<T>& params, const ThriftyConfig& config) {
  std::size_t total = 0;
  for (const auto& slot : trainables(const_cast<ThriftyParams<T>&>(params), config)) {
    total += slot.tensor->numel();
  }
  return total;
}

ActivationProbe::ActivationProbe(std::size_t t, std::size_t c)
    : iterations(t),
      channels(c),
      post_sum(t * c, 0.0),
      pre_sum(t * c, 0.0),
      post_count(t * c, 0.0),
      pre_count(t * c, 0.0) {}

std::vector<double> ActivationProbe::post_means() const {
  std::vector<double> m(post_sum.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = post_count[i] > 0 ? post_sum[i] / post_count[i] : 0.0;
  return m;
}

std::vector<double> ActivationProbe::pre_means() const {
  std::vector<double> m(pre_sum.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = pre_count[i] > 0 ? pre_sum[i] / pre_count[i] : 0.0;
  return m;
}

template <typename T>
Var<T> forward_thrifty(const ThriftyConfig& config, ThriftyParams<T>& params,
                       const Tensor4<T>& input, Tape<T>& tape, const ForwardArgs<T>& args) {
  check_input(config, params, input);
  const Leaves<T> l = make_leaves(config, params, tape, args.grads, false);
  Var<T> x = ad::channel_pad(tape, tape.constant(input), config.filters);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    Var<T> a = activate(tape, config, shared_conv(tape, config, l, x));
    if (args.probe) accumulate_probe(args.probe->pre_sum, args.probe->pre_count, t, a->value);
    const bool pool = config.schedule.pools_at(t);
    if (config.pool_order == PoolOrder::pool_then_normalize) {
      if (pool) {
        a = ad::maxpool2x2(tape, a);
        x = ad::maxpool2x2(tape, x);
      }
      x = ad::batchnorm(tape, ad::add(tape, a, x), l.gamma[t], l.beta[t], params.bn[t], args.mode);
    } else {
      x = ad::batchnorm(tape, ad::add(tape, a, x), l.gamma[t], l.beta[t], params.bn[t], args.mode);
      if (pool) x = ad::maxpool2x2(tape, x);
    }
    if (args.probe) accumulate_probe(args.probe->post_sum, args.probe->post_count, t, x->value);
  }
  return head(tape, l, x);
}

template <typename T>
Var<T> forward_residual(const ThriftyConfig& config, ThriftyParams<T>& params,
                        const Tensor4<T>& input, Tape<T>& tape, const ForwardArgs<T>& args) {
  check_input(config, params, input);
  if (!config.residual()) throw ConfigError("forward_residual requires history >= 1");
  if (params.alpha.shape() != Shape{1, 1, config.iterations, config.history + 1}) {
    throw ConfigError("alpha has dims " + params.alpha.shape().str() + ", expected 1x1x" +
                      std::to_string(config.iterations) + "x" + std::to_string(config.history + 1));
  }
  const Leaves<T> l = make_leaves(config, params, tape, args.grads, true);
  Var<T> x = ad::channel_pad(tape, tape.constant(input), config.filters);
  // history[i] holds x_{t-i}, always at the current resolution.
  std::deque<Var<T>> history{x};
  std::vector<std::size_t> lags;
  std::vector<Var<T>> terms;
  for (std::size_t t = 0; t < config.iterations; ++t) {
    Var<T> a = activate(tape, config, shared_conv(tape, config, l, x));
    if (args.probe) accumulate_probe(args.probe->pre_sum, args.probe->pre_count, t, a->value);
    if (config.schedule.pools_at(t)) {
      a = ad::maxpool2x2(tape, a);
      for (auto& past : history) past = ad::maxpool2x2(tape, past);
    }
    lags.clear();
    terms.clear();
    for (std::size_t i = 0; i < history.size(); ++i) {
      lags.push_back(i);
      terms.push_back(history[i]);
    }
    Var<T> b = ad::weighted_sum<T>(tape, a, l.alpha, t, lags, terms);
    x = ad::batchnorm(tape, b, l.gamma[t], l.beta[t], params.bn[t], args.mode);
    if (args.probe) accumulate_probe(args.probe->post_sum, args.probe->post_count, t, x->value);
    history.push_front(x);
    if (history.size() > config.history + 1) history.pop_back();
  }
  return head(tape, l, x);
}

template <typename T>
Var<T> forward(const ThriftyConfig& config, ThriftyParams<T>& params, const Tensor4<T>& input,
               Tape<T>& tape, const ForwardArgs<T>& args) {
  return config.residual() ? forward_residual(config, params, input, tape, args)
                           : forward_thrifty(config, params, input, tape, args);
}

template <typename T>
Tensor4<T> ThriftyModel<T>::predict(const Tensor4<T>& input) {
  Tape<T> tape(false);
  ForwardArgs<T> args;
  args.mode = Mode::eval;
  return forward(config, params, input, tape, args)->value;
}

#define THRIFTY_INSTANTIATE_MODEL(T)                                                              \
  template ThriftyParams<T> init_params<T>(const ThriftyConfig&, std::uint64_t, AlphaInit);       \
  template ThriftyParams<T> zeros_like(const ThriftyParams<T>&);                                  \
  template std::vector<ParamSlot<T>> trainables(ThriftyParams<T>&, const ThriftyConfig&);         \
  template std::size_t trainable_count(const ThriftyParams<T>&, const ThriftyConfig&);            \
  template Var<T> forward_thrifty(const ThriftyConfig&, ThriftyParams<T>&, const Tensor4<T>&,     \
                                  Tape<T>&, const ForwardArgs<T>&);                               \
  template Var<T> forward_residual(const ThriftyConfig&, ThriftyParams<T>&, const Tensor4<T>&,    \
                                   Tape<T>&, const ForwardArgs<T>&);                              \
  template Var<T> forward(const ThriftyConfig&, ThriftyParams<T>&, const Tensor4<T>&, Tape<T>&,   \
                          const ForwardArgs<T>&);                                                 \
  template struct ThriftyModel<T>;

THRIFTY_INSTANTIATE_MODEL(float)
THRIFTY_INSTANTIATE_MODEL(double)

}  // namespace thrifty
