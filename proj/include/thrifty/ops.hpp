#pragma once

// Differentiable primitives: each forward has a matching analytic backward.
// Kernels are pure given their inputs plus the explicit mutable BatchNormState.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "thrifty/tensor.hpp"

namespace thrifty {

enum class Mode { train, eval };

// Bias-free convolution weights of dims (f_out, f_in / groups, kh, kw).
template <typename T>
struct ConvKernel {
  Tensor4<T> weights;
  std::size_t groups = 1;

  std::size_t f_out() const { return weights.n(); }
  std::size_t f_in() const { return weights.c() * groups; }
  std::size_t kh() const { return weights.h(); }
  std::size_t kw() const { return weights.w(); }
};

struct Padding {
  std::size_t h = 0;
  std::size_t w = 0;
};

// (a-1)/2, (b-1)/2; throws ConfigError for even kernel sizes.
Padding same_padding(std::size_t kh, std::size_t kw);

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvKernel<T>& kernel, Padding padding);

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                             const ConvKernel<T>& kernel, Padding padding);

// Depthwise a x b (groups = channels, same-padding) followed by pointwise 1x1.
template <typename T>
Tensor4<T> grouped_conv(const Tensor4<T>& input, const ConvKernel<T>& depthwise,
                        const ConvKernel<T>& pointwise);

template <typename T>
struct BatchNormState {
  Tensor4<T> gamma;  // (1, C, 1, 1), trainable
  Tensor4<T> beta;   // (1, C, 1, 1), trainable
  std::vector<T> running_mean;
  std::vector<T> running_var;  // unbiased estimator, always >= 0
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormState() : BatchNormState(1) {}
  explicit BatchNormState(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

// Saved intermediates for batchnorm_backward.
template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor4<T> normalized;  // x_hat
  std::vector<T> inv_std;
};

// Train mode normalizes with biased batch statistics over (N, H, W) and
// updates the running averages; eval mode uses the running statistics.
template <typename T>
Tensor4<T> batchnorm(const Tensor4<T>& input, BatchNormState<T>& state, Mode mode,
                     BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor4<T> input;
  Tensor4<T> gamma;
  Tensor4<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache,
                                     const Tensor4<T>& gamma);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input);
// Subgradient at exactly 0 is 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input);

template <typename T>
Tensor4<T> tanh_act(const Tensor4<T>& input);
template <typename T>
Tensor4<T> tanh_backward(const Tensor4<T>& grad_out, const Tensor4<T>& output);

// Flat input index that produced each pooled output.
using ArgmaxIndex = std::vector<std::uint32_t>;

// 2x2 stride-2 max pool. Odd H or W is replicate-padded by one row/column at
// the bottom/right first, so output dims are ceil(H/2) x ceil(W/2). Ties go to
// the first element in row-major window order.
template <typename T>
Tensor4<T> maxpool2x2(const Tensor4<T>& input, ArgmaxIndex* argmax = nullptr);

template <typename T>
Tensor4<T> global_max_pool(const Tensor4<T>& input, ArgmaxIndex* argmax = nullptr);

// Scatters grad_out into a zero tensor of input_shape at the recorded indices.
template <typename T>
Tensor4<T> max_backward(const Tensor4<T>& grad_out, const ArgmaxIndex& argmax, Shape input_shape);

std::size_t pooled_extent(std::size_t extent);

// Appends zero channels up to target_channels.
template <typename T>
Tensor4<T> channel_pad(const Tensor4<T>& input, std::size_t target_channels);
template <typename T>
Tensor4<T> channel_pad_backward(const Tensor4<T>& grad_out, std::size_t input_channels);

// scores = input(N x F) * weights(F x K) + bias. input is (N, F, 1, 1) or any
// (N, ...) tensor with F = C*H*W; weights is (1, 1, F, K); bias is (1, 1, 1, K).
template <typename T>
Tensor4<T> linear(const Tensor4<T>& input, const Tensor4<T>& weights, const Tensor4<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  Tensor4<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                               const Tensor4<T>& weights);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor4<T> grad_scores;
};

// Mean over the batch of -log softmax(scores)[label]; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T>& scores, std::span<const int> labels);

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);

// out += scale * x
template <typename T>
void axpy(T scale, const Tensor4<T>& x, Tensor4<T>& out);

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b);

}  // namespace thrifty
