#include "thrifty/tape.hpp"

#include <string>

namespace thrifty {

template <typename T>
Var<T> Tape<T>::constant(Tensor4<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <typename T>
Var<T> Tape<T>::parameter(const Tensor4<T>& value, Tensor4<T>* grad_sink) {
  auto node = std::make_shared<Node<T>>();
  node->value = value;
  if (recording_ && grad_sink) {
    if (grad_sink->shape() != value.shape()) {
      throw InternalError("parameter gradient sink has dims " + grad_sink->shape().str() +
                          ", value has " + value.shape().str());
    }
    node->grad_sink = grad_sink;
    nodes_.push_back(node);
  }
  return node;
}

template <typename T>
Var<T> Tape<T>::record(Tensor4<T> value, std::function<void(const Tensor4<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (recording_) {
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return node;
}

template <typename T>
void Tape<T>::backward(const Var<T>& root, const Tensor4<T>& seed) {
  if (!recording_) throw InternalError("backward on a non-recording tape");
  if (seed.shape() != root->value.shape()) throw InternalError("backward seed dims mismatch");
  root->accumulate(seed);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& node = **it;
    if (!node.has_grad) continue;
    if (node.backward) {
      node.backward(node.grad);
      // Interior gradients are not needed once propagated.
      node.grad = Tensor4<T>();
      node.has_grad = false;
    } else if (node.grad_sink) {
      *node.grad_sink += node.grad;
    }
  }
  nodes_.clear();
}

template <typename T>
void Tape<T>::backward(const Var<T>& scalar_root) {
  backward(scalar_root, Tensor4<T>(scalar_root->value.shape(), T(1)));
}

namespace ad {

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, std::size_t groups,
              Padding padding) {
  ConvKernel<T> kernel{weights->value, groups};
  Tensor4<T> out = thrifty::conv2d(input->value, kernel, padding);
  return tape.record(std::move(out), [input, weights, groups, padding](const Tensor4<T>& g) {
    ConvKernel<T> k{weights->value, groups};
    ConvGrads<T> grads = conv2d_backward(g, input->value, k, padding);
    input->accumulate(grads.input);
    weights->accumulate(grads.weights);
  });
}

template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormState<T>& state, Mode mode) {
  if (gamma->value != state.gamma || beta->value != state.beta) {
    throw InternalError("batchnorm: affine leaves out of sync with state");
  }
  auto cache = std::make_shared<BatchNormCache<T>>();
  Tensor4<T> out = thrifty::batchnorm(input->value, state, mode, tape.recording() ? cache.get() : nullptr);
  return tape.record(std::move(out), [input, gamma, beta, cache](const Tensor4<T>& g) {
    BatchNormGrads<T> grads = batchnorm_backward(g, *cache, gamma->value);
    input->accumulate(grads.input);
    gamma->accumulate(grads.gamma);
    beta->accumulate(grads.beta);
  });
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input) {
  return tape.record(thrifty::relu(input->value), [input](const Tensor4<T>& g) {
    input->accumulate(relu_backward(g, input->value));
  });
}

template <typename T>
Var<T> tanh_act(Tape<T>& tape, const Var<T>& input) {
  auto out = std::make_shared<Tensor4<T>>(thrifty::tanh_act(input->value));
  return tape.record(*out, [input, out](const Tensor4<T>& g) {
    input->accumulate(tanh_backward(g, *out));
  });
}

template <typename T>
Var<T> maxpool2x2(Tape<T>& tape, const Var<T>& input) {
  auto argmax = std::make_shared<ArgmaxIndex>();
  Tensor4<T> out = thrifty::maxpool2x2(input->value, argmax.get());
  return tape.record(std::move(out), [input, argmax](const Tensor4<T>& g) {
    input->accumulate(max_backward(g, *argmax, input->value.shape()));
  });
}

template <typename T>
Var<T> global_max_pool(Tape<T>& tape, const Var<T>& input) {
  auto argmax = std::make_shared<ArgmaxIndex>();
  Tensor4<T> out = thrifty::global_max_pool(input->value, argmax.get());
  return tape.record(std::move(out), [input, argmax](const Tensor4<T>& g) {
    input->accumulate(max_backward(g, *argmax, input->value.shape()));
  });
}

template <typename T>
Var<T> channel_pad(Tape<T>& tape, const Var<T>& input, std::size_t target_channels) {
  const std::size_t channels = input->value.c();
  return tape.record(thrifty::channel_pad(input->value, target_channels),
                     [input, channels](const Tensor4<T>& g) {
                       input->accumulate(channel_pad_backward(g, channels));
                     });
}

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias) {
  return tape.record(thrifty::linear(input->value, weights->value, bias->value),
                     [input, weights, bias](const Tensor4<T>& g) {
                       LinearGrads<T> grads = linear_backward(g, input->value, weights->value);
                       input->accumulate(grads.input);
                       weights->accumulate(grads.weights);
                       bias->accumulate(grads.bias);
                     });
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  return tape.record(thrifty::add(a->value, b->value), [a, b](const Tensor4<T>& g) {
    a->accumulate(g);
    b->accumulate(g);
  });
}

template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& base, const Var<T>& coeffs, std::size_t row,
                    std::span<const std::size_t> cols, std::span<const Var<T>> terms) {
  if (cols.size() != terms.size()) throw InternalError("weighted_sum: cols/terms length mismatch");
  const Tensor4<T>& c = coeffs->value;
  if (row >= c.h()) throw InternalError("weighted_sum: row out of range");
  Tensor4<T> out = base->value;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    if (cols[j] >= c.w()) throw InternalError("weighted_sum: column out of range");
    axpy(c(0, 0, row, cols[j]), terms[j]->value, out);
  }
  std::vector<std::size_t> cols_v(cols.begin(), cols.end());
  std::vector<Var<T>> terms_v(terms.begin(), terms.end());
  return tape.record(std::move(out), [base, coeffs, row, cols_v, terms_v](const Tensor4<T>& g) {
    base->accumulate(g);
    Tensor4<T> dcoeffs(coeffs->value.shape());
    for (std::size_t j = 0; j < terms_v.size(); ++j) {
      const T a = coeffs->value(0, 0, row, cols_v[j]);
      Tensor4<T> dterm(g.shape());
      axpy(a, g, dterm);
      terms_v[j]->accumulate(dterm);
      dcoeffs(0, 0, row, cols_v[j]) += static_cast<T>(dot(g, terms_v[j]->value));
    }
    coeffs->accumulate(dcoeffs);
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& scores, std::span<const int> labels) {
  auto result = std::make_shared<LossResult<T>>(thrifty::softmax_cross_entropy(scores->value, labels));
  Tensor4<T> loss({1, 1, 1, 1}, static_cast<T>(result->loss));
  return tape.record(std::move(loss), [scores, result](const Tensor4<T>& g) {
    Tensor4<T> d = result->grad_scores;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= g[0];
    scores->accumulate(d);
  });
}

#define THRIFTY_INSTANTIATE_AD(T)                                                                \
  template Var<T> conv2d(Tape<T>&, const Var<T>&, const Var<T>&, std::size_t, Padding);          \
  template Var<T> batchnorm(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&,              \
                            BatchNormState<T>&, Mode);                                          \
  template Var<T> relu(Tape<T>&, const Var<T>&);                                                 \
  template Var<T> tanh_act(Tape<T>&, const Var<T>&);                                             \
  template Var<T> maxpool2x2(Tape<T>&, const Var<T>&);                                           \
  template Var<T> global_max_pool(Tape<T>&, const Var<T>&);                                      \
  template Var<T> channel_pad(Tape<T>&, const Var<T>&, std::size_t);                             \
  template Var<T> linear(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                   \
  template Var<T> weighted_sum(Tape<T>&, const Var<T>&, const Var<T>&, std::size_t,              \
                               std::span<const std::size_t>, std::span<const Var<T>>);           \
  template Var<T> softmax_cross_entropy(Tape<T>&, const Var<T>&, std::span<const int>);

THRIFTY_INSTANTIATE_AD(float)
THRIFTY_INSTANTIATE_AD(double)

}  // namespace ad

template class Tape<float>;
template class Tape<double>;

}  // namespace thrifty
