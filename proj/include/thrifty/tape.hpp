#pragma once

// Reverse-mode differentiation over the primitives in ops.hpp.
//
// A Var is a shared handle to a node holding a forward value. When the tape is
// recording, each op appends its output node together with a closure that maps
// the node's gradient onto its inputs. Nodes are appended in execution order,
// so a reverse sweep visits every consumer before its producers.

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "thrifty/ops.hpp"

namespace thrifty {

template <typename T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;
  bool has_grad = false;
  std::function<void(const Tensor4<T>&)> backward;
  Tensor4<T>* grad_sink = nullptr;  // parameter leaves only

  void accumulate(const Tensor4<T>& g) {
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad += g;
    }
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor4<T> value);
  // Leaf whose gradient is added into *grad_sink by backward(). A null sink
  // makes the leaf a constant.
  Var<T> parameter(const Tensor4<T>& value, Tensor4<T>* grad_sink);
  Var<T> record(Tensor4<T> value, std::function<void(const Tensor4<T>&)> backward);

  // Seeds root with `seed` (ones for a scalar root) and sweeps the tape once.
  void backward(const Var<T>& root, const Tensor4<T>& seed);
  void backward(const Var<T>& scalar_root);

 private:
  bool recording_;
  std::vector<Var<T>> nodes_;
};

// Differentiable wrappers. Each records one node on the tape.
namespace ad {

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, std::size_t groups,
              Padding padding);

template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormState<T>& state, Mode mode);

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> tanh_act(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> maxpool2x2(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> global_max_pool(Tape<T>& tape, const Var<T>& input);

template <typename T>
Var<T> channel_pad(Tape<T>& tape, const Var<T>& input, std::size_t target_channels);

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias);

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

// base + sum_j coeffs[row, cols[j]] * terms[j], coeffs a (1,1,R,C) tensor.
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& base, const Var<T>& coeffs, std::size_t row,
                    std::span<const std::size_t> cols, std::span<const Var<T>> terms);

// Mean cross-entropy as a 1x1x1x1 node.
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& scores, std::span<const int> labels);

}  // namespace ad

}  // namespace thrifty
