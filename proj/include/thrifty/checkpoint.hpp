#pragma once

// Little-endian binary checkpoint:
//
//   "THRIFTY1"                         8-byte magic
//   u32 version (=1), u32 scalar_bytes (4 | 8)
//   u32 filters, kernel_h, kernel_w, iterations, history,
//       conv_mode, activation, pool_order, num_classes, input_channels
//   u32 schedule[iterations]
//   f64 bn_momentum, f64 bn_epsilon
//   scalars: conv weights (classical) | depthwise then pointwise (grouped),
//            then per iteration gamma, beta, running_mean, running_var,
//            alpha row-major (residual only), FC weights (f x K), FC bias (K)
//   u8 has_optimizer
//   if has_optimizer:
//     "OPTSTATE", u32 epochs_completed, f64 lambda, f64 best_test_acc,
//     u32 best_epoch, u8 alpha_frozen, velocity for every trainable tensor
//     in trainables() order
//
// The file must end exactly after the last field.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "thrifty/model.hpp"

namespace thrifty {

template <typename T>
struct OptimizerState {
  ThriftyParams<T> velocity;
  std::uint32_t epochs_completed = 0;
  double lambda = 0.0;
  double best_test_acc = -1.0;
  std::uint32_t best_epoch = 0;
  bool alpha_frozen = false;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename T>
struct Checkpoint {
  ThriftyModel<T> model;
  std::optional<OptimizerState<T>> optimizer;
};

template <typename T>
std::string serialize_checkpoint(const ThriftyModel<T>& model, const OptimizerState<T>* optimizer = nullptr);

// Throws FormatError on bad magic, truncation, trailing bytes or an invalid header.
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes);

// Writes atomically through a temporary file in the same directory.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ThriftyModel<T>& model,
                     const OptimizerState<T>* optimizer = nullptr);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace thrifty
