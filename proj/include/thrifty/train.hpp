#pragma once

// SGD with momentum, the step learning-rate schedule, the double-well penalty
// on alpha with multiplicative annealing, and the alpha freezing ablation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "thrifty/checkpoint.hpp"
#include "thrifty/data.hpp"
#include "thrifty/metrics.hpp"
#include "thrifty/model.hpp"

namespace thrifty {

struct AlphaRegConfig {
  double lambda0 = 3e-4;
  double eps = 1.5e-4;
  std::size_t epochs = 0;  // active for the first `epochs` epochs; 0 = all
};

struct TrainConfig {
  std::size_t epochs = 200;
  double lr0 = 0.1;
  std::vector<std::size_t> lr_drops = {50, 100, 150};
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::optional<AlphaRegConfig> alpha_reg;
  bool augment = true;
  bool freeze_alpha = false;
  std::size_t eval_batch_size = 500;

  void validate() const;
};

// Epochs are 0-based; each drop at or before `epoch` scales lr0 once.
double learning_rate(const TrainConfig& config, std::size_t epoch);

// Drops at round(E/3) and round(2E/3): the 50/100 pattern of a 150-epoch run.
std::vector<std::size_t> scaled_drops(std::size_t epochs);

struct AlphaRegState {
  double lambda = 0.0;
  double eps = 0.0;
  void step() { lambda *= 1.0 + eps; }
};

template <typename T>
struct AlphaRegResult {
  double loss = 0.0;
  Tensor4<T> grad;
};

// lambda * sum x^2 (1 - x)^2 over every entry, with its gradient.
template <typename T>
AlphaRegResult<T> alpha_reg_loss(const Tensor4<T>& alpha, double lambda);

// x >= 0.5 -> 1, else 0. Masked entries are ignored by the forward pass
// regardless of value, so they stay masked.
template <typename T>
Tensor4<T> binarize_alpha(const Tensor4<T>& alpha);

// Mean over unmasked entries of min(|x|, |1 - x|).
template <typename T>
double alpha_well_distance(const Tensor4<T>& alpha);

// v <- momentum v + g + wd p;  p <- p - lr v. Only trainable tensors are
// touched; with freeze_alpha the alpha tensor and its velocity are skipped.
// Throws NumericalError naming the first tensor with a non-finite gradient.
template <typename T>
void sgd_step(ThriftyParams<T>& params, const ThriftyParams<T>& grads, ThriftyParams<T>& velocity,
              const ThriftyConfig& config, double lr, double momentum, double weight_decay,
              bool freeze_alpha = false);

template <typename T>
OptimizerState<T> fresh_optimizer_state(const ThriftyModel<T>& model, const TrainConfig& config);

// Eval-mode top-1 accuracy in percent.
double evaluate(ThriftyModel<float>& model, const ImageDataset& dataset, std::size_t batch_size = 500);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  std::function<void(const MetricRow&)> on_epoch;
  // Called after backward with the batch gradients, before the update.
  std::function<void(ThriftyParams<float>&)> on_gradients;
  // Stop after this many epochs in this call (0 = run to config.epochs).
  std::size_t max_epochs_this_call = 0;
};

struct TrainResult {
  MetricLog log;  // rows produced by this call
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  std::size_t best_epoch = 0;
};

// Runs epochs state.epochs_completed .. config.epochs - 1. Epoch e shuffles and
// augments with mix_seed(config.seed, e), so a resumed run replays the same
// batches. Writes last.ckpt every epoch and best.ckpt on a new best test
// accuracy when checkpoint_dir is set. A non-finite loss throws NumericalError
// and leaves the checkpoints of the last completed epoch in place.
TrainResult train(ThriftyModel<float>& model, OptimizerState<float>& state, const ImageDataset& train_set,
                  const ImageDataset& test_set, const TrainConfig& config, const TrainOptions& options = {});

// Convenience overload starting from a fresh optimizer state.
TrainResult train(ThriftyModel<float>& model, const ImageDataset& train_set, const ImageDataset& test_set,
                  const TrainConfig& config, const TrainOptions& options = {});

struct AblationRun {
  std::string name;
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  MetricLog log;
  bool alpha_unchanged = false;  // alpha after phase 2 == binarized alpha, bit-exact
};

struct AblationReport {
  AblationRun baseline;  // phase 1, with the alpha penalty
  AblationRun continued;    // (a) keep phase-1 weights
  AblationRun same_init;    // (b) replay the phase-1 init seed
  AblationRun fresh_init;   // (c) a new init seed
  Tensor4<float> alpha_initial;
  Tensor4<float> alpha_phase1;
  Tensor4<float> alpha_binary;
  double well_distance_initial = 0.0;
  double well_distance_phase1 = 0.0;
};

struct AblationConfig {
  std::size_t epochs_per_phase = 150;
  AlphaRegConfig alpha_reg;
  std::uint64_t init_seed = 0;
  AlphaInit alpha_init = AlphaInit::identity;
};

// `base` supplies batch size, momentum, seed and augmentation; epochs and LR
// drops come from epochs_per_phase. Each phase-2 run starts with zero velocity.
AblationReport ablation_alpha(const ThriftyConfig& model_config, const ImageDataset& train_set,
                              const ImageDataset& test_set, const TrainConfig& base,
                              const AblationConfig& ablation, const TrainOptions& options = {});

// T x f means of x_{t+1} (post) or of sigma(W*x_t) (pre) over the dataset,
// eval mode.
struct MeanActivations {
  std::size_t iterations = 0;
  std::size_t filters = 0;
  std::vector<double> post;
  std::vector<double> pre;
};

MeanActivations export_mean_activations(ThriftyModel<float>& model, const ImageDataset& dataset,
                                        std::size_t batch_size = 500);

}  // namespace thrifty
