#include "thrifty/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "thrifty/errors.hpp"

namespace thrifty {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  for (std::size_t i = 0; i < lr_drops.size(); ++i) {
    if (lr_drops[i] >= epochs) {
      throw ConfigError("lr drop at epoch " + std::to_string(lr_drops[i]) + " is not below epochs=" +
                        std::to_string(epochs));
    }
    if (i > 0 && lr_drops[i] <= lr_drops[i - 1]) throw ConfigError("lr drops must be strictly increasing");
  }
  if (alpha_reg && !(alpha_reg->lambda0 >= 0.0 && alpha_reg->eps >= 0.0)) {
    throw ConfigError("alpha penalty constants must be >= 0");
  }
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  double lr = config.lr0;
  for (std::size_t drop : config.lr_drops) {
    if (drop <= epoch) lr *= config.lr_drop_factor;
  }
  return lr;
}

std::vector<std::size_t> scaled_drops(std::size_t epochs) {
  std::vector<std::size_t> drops;
  for (std::size_t k : {1, 2}) {
    const auto d = static_cast<std::size_t>(std::llround(static_cast<double>(epochs * k) / 3.0));
    if (d > 0 && d < epochs && (drops.empty() || d > drops.back())) drops.push_back(d);
  }
  return drops;
}

template <typename T>
AlphaRegResult<T> alpha_reg_loss(const Tensor4<T>& alpha, double lambda) {
  AlphaRegResult<T> r{0.0, Tensor4<T>::zeros_like(alpha)};
  auto g = r.grad.data();
  auto a = alpha.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    sum += x * x * (1.0 - x) * (1.0 - x);
    g[i] = static_cast<T>(2.0 * lambda * x * (1.0 - x) * (1.0 - 2.0 * x));
  }
  r.loss = lambda * sum;
  return r;
}

template <typename T>
Tensor4<T> binarize_alpha(const Tensor4<T>& alpha) {
  Tensor4<T> out = alpha;
  for (auto& v : out.data()) v = v >= T(0.5) ? T(1) : T(0);
  return out;
}

template <typename T>
double alpha_well_distance(const Tensor4<T>& alpha) {
  const Shape s = alpha.shape();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < s.h; ++t) {
    for (std::size_t i = 0; i < s.w; ++i) {
      if (!alpha_unmasked(t, i)) continue;
      const double x = alpha(0, 0, t, i);
      sum += std::min(std::abs(x), std::abs(1.0 - x));
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

template <typename T>
void sgd_step(ThriftyParams<T>& params, const ThriftyParams<T>& grads, ThriftyParams<T>& velocity,
              const ThriftyConfig& config, double lr, double momentum, double weight_decay, bool freeze_alpha) {
  auto p_slots = trainables(params, config);
  auto g_slots = trainables(const_cast<ThriftyParams<T>&>(grads), config);
  auto v_slots = trainables(velocity, config);
  for (std::size_t s = 0; s < g_slots.size(); ++s) {
    for (T g : g_slots[s].tensor->data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in " + g_slots[s].name);
      }
    }
  }
  const T m = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t s = 0; s < p_slots.size(); ++s) {
    if (freeze_alpha && p_slots[s].group == "alpha") continue;
    auto p = p_slots[s].tensor->data();
    auto g = g_slots[s].tensor->data();
    auto v = v_slots[s].tensor->data();
    if (p.size() != g.size() || p.size() != v.size()) {
      throw InternalError("gradient layout mismatch at " + p_slots[s].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = m * v[i] + g[i] + wd * p[i];
      p[i] -= step * v[i];
    }
  }
}

template <typename T>
OptimizerState<T> fresh_optimizer_state(const ThriftyModel<T>& model, const TrainConfig& config) {
  OptimizerState<T> s;
  s.velocity = zeros_like(model.params);
  s.lambda = config.alpha_reg ? config.alpha_reg->lambda0 : 0.0;
  s.alpha_frozen = config.freeze_alpha;
  return s;
}

namespace {

std::size_t count_correct(const Tensor4<float>& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.shape().c;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits(n, c, 0, 0) > logits(n, best, 0, 0)) best = c;
    }
    if (static_cast<int>(best) == labels[n]) ++correct;
  }
  return correct;
}

void check_compatible(const ThriftyConfig& config, const ImageDataset& data) {
  if (data.class_count != config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.class_count) + " classes, model has " +
                      std::to_string(config.num_classes));
  }
  if (data.images.shape().c != config.input_channels) {
    throw ConfigError("dataset has " + std::to_string(data.images.shape().c) + " channels, model expects " +
                      std::to_string(config.input_channels));
  }
  config.validate_input(data.images.shape().h, data.images.shape().w);
}

void zero_trainables(ThriftyParams<float>& grads, const ThriftyConfig& config) {
  for (auto& slot : trainables(grads, config)) slot.tensor->fill(0.0f);
}

}  // namespace

double evaluate(ThriftyModel<float>& model, const ImageDataset& dataset, std::size_t batch_size) {
  if (dataset.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  check_compatible(model.config, dataset);
  BatchIterator it(dataset, batch_size, 0, false, false);
  std::size_t correct = 0;
  while (it.has_next()) {
    Batch b = it.next();
    correct += count_correct(model.predict(b.images), b.labels);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TrainResult train(ThriftyModel<float>& model, OptimizerState<float>& state, const ImageDataset& train_set,
                  const ImageDataset& test_set, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  model.config.validate();
  check_compatible(model.config, train_set);
  check_compatible(model.config, test_set);
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (state.velocity.bn.size() != model.params.bn.size()) throw ConfigError("optimizer state does not match model");
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  const bool freeze_alpha = config.freeze_alpha || state.alpha_frozen;
  ThriftyParams<float> grads = zeros_like(model.params);
  TrainResult result;
  result.best_test_acc = state.best_test_acc;
  result.best_epoch = state.best_epoch;

  std::size_t stop = config.epochs;
  if (options.max_epochs_this_call > 0) stop = std::min(stop, state.epochs_completed + options.max_epochs_this_call);

  for (std::size_t epoch = state.epochs_completed; epoch < stop; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = learning_rate(config, epoch);
    const bool reg_active =
        config.alpha_reg && model.config.residual() && (config.alpha_reg->epochs == 0 || epoch < config.alpha_reg->epochs);
    AlphaRegState reg{state.lambda, config.alpha_reg ? config.alpha_reg->eps : 0.0};

    BatchIterator it(train_set, config.batch_size, mix_seed(config.seed, epoch), true,
                     config.augment);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    while (it.has_next()) {
      Batch batch = it.next();
      zero_trainables(grads, model.config);
      Tape<float> tape(true);
      ForwardArgs<float> args;
      args.mode = Mode::train;
      args.grads = &grads;
      Var<float> logits = forward(model.config, model.params, batch.images, tape, args);
      Var<float> loss = ad::softmax_cross_entropy<float>(tape, logits, batch.labels);
      double batch_loss = static_cast<double>(loss->value[0]);
      correct += count_correct(logits->value, batch.labels);
      tape.backward(loss);
      if (reg_active) {
        AlphaRegResult<float> pen = alpha_reg_loss(model.params.alpha, reg.lambda);
        batch_loss += pen.loss;
        grads.alpha += pen.grad;
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch starting at sample " +
                             std::to_string(seen));
      }
      if (options.on_gradients) options.on_gradients(grads);
      sgd_step(model.params, grads, state.velocity, model.config, lr, config.momentum, config.weight_decay,
               freeze_alpha);
      if (reg_active) reg.step();
      loss_sum += batch_loss * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
    }

    state.lambda = reg.lambda;
    MetricRow row;
    row.epoch = epoch + 1;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    row.test_acc = evaluate(model, test_set, config.eval_batch_size);
    row.lambda = config.alpha_reg ? state.lambda : 0.0;
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    state.epochs_completed = static_cast<std::uint32_t>(epoch + 1);
    const bool improved = row.test_acc > state.best_test_acc;
    if (improved) {
      state.best_test_acc = row.test_acc;
      state.best_epoch = static_cast<std::uint32_t>(epoch + 1);
    }
    if (!options.checkpoint_dir.empty()) {
      save_checkpoint(options.checkpoint_dir / "last.ckpt", model, &state);
      if (improved) save_checkpoint(options.checkpoint_dir / "best.ckpt", model, &state);
    }
    result.log.append(row);
    if (options.on_epoch) options.on_epoch(row);
  }

  result.final_test_acc = result.log.rows.empty() ? 0.0 : result.log.rows.back().test_acc;
  result.best_test_acc = state.best_test_acc;
  result.best_epoch = state.best_epoch;
  return result;
}

TrainResult train(ThriftyModel<float>& model, const ImageDataset& train_set, const ImageDataset& test_set,
                  const TrainConfig& config, const TrainOptions& options) {
  OptimizerState<float> state = fresh_optimizer_state(model, config);
  return train(model, state, train_set, test_set, config, options);
}

namespace {

AblationRun run_phase(const std::string& name, ThriftyModel<float>& model, const ImageDataset& train_set,
                      const ImageDataset& test_set, const TrainConfig& config, const TrainOptions& base_options) {
  TrainOptions options = base_options;
  if (!options.checkpoint_dir.empty()) options.checkpoint_dir /= name;
  const Tensor4<float> alpha_before = model.params.alpha;
  TrainResult r = train(model, train_set, test_set, config, options);
  AblationRun run;
  run.name = name;
  run.final_test_acc = r.final_test_acc;
  run.best_test_acc = r.best_test_acc;
  run.log = std::move(r.log);
  run.alpha_unchanged = model.params.alpha == alpha_before;
  return run;
}

}  // namespace

AblationReport ablation_alpha(const ThriftyConfig& model_config, const ImageDataset& train_set,
                              const ImageDataset& test_set, const TrainConfig& base,
                              const AblationConfig& ablation, const TrainOptions& options) {
  if (!model_config.residual()) throw ConfigError("the alpha ablation needs a residual model (history >= 1)");
  TrainConfig phase = base;
  phase.epochs = ablation.epochs_per_phase;
  phase.lr_drops = scaled_drops(ablation.epochs_per_phase);
  phase.freeze_alpha = false;
  phase.alpha_reg.reset();

  TrainConfig phase1 = phase;
  phase1.alpha_reg = ablation.alpha_reg;
  TrainConfig phase2 = phase;
  phase2.freeze_alpha = true;

  AblationReport report;
  ThriftyModel<float> model(model_config, ablation.init_seed, ablation.alpha_init);
  report.alpha_initial = model.params.alpha;
  report.well_distance_initial = alpha_well_distance(model.params.alpha);
  report.baseline = run_phase("phase1", model, train_set, test_set, phase1, options);
  report.alpha_phase1 = model.params.alpha;
  report.well_distance_phase1 = alpha_well_distance(model.params.alpha);
  report.alpha_binary = binarize_alpha(model.params.alpha);

  ThriftyModel<float> continued = model;
  continued.params.alpha = report.alpha_binary;
  report.continued = run_phase("continued", continued, train_set, test_set, phase2, options);

  ThriftyModel<float> same(model_config, ablation.init_seed, ablation.alpha_init);
  same.params.alpha = report.alpha_binary;
  report.same_init = run_phase("same_init", same, train_set, test_set, phase2, options);

  ThriftyModel<float> fresh(model_config, mix_seed(ablation.init_seed, 1), ablation.alpha_init);
  fresh.params.alpha = report.alpha_binary;
  report.fresh_init = run_phase("fresh_init", fresh, train_set, test_set, phase2, options);
  return report;
}

MeanActivations export_mean_activations(ThriftyModel<float>& model, const ImageDataset& dataset,
                                        std::size_t batch_size) {
  check_compatible(model.config, dataset);
  ActivationProbe probe(model.config.iterations, model.config.filters);
  BatchIterator it(dataset, batch_size, 0, false, false);
  while (it.has_next()) {
    Batch b = it.next();
    Tape<float> tape(false);
    ForwardArgs<float> args;
    args.mode = Mode::eval;
    args.probe = &probe;
    forward(model.config, model.params, b.images, tape, args);
  }
  MeanActivations m;
  m.iterations = model.config.iterations;
  m.filters = model.config.filters;
  m.post = probe.post_means();
  m.pre = probe.pre_means();
  return m;
}

#define THRIFTY_INSTANTIATE_TRAIN(T)                                                                  \
  template AlphaRegResult<T> alpha_reg_loss(const Tensor4<T>&, double);                               \
  template Tensor4<T> binarize_alpha(const Tensor4<T>&);                                              \
  template double alpha_well_distance(const Tensor4<T>&);                                             \
  template void sgd_step(ThriftyParams<T>&, const ThriftyParams<T>&, ThriftyParams<T>&,               \
                         const ThriftyConfig&, double, double, double, bool);                         \
  template OptimizerState<T> fresh_optimizer_state(const ThriftyModel<T>&, const TrainConfig&);

THRIFTY_INSTANTIATE_TRAIN(float)
THRIFTY_INSTANTIATE_TRAIN(double)

}  // namespace thrifty
