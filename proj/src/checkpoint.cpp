#include "thrifty/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace thrifty {

namespace {

constexpr char kMagic[8] = {'T', 'H', 'R', 'I', 'F', 'T', 'Y', '1'};
constexpr char kOptMagic[8] = {'O', 'P', 'T', 'S', 'T', 'A', 'T', 'E'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename T>
  void scalar(T v) {
    if constexpr (sizeof(T) == 4) {
      u32(std::bit_cast<std::uint32_t>(v));
    } else {
      u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  template <typename T>
  void tensor(const Tensor4<T>& t) {
    for (T v : t.data()) scalar(v);
  }
  template <typename T>
  void values(const std::vector<T>& v) {
    for (T x : v) scalar(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : data_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " (offset " +
                        std::to_string(pos_) + ", " + std::to_string(data_.size()) + " bytes total)");
    }
  }
  void expect_magic(const char (&magic)[8], const char* what) {
    need(8, what);
    if (std::memcmp(data_.data() + pos_, magic, 8) != 0) {
      throw FormatError(std::string("bad ") + what + " magic");
    }
    pos_ += 8;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  template <typename T>
  T scalar(const char* what) {
    if constexpr (sizeof(T) == 4) {
      return std::bit_cast<T>(u32(what));
    } else {
      return std::bit_cast<T>(u64(what));
    }
  }
  template <typename T>
  void tensor(Tensor4<T>& t, const char* what) {
    need(t.numel() * sizeof(T), what);
    for (auto& v : t.data()) v = scalar<T>(what);
  }
  template <typename T>
  void values(std::vector<T>& v, const char* what) {
    need(v.size() * sizeof(T), what);
    for (auto& x : v) x = scalar<T>(what);
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_params(Writer& w, const ThriftyConfig& c, const ThriftyParams<T>& p) {
  if (c.conv_mode == ConvMode::classical) {
    w.tensor(p.conv);
  } else {
    w.tensor(p.depthwise);
    w.tensor(p.pointwise);
  }
  for (const auto& bn : p.bn) {
    w.tensor(bn.gamma);
    w.tensor(bn.beta);
    w.values(bn.running_mean);
    w.values(bn.running_var);
  }
  if (c.residual()) w.tensor(p.alpha);
  w.tensor(p.fc_weight);
  w.tensor(p.fc_bias);
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const ThriftyModel<T>& model, const OptimizerState<T>* optimizer) {
  const ThriftyConfig& c = model.config;
  c.validate();
  Writer w;
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.u32(sizeof(T));
  for (std::size_t v : {c.filters, c.kernel_h, c.kernel_w, c.iterations, c.history}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(c.conv_mode));
  w.u32(static_cast<std::uint32_t>(c.activation));
  w.u32(static_cast<std::uint32_t>(c.pool_order));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.input_channels));
  for (auto f : c.schedule.factors) w.u32(f);
  const BatchNormState<T> defaults(1);
  w.f64(model.params.bn.empty() ? defaults.momentum : model.params.bn.front().momentum);
  w.f64(model.params.bn.empty() ? defaults.epsilon : model.params.bn.front().epsilon);
  write_params(w, c, model.params);
  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    w.bytes(kOptMagic, 8);
    w.u32(optimizer->epochs_completed);
    w.f64(optimizer->lambda);
    w.f64(optimizer->best_test_acc);
    w.u32(optimizer->best_epoch);
    w.u8(optimizer->alpha_frozen ? 1 : 0);
    auto& velocity = const_cast<ThriftyParams<T>&>(optimizer->velocity);
    for (const auto& slot : trainables(velocity, c)) w.tensor(*slot.tensor);
  }
  return w.take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic(kMagic, "checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t scalar_bytes = r.u32("scalar width");
  if (scalar_bytes != sizeof(T)) {
    throw FormatError("checkpoint stores " + std::to_string(scalar_bytes) + "-byte scalars, expected " +
                      std::to_string(sizeof(T)));
  }
  ThriftyConfig c;
  c.filters = r.u32("filters");
  c.kernel_h = r.u32("kernel_h");
  c.kernel_w = r.u32("kernel_w");
  c.iterations = r.u32("iterations");
  c.history = r.u32("history");
  const std::uint32_t conv_mode = r.u32("conv_mode");
  const std::uint32_t activation = r.u32("activation");
  const std::uint32_t pool_order = r.u32("pool_order");
  if (conv_mode > 1 || activation > 1 || pool_order > 1) throw FormatError("checkpoint enum field out of range");
  c.conv_mode = static_cast<ConvMode>(conv_mode);
  c.activation = static_cast<Activation>(activation);
  c.pool_order = static_cast<PoolOrder>(pool_order);
  c.num_classes = r.u32("num_classes");
  c.input_channels = r.u32("input_channels");
  r.need(std::size_t{4} * c.iterations, "schedule");
  for (std::size_t t = 0; t < c.iterations; ++t) c.schedule.factors.push_back(r.u32("schedule"));
  const double momentum = r.f64("bn momentum");
  const double epsilon = r.f64("bn epsilon");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header is invalid: ") + e.what());
  }
  // Reject absurd headers before allocating.
  const std::uint64_t f = c.filters;
  const std::uint64_t expected =
      (c.conv_mode == ConvMode::classical ? f * f * c.kernel_h * c.kernel_w
                                          : f * c.kernel_h * c.kernel_w + f * f) +
      4 * f * c.iterations + (c.residual() ? std::uint64_t{c.iterations} * (c.history + 1) : 0) +
      f * c.num_classes + c.num_classes;
  if (expected * sizeof(T) > r.remaining()) {
    throw FormatError("checkpoint truncated: header promises " + std::to_string(expected * sizeof(T)) +
                      " parameter bytes, " + std::to_string(r.remaining()) + " remain");
  }

  Checkpoint<T> ck;
  ck.model.config = c;
  ThriftyParams<T> p = init_params<T>(c, 0);
  if (c.conv_mode == ConvMode::classical) {
    r.tensor(p.conv, "conv weights");
  } else {
    r.tensor(p.depthwise, "depthwise weights");
    r.tensor(p.pointwise, "pointwise weights");
  }
  for (auto& bn : p.bn) {
    bn.momentum = momentum;
    bn.epsilon = epsilon;
    r.tensor(bn.gamma, "gamma");
    r.tensor(bn.beta, "beta");
    r.values(bn.running_mean, "running mean");
    r.values(bn.running_var, "running var");
  }
  if (c.residual()) r.tensor(p.alpha, "alpha");
  r.tensor(p.fc_weight, "fc weights");
  r.tensor(p.fc_bias, "fc bias");
  ck.model.params = std::move(p);

  const std::uint8_t has_opt = r.u8("optimizer flag");
  if (has_opt > 1) throw FormatError("bad optimizer flag");
  if (has_opt) {
    r.expect_magic(kOptMagic, "optimizer section");
    OptimizerState<T> opt;
    opt.epochs_completed = r.u32("epochs");
    opt.lambda = r.f64("lambda");
    opt.best_test_acc = r.f64("best accuracy");
    opt.best_epoch = r.u32("best epoch");
    const std::uint8_t frozen = r.u8("alpha frozen");
    if (frozen > 1) throw FormatError("bad alpha frozen flag");
    opt.alpha_frozen = frozen == 1;
    opt.velocity = zeros_like(ck.model.params);
    for (const auto& slot : trainables(opt.velocity, c)) r.tensor(*slot.tensor, "velocity");
    ck.optimizer = std::move(opt);
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ThriftyModel<T>& model,
                     const OptimizerState<T>* optimizer) {
  const std::string bytes = serialize_checkpoint(model, optimizer);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string() + ": " + ec.message());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes);
}

#define THRIFTY_INSTANTIATE_CKPT(T)                                                                  \
  template std::string serialize_checkpoint(const ThriftyModel<T>&, const OptimizerState<T>*);       \
  template Checkpoint<T> deserialize_checkpoint<T>(const std::string&);                              \
  template void save_checkpoint(const std::filesystem::path&, const ThriftyModel<T>&,                \
                                const OptimizerState<T>*);                                           \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

THRIFTY_INSTANTIATE_CKPT(float)
THRIFTY_INSTANTIATE_CKPT(double)

}  // namespace thrifty
