#include "thrifty/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "thrifty/instrument.hpp"

namespace thrifty {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// c (m x p) = a (m x k) * b (k x p), all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  if (auto* tally = ScopedMacTally::active()) {
    std::uint64_t macs = 0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        T acc = T(0);
        for (std::size_t q = 0; q < k; ++q) {
          acc += a[i * k + q] * b[q * p + j];
          ++macs;
        }
        c[i * p + j] = acc;
      }
    }
    tally->add(macs);
    return;
  }
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  MatMap<T>(c, ei(m), ei(p)).noalias() =
      ConstMatMap<T>(a, ei(m), ei(k)) * ConstMatMap<T>(b, ei(k), ei(p));
}

struct ConvDims {
  std::size_t n, cin, h, w;
  std::size_t cout, groups, cin_g, cout_g, kh, kw, ph, pw;
  std::size_t oh, ow;
  std::size_t k() const { return cin_g * kh * kw; }
  std::size_t p() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && ph == 0 && pw == 0; }
};

template <typename T>
ConvDims conv_dims(const Shape& in, const ConvKernel<T>& kernel, Padding pad) {
  const Shape& ws = kernel.weights.shape();
  if (kernel.groups == 0) throw ConfigError("conv2d: groups must be positive");
  if (ws.h % 2 == 0 || ws.w % 2 == 0) {
    throw ConfigError("conv2d: kernel size " + std::to_string(ws.h) + "x" + std::to_string(ws.w) +
                      " must be odd");
  }
  if (ws.n % kernel.groups != 0) {
    throw ConfigError("conv2d: groups " + std::to_string(kernel.groups) +
                      " does not divide f_out " + std::to_string(ws.n));
  }
  if (in.c != ws.c * kernel.groups) {
    throw ConfigError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                      std::to_string(ws.c * kernel.groups));
  }
  if (in.h + 2 * pad.h < ws.h || in.w + 2 * pad.w < ws.w) {
    throw ConfigError("conv2d: kernel larger than padded input");
  }
  ConvDims d{};
  d.n = in.n;
  d.cin = in.c;
  d.h = in.h;
  d.w = in.w;
  d.cout = ws.n;
  d.groups = kernel.groups;
  d.cin_g = ws.c;
  d.cout_g = ws.n / kernel.groups;
  d.kh = ws.h;
  d.kw = ws.w;
  d.ph = pad.h;
  d.pw = pad.w;
  d.oh = in.h + 2 * pad.h - ws.h + 1;
  d.ow = in.w + 2 * pad.w - ws.w + 1;
  return d;
}

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t k, std::size_t pad, std::size_t in, std::size_t out,
                        std::size_t& lo, std::size_t& hi) {
  // input index = o + k - pad must be in [0, in)
  if (k >= in + pad) {
    lo = hi = 0;
    return;
  }
  lo = pad > k ? pad - k : 0;
  const std::size_t limit = in + pad - k;  // o < limit
  hi = std::min(out, limit);
  if (lo > hi) lo = hi;
}

// col (k x p) from channels [c0, c0 + cin_g) of sample n.
template <typename T>
void im2col(const T* src, const ConvDims& d, T* col) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.cin_g; ++c) {
    const T* plane = src + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      std::size_t oy_lo, oy_hi;
      valid_range(ky, d.ph, d.h, d.oh, oy_lo, oy_hi);
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        std::size_t ox_lo, ox_hi;
        valid_range(kx, d.pw, d.w, d.ow, ox_lo, ox_hi);
        T* dst = col + row * d.p();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          T* out = dst + oy * d.ow;
          if (oy < oy_lo || oy >= oy_hi) {
            std::fill(out, out + d.ow, T(0));
            continue;
          }
          const T* in = plane + (oy + ky - d.ph) * d.w;
          std::fill(out, out + ox_lo, T(0));
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) out[ox] = in[ox + kx - d.pw];
          std::fill(out + ox_hi, out + d.ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* dst) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.cin_g; ++c) {
    T* plane = dst + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      std::size_t oy_lo, oy_hi;
      valid_range(ky, d.ph, d.h, d.oh, oy_lo, oy_hi);
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        std::size_t ox_lo, ox_hi;
        valid_range(kx, d.pw, d.w, d.ow, ox_lo, ox_hi);
        const T* src = col + row * d.p();
        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
          T* out = plane + (oy + ky - d.ph) * d.w;
          const T* in = src + oy * d.ow;
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) out[ox + kx - d.pw] += in[ox];
        }
      }
    }
  }
}

}  // namespace

Padding same_padding(std::size_t kh, std::size_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("same-padding is undefined for even kernel size " + std::to_string(kh) +
                      "x" + std::to_string(kw));
  }
  return {(kh - 1) / 2, (kw - 1) / 2};
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvKernel<T>& kernel, Padding padding) {
  const ConvDims d = conv_dims(input.shape(), kernel, padding);
  Tensor4<T> out({d.n, d.cout, d.oh, d.ow});
  std::vector<T> col(d.pointwise() ? 0 : d.k() * d.p());
  const std::size_t w_group = d.cout_g * d.k();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t g = 0; g < d.groups; ++g) {
      const T* src = input.ptr() + input.index(n, g * d.cin_g, 0, 0);
      const T* b = src;
      if (!d.pointwise()) {
        im2col(src, d, col.data());
        b = col.data();
      }
      gemm(kernel.weights.ptr() + g * w_group, b, out.ptr() + out.index(n, g * d.cout_g, 0, 0),
           d.cout_g, d.k(), d.p());
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                             const ConvKernel<T>& kernel, Padding padding) {
  const ConvDims d = conv_dims(input.shape(), kernel, padding);
  if (grad_out.shape() != Shape{d.n, d.cout, d.oh, d.ow}) {
    throw InternalError("conv2d_backward: grad_out dims " + grad_out.shape().str() +
                        " do not match forward output");
  }
  ConvGrads<T> grads{Tensor4<T>(input.shape()), Tensor4<T>(kernel.weights.shape())};
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  std::vector<T> col(d.k() * d.p());
  std::vector<T> dcol(d.k() * d.p());
  const std::size_t w_group = d.cout_g * d.k();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t g = 0; g < d.groups; ++g) {
      const T* src = input.ptr() + input.index(n, g * d.cin_g, 0, 0);
      const T* dy = grad_out.ptr() + grad_out.index(n, g * d.cout_g, 0, 0);
      const T* b = src;
      if (!d.pointwise()) {
        im2col(src, d, col.data());
        b = col.data();
      }
      ConstMatMap<T> dy_m(dy, ei(d.cout_g), ei(d.p()));
      MatMap<T>(grads.weights.ptr() + g * w_group, ei(d.cout_g), ei(d.k())).noalias() +=
          dy_m * ConstMatMap<T>(b, ei(d.k()), ei(d.p())).transpose();
      ConstMatMap<T> w_m(kernel.weights.ptr() + g * w_group, ei(d.cout_g), ei(d.k()));
      T* dx = grads.input.ptr() + grads.input.index(n, g * d.cin_g, 0, 0);
      if (d.pointwise()) {
        MatMap<T>(dx, ei(d.k()), ei(d.p())).noalias() += w_m.transpose() * dy_m;
      } else {
        MatMap<T>(dcol.data(), ei(d.k()), ei(d.p())).noalias() = w_m.transpose() * dy_m;
        col2im_add(dcol.data(), d, dx);
      }
    }
  }
  return grads;
}

template <typename T>
Tensor4<T> grouped_conv(const Tensor4<T>& input, const ConvKernel<T>& depthwise,
                        const ConvKernel<T>& pointwise) {
  if (depthwise.groups != depthwise.f_in() || depthwise.f_out() != depthwise.f_in()) {
    throw ConfigError("grouped_conv: depthwise stage must have groups == channels");
  }
  if (pointwise.groups != 1 || pointwise.kh() != 1 || pointwise.kw() != 1) {
    throw ConfigError("grouped_conv: pointwise stage must be 1x1 with one group");
  }
  const Tensor4<T> spatial =
      conv2d(input, depthwise, same_padding(depthwise.kh(), depthwise.kw()));
  return conv2d(spatial, pointwise, Padding{0, 0});
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t channels)
    : gamma({1, channels, 1, 1}, T(1)),
      beta({1, channels, 1, 1}, T(0)),
      running_mean(channels, T(0)),
      running_var(channels, T(1)) {}

template <typename T>
Tensor4<T> batchnorm(const Tensor4<T>& input, BatchNormState<T>& state, Mode mode,
                     BatchNormCache<T>* cache) {
  const Shape s = input.shape();
  if (state.channels() != s.c || state.gamma.numel() != s.c || state.beta.numel() != s.c) {
    throw ConfigError("batchnorm: state has " + std::to_string(state.channels()) +
                      " channels, input has " + std::to_string(s.c));
  }
  const std::size_t m = s.n * s.plane();
  if (mode == Mode::train && m == 1) {
    throw ConfigError("batchnorm: degenerate batch (N*H*W = 1) in train mode");
  }
  Tensor4<T> out(s);
  Tensor4<T> normalized(s);
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean;
    double var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (T v : input.plane(n, c)) sum += v;
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (T v : input.plane(n, c)) sq += (v - mean) * (v - mean);
      var = sq / static_cast<double>(m);
      const double unbiased = sq / static_cast<double>(m - 1);
      state.running_mean[c] =
          static_cast<T>((1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean);
      state.running_var[c] =
          static_cast<T>((1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T mean_t = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
    inv_std[c] = inv;
    const T g = state.gamma[c];
    const T b = state.beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      auto src = input.plane(n, c);
      auto xh = normalized.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        xh[i] = (src[i] - mean_t) * inv;
        dst[i] = g * xh[i] + b;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache,
                                     const Tensor4<T>& gamma) {
  const Shape s = cache.normalized.shape();
  if (grad_out.shape() != s) throw InternalError("batchnorm_backward: dims mismatch");
  BatchNormGrads<T> g{Tensor4<T>(s), Tensor4<T>(gamma.shape()), Tensor4<T>(gamma.shape())};
  const double m = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto dy = grad_out.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
      }
    }
    g.gamma[c] = static_cast<T>(sum_dy_xhat);
    g.beta[c] = static_cast<T>(sum_dy);
    const T scale = gamma[c] * cache.inv_std[c];
    if (cache.mode == Mode::eval) {
      for (std::size_t n = 0; n < s.n; ++n) {
        auto dy = grad_out.plane(n, c);
        auto dx = g.input.plane(n, c);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = scale * dy[i];
      }
      continue;
    }
    // dx = gamma * inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))
    const T mean_dy = static_cast<T>(sum_dy / m);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
    for (std::size_t n = 0; n < s.n; ++n) {
      auto dy = grad_out.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      auto dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
      }
    }
  }
  return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  if (auto* trace = ScopedBranchTrace::active()) {
    for (std::size_t i = 0; i < input.numel(); ++i) trace->record(2 * i + (input[i] > T(0)));
  }
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input) {
  if (grad_out.shape() != input.shape()) throw InternalError("relu_backward: dims mismatch");
  Tensor4<T> dx(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) dx[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

template <typename T>
Tensor4<T> tanh_act(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = std::tanh(input[i]);
  return out;
}

template <typename T>
Tensor4<T> tanh_backward(const Tensor4<T>& grad_out, const Tensor4<T>& output) {
  if (grad_out.shape() != output.shape()) throw InternalError("tanh_backward: dims mismatch");
  Tensor4<T> dx(output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) {
    dx[i] = grad_out[i] * (T(1) - output[i] * output[i]);
  }
  return dx;
}

std::size_t pooled_extent(std::size_t extent) { return (extent + 1) / 2; }

template <typename T>
Tensor4<T> maxpool2x2(const Tensor4<T>& input, ArgmaxIndex* argmax) {
  const Shape s = input.shape();
  const std::size_t oh = pooled_extent(s.h);
  const std::size_t ow = pooled_extent(s.w);
  Tensor4<T> out({s.n, s.c, oh, ow});
  if (argmax) argmax->assign(out.numel(), 0);
  auto* trace = ScopedBranchTrace::active();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = input.index(n, c, 0, 0);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const std::size_t y0 = 2 * oy;
        const std::size_t y1 = std::min(y0 + 1, s.h - 1);
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          const std::size_t x0 = 2 * ox;
          const std::size_t x1 = std::min(x0 + 1, s.w - 1);
          const std::size_t cand[4] = {base + y0 * s.w + x0, base + y0 * s.w + x1,
                                       base + y1 * s.w + x0, base + y1 * s.w + x1};
          std::size_t best = cand[0];
          for (int k = 1; k < 4; ++k) {
            if (input[cand[k]] > input[best]) best = cand[k];
          }
          out[o] = input[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
          if (trace) trace->record(best);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> global_max_pool(const Tensor4<T>& input, ArgmaxIndex* argmax) {
  const Shape s = input.shape();
  Tensor4<T> out({s.n, s.c, 1, 1});
  if (argmax) argmax->assign(out.numel(), 0);
  auto* trace = ScopedBranchTrace::active();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = input.index(n, c, 0, 0);
      std::size_t best = base;
      for (std::size_t i = 1; i < s.plane(); ++i) {
        if (input[base + i] > input[best]) best = base + i;
      }
      out[n * s.c + c] = input[best];
      if (argmax) (*argmax)[n * s.c + c] = static_cast<std::uint32_t>(best);
      if (trace) trace->record(best);
    }
  }
  return out;
}

template <typename T>
Tensor4<T> max_backward(const Tensor4<T>& grad_out, const ArgmaxIndex& argmax, Shape input_shape) {
  if (argmax.size() != grad_out.numel()) throw InternalError("max_backward: argmax size mismatch");
  Tensor4<T> dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += grad_out[i];
  return dx;
}

template <typename T>
Tensor4<T> channel_pad(const Tensor4<T>& input, std::size_t target_channels) {
  const Shape s = input.shape();
  if (target_channels < s.c) {
    throw ConfigError("channel_pad: target " + std::to_string(target_channels) +
                      " is smaller than input channels " + std::to_string(s.c));
  }
  Tensor4<T> out({s.n, target_channels, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = input.data().subspan(input.index(n, 0, 0, 0), s.c * s.plane());
    std::copy(src.begin(), src.end(), out.ptr() + out.index(n, 0, 0, 0));
  }
  return out;
}

template <typename T>
Tensor4<T> channel_pad_backward(const Tensor4<T>& grad_out, std::size_t input_channels) {
  const Shape s = grad_out.shape();
  if (input_channels > s.c) throw InternalError("channel_pad_backward: too many channels");
  Tensor4<T> dx({s.n, input_channels, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = grad_out.data().subspan(grad_out.index(n, 0, 0, 0), input_channels * s.plane());
    std::copy(src.begin(), src.end(), dx.ptr() + dx.index(n, 0, 0, 0));
  }
  return dx;
}

template <typename T>
Tensor4<T> linear(const Tensor4<T>& input, const Tensor4<T>& weights, const Tensor4<T>& bias) {
  const std::size_t n = input.n();
  const std::size_t f = input.numel() / n;
  const std::size_t k = weights.w();
  if (weights.n() != 1 || weights.c() != 1 || weights.h() != f) {
    throw ConfigError("linear: weights " + weights.shape().str() + " do not accept " +
                      std::to_string(f) + " features");
  }
  if (bias.numel() != k) throw ConfigError("linear: bias length does not match outputs");
  Tensor4<T> out({n, k, 1, 1});
  gemm(input.ptr(), weights.ptr(), out.ptr(), n, f, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias[j];
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& grad_out, const Tensor4<T>& input,
                               const Tensor4<T>& weights) {
  const std::size_t n = input.n();
  const std::size_t f = input.numel() / n;
  const std::size_t k = weights.w();
  if (grad_out.numel() != n * k) throw InternalError("linear_backward: dims mismatch");
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  LinearGrads<T> g{Tensor4<T>(input.shape()), Tensor4<T>(weights.shape()),
                   Tensor4<T>({1, 1, 1, k})};
  ConstMatMap<T> dy(grad_out.ptr(), ei(n), ei(k));
  ConstMatMap<T> x(input.ptr(), ei(n), ei(f));
  ConstMatMap<T> w(weights.ptr(), ei(f), ei(k));
  MatMap<T>(g.input.ptr(), ei(n), ei(f)).noalias() = dy * w.transpose();
  MatMap<T>(g.weights.ptr(), ei(f), ei(k)).noalias() = x.transpose() * dy;
  for (std::size_t j = 0; j < k; ++j) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += grad_out[i * k + j];
    g.bias[j] = acc;
  }
  return g;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T>& scores, std::span<const int> labels) {
  const std::size_t n = scores.n();
  const std::size_t k = scores.numel() / n;
  if (labels.size() != n) {
    throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                    " labels for batch of " + std::to_string(n));
  }
  LossResult<T> r{0.0, Tensor4<T>(scores.shape())};
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
    }
    const T* row = scores.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    r.loss += -(static_cast<double>(row[label]) - mx - std::log(z));
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = static_cast<std::size_t>(label) == j ? 1.0 : 0.0;
      r.grad_scores[i * k + j] = static_cast<T>((p[j] / z - onehot) / static_cast<double>(n));
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  Tensor4<T> out = a;
  out += b;
  return out;
}

template <typename T>
void axpy(T scale, const Tensor4<T>& x, Tensor4<T>& out) {
  if (x.shape() != out.shape()) throw InternalError("axpy: dims mismatch");
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] += scale * x[i];
}

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.shape() != b.shape()) throw InternalError("dot: dims mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

#define THRIFTY_INSTANTIATE_OPS(T)                                                              \
  template struct BatchNormState<T>;                                                            \
  template Tensor4<T> conv2d(const Tensor4<T>&, const ConvKernel<T>&, Padding);                 \
  template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const Tensor4<T>&,                   \
                                        const ConvKernel<T>&, Padding);                         \
  template Tensor4<T> grouped_conv(const Tensor4<T>&, const ConvKernel<T>&,                     \
                                   const ConvKernel<T>&);                                       \
  template Tensor4<T> batchnorm(const Tensor4<T>&, BatchNormState<T>&, Mode,                    \
                                BatchNormCache<T>*);                                            \
  template BatchNormGrads<T> batchnorm_backward(const Tensor4<T>&, const BatchNormCache<T>&,    \
                                                const Tensor4<T>&);                             \
  template Tensor4<T> relu(const Tensor4<T>&);                                                  \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                      \
  template Tensor4<T> tanh_act(const Tensor4<T>&);                                              \
  template Tensor4<T> tanh_backward(const Tensor4<T>&, const Tensor4<T>&);                      \
  template Tensor4<T> maxpool2x2(const Tensor4<T>&, ArgmaxIndex*);                              \
  template Tensor4<T> global_max_pool(const Tensor4<T>&, ArgmaxIndex*);                         \
  template Tensor4<T> max_backward(const Tensor4<T>&, const ArgmaxIndex&, Shape);               \
  template Tensor4<T> channel_pad(const Tensor4<T>&, std::size_t);                              \
  template Tensor4<T> channel_pad_backward(const Tensor4<T>&, std::size_t);                     \
  template Tensor4<T> linear(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&);          \
  template LinearGrads<T> linear_backward(const Tensor4<T>&, const Tensor4<T>&,                 \
                                          const Tensor4<T>&);                                   \
  template LossResult<T> softmax_cross_entropy(const Tensor4<T>&, std::span<const int>);        \
  template Tensor4<T> add(const Tensor4<T>&, const Tensor4<T>&);                                \
  template void axpy(T, const Tensor4<T>&, Tensor4<T>&);                                        \
  template double dot(const Tensor4<T>&, const Tensor4<T>&);

THRIFTY_INSTANTIATE_OPS(float)
THRIFTY_INSTANTIATE_OPS(double)

}  // namespace thrifty
