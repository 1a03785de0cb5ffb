#pragma once

// Shared oracles for the unit and acceptance tests.

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "thrifty/data.hpp"
#include "thrifty/tensor.hpp"

namespace testing_support {

using thrifty::Shape;
using thrifty::Tensor4;

template <typename T>
Tensor4<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor4<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

// Direct six-loop convolution, stride 1, zero padding, groups.
template <typename T>
Tensor4<T> naive_conv(const Tensor4<T>& x, const Tensor4<T>& w, std::size_t groups, std::size_t ph,
                      std::size_t pw) {
  const std::size_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::size_t F = w.n(), cg = w.c(), KH = w.h(), KW = w.w();
  const std::size_t H_out = H + 2 * ph - KH + 1, W_out = W + 2 * pw - KW + 1;
  const std::size_t fg = F / groups;
  Tensor4<T> y({N, F, H_out, W_out});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < H_out; ++i)
        for (std::size_t j = 0; j < W_out; ++j) {
          double acc = 0.0;
          const std::size_t g = f / fg;
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t a = 0; a < KH; ++a)
              for (std::size_t b = 0; b < KW; ++b) {
                const long hi = static_cast<long>(i + a) - static_cast<long>(ph);
                const long wi = static_cast<long>(j + b) - static_cast<long>(pw);
                if (hi < 0 || wi < 0 || hi >= static_cast<long>(H) || wi >= static_cast<long>(W)) continue;
                acc += static_cast<double>(x(n, g * cg + c, hi, wi)) * static_cast<double>(w(f, c, a, b));
              }
          (void)C;
          y(n, f, i, j) = static_cast<T>(acc);
        }
  return y;
}

// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// numeric from central differences of `loss` around `x` (restored afterwards).
inline double fd_max_rel_error(Tensor4<double>& x, const Tensor4<double>& analytic,
                               const std::function<double()>& loss, double step = 1e-5,
                               double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double lp = loss();
    x[i] = keep - step;
    const double lm = loss();
    x[i] = keep;
    const double numeric = (lp - lm) / (2.0 * step);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
  }
  return worst;
}

inline double weighted_sum(const Tensor4<double>& y, const Tensor4<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

// Random images with labels i % classes; channel count and side configurable.
inline thrifty::ImageDataset synthetic_dataset(std::size_t n, std::size_t classes, std::uint64_t seed,
                                               std::size_t side = 32, std::size_t channels = 3) {
  thrifty::ImageDataset d;
  d.images = random_tensor<float>({n, channels, side, side}, seed, -1.5, 1.5);
  d.class_count = classes;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % classes));
  return d;
}

// Writes `records` CIFAR records with seeded pixels; labels[i] = (label_base + i) % classes.
// With two label bytes the first (coarse) is label / 5 and the second is the label.
inline void write_cifar_file(const std::filesystem::path& path, std::size_t records, std::size_t label_bytes,
                             std::size_t classes, std::uint64_t seed, std::size_t label_base = 0) {
  std::mt19937_64 rng(seed);
  std::vector<char> buf(records * (label_bytes + thrifty::kCifarPixels));
  char* p = buf.data();
  for (std::size_t i = 0; i < records; ++i) {
    const auto label = static_cast<unsigned char>((label_base + i) % classes);
    if (label_bytes == 2) *p++ = static_cast<char>(label / 5);
    *p++ = static_cast<char>(label);
    for (std::size_t k = 0; k < thrifty::kCifarPixels; k += 8) {
      std::uint64_t bits = rng();
      for (std::size_t b = 0; b < 8; ++b, bits >>= 8) *p++ = static_cast<char>(bits & 0xff);
    }
  }
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  std::fwrite(buf.data(), 1, buf.size(), f);
  std::fclose(f);
}

// Full-size synthetic CIFAR-10 directory (5 train batches + test batch).
inline void write_cifar10_dir(const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int b = 1; b <= 5; ++b) {
    write_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), thrifty::kCifarTestCount, 1, 10,
                     seed + b, 10000 * (b - 1));
  }
  write_cifar_file(dir / "test_batch.bin", thrifty::kCifarTestCount, 1, 10, seed + 99);
}

inline void write_cifar100_dir(const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  write_cifar_file(dir / "train.bin", thrifty::kCifarTrainCount, 2, 100, seed);
  write_cifar_file(dir / "test.bin", thrifty::kCifarTestCount, 2, 100, seed + 1);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("thrifty_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
