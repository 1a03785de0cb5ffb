#include "thrifty/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace thrifty {

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("missing data file " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void append(CifarRecords& dst, CifarRecords&& src) {
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

}  // namespace

ImageDataset ImageDataset::subset(const std::vector<std::size_t>& indices) const {
  ImageDataset out;
  out.split = split;
  out.class_count = class_count;
  out.flip_augment = flip_augment;
  Shape s = images.shape();
  s.n = indices.size();
  out.images = Tensor4<float>(s);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("subset index out of range");
    std::copy_n(images.ptr() + indices[i] * per, per, out.images.ptr() + i * per);
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

CifarRecords read_cifar_file(const std::filesystem::path& path, std::size_t record_bytes,
                             std::size_t label_offset, std::size_t expected_records) {
  const std::vector<std::uint8_t> bytes = read_all(path);
  const std::size_t expected = record_bytes * expected_records;
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes (" +
                      std::to_string(expected_records) + " records of " + std::to_string(record_bytes) +
                      "), found " + std::to_string(bytes.size()));
  }
  const std::size_t label_bytes = record_bytes - kCifarPixels;
  CifarRecords r;
  r.pixels.resize(expected_records * kCifarPixels);
  r.labels.resize(expected_records);
  for (std::size_t i = 0; i < expected_records; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record_bytes;
    r.labels[i] = rec[label_offset];
    std::memcpy(r.pixels.data() + i * kCifarPixels, rec + label_bytes, kCifarPixels);
  }
  return r;
}

std::array<std::pair<double, double>, 3> standardize(const CifarRecords& train, const CifarRecords& test,
                                                     DatasetPair& out, std::size_t class_count) {
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  std::array<std::pair<double, double>, 3> stats{};
  const std::size_t n_train = train.labels.size();
  for (std::size_t c = 0; c < 3; ++c) {
    // Exact integer moments so a constant channel gets a variance of exactly zero.
    std::uint64_t sum = 0;
    unsigned __int128 sum_sq = 0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const std::uint8_t* p = train.pixels.data() + i * kCifarPixels + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sum_sq += static_cast<std::uint64_t>(p[k]) * p[k];
      }
    }
    const std::uint64_t count = n_train * plane;
    const double mean = count ? static_cast<double>(sum) / static_cast<double>(count) / 255.0 : 0.0;
    const unsigned __int128 num = sum_sq * count - static_cast<unsigned __int128>(sum) * sum;
    double sd = count ? std::sqrt(static_cast<double>(num)) / static_cast<double>(count) / 255.0 : 0.0;
    if (sd == 0.0) sd = 1.0;
    stats[c] = {mean, sd};
  }
  auto build = [&](const CifarRecords& rec, Split split) {
    ImageDataset ds;
    ds.split = split;
    ds.class_count = class_count;
    ds.flip_augment = true;
    const std::size_t n = rec.labels.size();
    ds.images = Tensor4<float>({n, 3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint8_t* p = rec.pixels.data() + i * kCifarPixels + c * plane;
        float* dst = ds.images.ptr() + ds.images.index(i, c, 0, 0);
        const auto [mean, sd] = stats[c];
        for (std::size_t k = 0; k < plane; ++k) dst[k] = static_cast<float>((p[k] / 255.0 - mean) / sd);
      }
      if (rec.labels[i] < 0 || static_cast<std::size_t>(rec.labels[i]) >= class_count) {
        throw DataError("label " + std::to_string(rec.labels[i]) + " outside [0," +
                        std::to_string(class_count) + ")");
      }
    }
    ds.labels = rec.labels;
    return ds;
  };
  out.train = build(train, Split::train);
  out.test = build(test, Split::test);
  return stats;
}

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  CifarRecords train;
  for (int b = 1; b <= 5; ++b) {
    append(train, read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), kCifar10Record, 0,
                                  kCifarTestCount));
  }
  CifarRecords test = read_cifar_file(dir / "test_batch.bin", kCifar10Record, 0, kCifarTestCount);
  DatasetPair out;
  standardize(train, test, out, 10);
  return out;
}

DatasetPair load_cifar100(const std::filesystem::path& dir) {
  CifarRecords train = read_cifar_file(dir / "train.bin", kCifar100Record, 1, kCifarTrainCount);
  CifarRecords test = read_cifar_file(dir / "test.bin", kCifar100Record, 1, kCifarTestCount);
  DatasetPair out;
  standardize(train, test, out, 100);
  return out;
}

ImageDataset load_raw_tensor(const std::filesystem::path& path, Split split, std::size_t class_count) {
  const std::vector<std::uint8_t> bytes = read_all(path);
  constexpr std::size_t header = 5 + 16;
  if (bytes.size() < header || std::memcmp(bytes.data(), "RAWT1", 5) != 0) {
    throw FormatError(path.string() + ": missing RAWT1 header");
  }
  const Shape s{read_u32(bytes, 5), read_u32(bytes, 9), read_u32(bytes, 13), read_u32(bytes, 17)};
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) throw FormatError(path.string() + ": zero dimension");
  const std::uint64_t expected = header + std::uint64_t{s.n} * s.c * s.h * s.w * 4 + s.n;
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  ImageDataset ds;
  ds.split = split;
  ds.flip_augment = false;
  ds.images = Tensor4<float>(s);
  for (std::size_t i = 0; i < s.numel(); ++i) {
    ds.images[i] = std::bit_cast<float>(read_u32(bytes, header + 4 * i));
  }
  const std::size_t label_at = header + 4 * s.numel();
  int max_label = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    ds.labels.push_back(bytes[label_at + i]);
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.class_count = class_count ? class_count : static_cast<std::size_t>(max_label) + 1;
  if (static_cast<std::size_t>(max_label) >= ds.class_count) {
    throw DataError(path.string() + ": label " + std::to_string(max_label) + " outside [0," +
                    std::to_string(ds.class_count) + ")");
  }
  return ds;
}

void save_raw_tensor(const std::filesystem::path& path, const ImageDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("RAWT1", 5);
  const Shape s = ds.images.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) write_u32(out, static_cast<std::uint32_t>(d));
  for (float v : ds.images.data()) write_u32(out, std::bit_cast<std::uint32_t>(v));
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw DataError("raw tensor labels must fit in one byte");
    const char b = static_cast<char>(l);
    out.write(&b, 1);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void apply_crop_flip(Tensor4<float>& images, std::size_t n, const CropFlip& op) {
  const Shape s = images.shape();
  if (op.offset_y > 2 * kCropPad || op.offset_x > 2 * kCropPad) throw ConfigError("crop offset out of range");
  std::vector<float> src(s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    auto plane = images.plane(n, c);
    std::copy(plane.begin(), plane.end(), src.begin());
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        // Position inside the zero-padded image is (y + oy, x + ox); the
        // original pixel lives at (y + oy - pad, x + ox - pad).
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + op.offset_y) - static_cast<std::ptrdiff_t>(kCropPad);
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + op.offset_x) - static_cast<std::ptrdiff_t>(kCropPad);
        float v = 0.0f;
        if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(s.h) && sx < static_cast<std::ptrdiff_t>(s.w)) {
          v = src[static_cast<std::size_t>(sy) * s.w + static_cast<std::size_t>(sx)];
        }
        const std::size_t dx = op.flip ? s.w - 1 - x : x;
        plane[y * s.w + dx] = v;
      }
    }
  }
}

CropFlip draw_crop_flip(std::mt19937_64& rng, bool allow_flip) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kCropPad);
  CropFlip op;
  op.offset_y = offset(rng);
  op.offset_x = offset(rng);
  const bool coin = std::bernoulli_distribution(0.5)(rng);
  op.flip = allow_flip && coin;
  return op;
}

Tensor4<float> augment(const Tensor4<float>& image, std::mt19937_64& rng, bool allow_flip) {
  Tensor4<float> out = image;
  const CropFlip op = draw_crop_flip(rng, allow_flip);
  for (std::size_t n = 0; n < out.n(); ++n) apply_crop_flip(out, n, op);
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit bounded draw so the order does not depend
  // on the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

BatchIterator::BatchIterator(const ImageDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                             bool shuffle, bool augment)
    : dataset_(dataset),
      batch_size_(batch_size),
      augment_(augment && dataset.split == Split::train),
      aug_rng_(mix_seed(seed, 0xa06)) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (shuffle) {
    order_ = epoch_permutation(dataset.size(), seed);
  } else {
    order_.resize(dataset.size());
    std::iota(order_.begin(), order_.end(), 0);
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

Batch BatchIterator::next() {
  if (!has_next()) throw InternalError("BatchIterator exhausted");
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + count));
  cursor_ += count;
  Shape s = dataset_.images.shape();
  s.n = count;
  b.images = Tensor4<float>(s);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(dataset_.images.ptr() + b.indices[i] * per, per, b.images.ptr() + i * per);
    b.labels.push_back(dataset_.labels[b.indices[i]]);
    if (augment_) apply_crop_flip(b.images, i, draw_crop_flip(aug_rng_, dataset_.flip_augment));
  }
  return b;
}

}  // namespace thrifty
