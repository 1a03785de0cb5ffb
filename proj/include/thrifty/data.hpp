#pragma once

// CIFAR-10/100 binary ingestion, raw tensor import, standard augmentation and
// seeded batch iteration.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "thrifty/tensor.hpp"

namespace thrifty {

enum class Split { train, test };

struct ImageDataset {
  Tensor4<float> images;  // (N, C, H, W)
  std::vector<int> labels;
  Split split = Split::train;
  std::size_t class_count = 10;
  bool flip_augment = true;  // horizontal flips are a CIFAR-only augmentation

  std::size_t size() const { return labels.size(); }
  // Copy of the listed samples, same split and class count.
  ImageDataset subset(const std::vector<std::size_t>& indices) const;
};

struct DatasetPair {
  ImageDataset train;
  ImageDataset test;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifar10Record = 1 + kCifarPixels;
inline constexpr std::size_t kCifar100Record = 2 + kCifarPixels;
inline constexpr std::size_t kCifarTrainCount = 50000;
inline constexpr std::size_t kCifarTestCount = 10000;

// Pixel (c, h, w) of a record sits at byte label_bytes + c*1024 + h*32 + w.
// `label_offset` selects which label byte is used (CIFAR-100: 1 = fine label).
struct CifarRecords {
  std::vector<std::uint8_t> pixels;  // N * 3072, record order
  std::vector<int> labels;
};

CifarRecords read_cifar_file(const std::filesystem::path& path, std::size_t record_bytes,
                             std::size_t label_offset, std::size_t expected_records);

// data_batch_1..5.bin + test_batch.bin, 10000 records each.
DatasetPair load_cifar10(const std::filesystem::path& dir);
// train.bin (50000 records) + test.bin (10000 records), fine labels.
DatasetPair load_cifar100(const std::filesystem::path& dir);

// Scales bytes by 1/255 and standardizes each channel with the train split's
// population mean/std; returns the (mean, std) pairs used.
std::array<std::pair<double, double>, 3> standardize(const CifarRecords& train, const CifarRecords& test,
                                                     DatasetPair& out, std::size_t class_count);

// "RAWT1" magic, u32 N, C, H, W (little-endian), N*C*H*W f32 payload, N u8 labels.
ImageDataset load_raw_tensor(const std::filesystem::path& path, Split split, std::size_t class_count = 0);
void save_raw_tensor(const std::filesystem::path& path, const ImageDataset& dataset);

struct CropFlip {
  std::size_t offset_y = 4;  // top-left of the crop inside the padded image
  std::size_t offset_x = 4;
  bool flip = false;
};

inline constexpr std::size_t kCropPad = 4;

// Zero-pads 4 pixels per side, crops back to the original size at the given
// offset, then mirrors horizontally if requested. Operates on sample n in place.
void apply_crop_flip(Tensor4<float>& images, std::size_t n, const CropFlip& op);

CropFlip draw_crop_flip(std::mt19937_64& rng, bool allow_flip);

// Draws a crop/flip and applies it to a (1, C, H, W) image.
Tensor4<float> augment(const Tensor4<float>& image, std::mt19937_64& rng, bool allow_flip = true);

struct Batch {
  Tensor4<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// One pass over the dataset. With shuffle, order is a permutation drawn from
// `seed`; train-split samples are augmented with a generator derived from the
// same seed. The final partial batch is included.
class BatchIterator {
 public:
  BatchIterator(const ImageDataset& dataset, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                bool augment);

  bool has_next() const { return cursor_ < order_.size(); }
  Batch next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const ImageDataset& dataset_;
  std::size_t batch_size_;
  bool augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 aug_rng_;
};

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed);

// Deterministic seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace thrifty
