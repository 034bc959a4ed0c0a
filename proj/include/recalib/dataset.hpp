#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "recalib/tensor.hpp"

namespace recalib {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CifarFlavor { C10, C100 };
enum class SplitTag { Train, Test };

constexpr std::size_t kImageBytes = 3 * 32 * 32;

std::size_t record_size(CifarFlavor flavor);
std::size_t flavor_classes(CifarFlavor flavor);
CifarFlavor parse_flavor(const std::string& name);  // "c10" | "c100" (also "cifar10"/"cifar100")

struct LabeledImage {
  std::array<std::uint8_t, kImageBytes> pixels{};  // CHW, R plane first
  std::int32_t label = 0;
  std::uint8_t coarse_label = 0;  // CIFAR-100 only; kept for byte-exact rewrite
};

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

struct DatasetSplit {
  std::vector<LabeledImage> records;
  Normalization norm;
  SplitTag tag = SplitTag::Train;
  std::size_t num_classes = 10;

  std::size_t size() const { return records.size(); }
};

/// Parses one binary file. Length must be a whole number of records.
std::vector<LabeledImage> read_cifar_file(const std::filesystem::path& file, CifarFlavor flavor);

void write_cifar_file(const std::filesystem::path& file, std::span<const LabeledImage> records,
                      CifarFlavor flavor);

/// `path` is one binary file or a directory holding the published file set
/// (data_batch_1..5.bin / test_batch.bin, or train.bin / test.bin), possibly
/// inside the archive's own subdirectory. Train splits get their own
/// normalization; test splits should take the train split's via `norm`.
DatasetSplit load_cifar(const std::filesystem::path& path, CifarFlavor flavor, SplitTag tag);

/// Per-channel mean/std of pixel/255 over every record.
Normalization compute_normalization(std::span<const LabeledImage> records);

/// Crop window offset inside the 4-pixel zero-padded 40x40 image, relative
/// to the centered position: dx, dy in [-4, 4].
struct AugmentParams {
  int dx = 0;
  int dy = 0;
  bool flip = false;
};

AugmentParams sample_augment(std::mt19937_64& rng);
LabeledImage augment(const LabeledImage& img, const AugmentParams& params);
LabeledImage augment(const LabeledImage& img, std::mt19937_64& rng);

/// Class-balanced sample of n records; sorted indices into split.records.
std::vector<std::size_t> subset_indices(const DatasetSplit& split, std::size_t n,
                                        std::uint64_t seed);
DatasetSplit subset(const DatasetSplit& split, std::size_t n, std::uint64_t seed);

/// Linearly separable toy set: per channel, each class code picks the sign
/// of a mean shift and which of three fixed textures are present.
/// Supports up to 16 classes.
DatasetSplit synthetic_dataset(std::size_t n, std::size_t num_classes, std::uint64_t seed,
                               SplitTag tag = SplitTag::Train);

/// Normalized [B,3,32,32] batch of the given records.
template <typename T>
Tensor<T> make_batch(std::span<const LabeledImage* const> images, const Normalization& norm);

template <typename T>
Tensor<T> make_batch(const DatasetSplit& split, std::span<const std::size_t> indices);

std::vector<std::int32_t> batch_labels(const DatasetSplit& split,
                                       std::span<const std::size_t> indices);

}  // namespace recalib
