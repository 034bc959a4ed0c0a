#include "recalib/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

namespace recalib {

namespace fs = std::filesystem;

std::size_t record_size(CifarFlavor flavor) {
  return flavor == CifarFlavor::C10 ? kImageBytes + 1 : kImageBytes + 2;
}

std::size_t flavor_classes(CifarFlavor flavor) { return flavor == CifarFlavor::C10 ? 10 : 100; }

CifarFlavor parse_flavor(const std::string& name) {
  if (name == "c10" || name == "cifar10") return CifarFlavor::C10;
  if (name == "c100" || name == "cifar100") return CifarFlavor::C100;
  throw DatasetError("unknown dataset flavor '" + name + "' (expected c10 or c100)");
}

std::vector<LabeledImage> read_cifar_file(const fs::path& file, CifarFlavor flavor) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t rs = record_size(flavor);
  if (bytes.empty()) throw DatasetError(file.string() + ": empty file");
  if (bytes.size() % rs != 0) {
    const std::size_t whole = bytes.size() / rs;
    throw DatasetError(file.string() + ": length " + std::to_string(bytes.size()) +
                       " is not a multiple of the " + std::to_string(rs) +
                       "-byte record size; partial record " + std::to_string(whole) +
                       " starts at offset " + std::to_string(whole * rs) + " with " +
                       std::to_string(bytes.size() - whole * rs) + " bytes");
  }
  const std::size_t n = bytes.size() / rs;
  const std::size_t classes = flavor_classes(flavor);
  std::vector<LabeledImage> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data() + i * rs);
    LabeledImage& img = out[i];
    std::size_t label_byte = 0;
    if (flavor == CifarFlavor::C100) {
      img.coarse_label = rec[0];
      label_byte = 1;
    }
    img.label = rec[label_byte];
    if (static_cast<std::size_t>(img.label) >= classes) {
      throw DatasetError(file.string() + ": record " + std::to_string(i) + " at offset " +
                         std::to_string(i * rs + label_byte) + " has label " +
                         std::to_string(img.label) + " >= " + std::to_string(classes));
    }
    std::copy_n(rec + label_byte + 1, kImageBytes, img.pixels.begin());
  }
  return out;
}

void write_cifar_file(const fs::path& file, std::span<const LabeledImage> records,
                      CifarFlavor flavor) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + file.string());
  const std::size_t classes = flavor_classes(flavor);
  for (const LabeledImage& img : records) {
    if (img.label < 0 || static_cast<std::size_t>(img.label) >= classes) {
      throw DatasetError("label " + std::to_string(img.label) + " out of range for " +
                         std::to_string(classes) + " classes");
    }
    if (flavor == CifarFlavor::C100) out.put(static_cast<char>(img.coarse_label));
    out.put(static_cast<char>(img.label));
    out.write(reinterpret_cast<const char*>(img.pixels.data()), kImageBytes);
  }
  if (!out) throw DatasetError("write failed: " + file.string());
}

namespace {

std::vector<fs::path> split_files(const fs::path& dir, CifarFlavor flavor, SplitTag tag) {
  std::vector<std::string> names;
  if (flavor == CifarFlavor::C10) {
    if (tag == SplitTag::Train) {
      for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
      names.push_back("test_batch.bin");
    }
  } else {
    names.push_back(tag == SplitTag::Train ? "train.bin" : "test.bin");
  }
  const char* sub = flavor == CifarFlavor::C10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  for (const fs::path& base : {dir, dir / sub}) {
    std::vector<fs::path> found;
    for (const auto& n : names) {
      if (fs::is_regular_file(base / n)) found.push_back(base / n);
    }
    if (found.size() == names.size()) return found;
  }
  std::string list;
  for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
  throw DatasetError("dataset directory " + dir.string() + " lacks " + list);
}

}  // namespace

DatasetSplit load_cifar(const fs::path& path, CifarFlavor flavor, SplitTag tag) {
  DatasetSplit split;
  split.tag = tag;
  split.num_classes = flavor_classes(flavor);
  if (fs::is_directory(path)) {
    for (const auto& f : split_files(path, flavor, tag)) {
      auto recs = read_cifar_file(f, flavor);
      split.records.insert(split.records.end(), recs.begin(), recs.end());
    }
  } else if (fs::is_regular_file(path)) {
    split.records = read_cifar_file(path, flavor);
  } else {
    throw DatasetError("dataset path not found: " + path.string());
  }
  split.norm = compute_normalization(split.records);
  return split;
}

Normalization compute_normalization(std::span<const LabeledImage> records) {
  Normalization norm;
  if (records.empty()) return norm;
  constexpr std::size_t plane = 32 * 32;
  for (std::size_t c = 0; c < 3; ++c) {
    std::uint64_t s = 0, s2 = 0;
    for (const auto& img : records) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::uint64_t v = img.pixels[c * plane + i];
        s += v;
        s2 += v * v;
      }
    }
    const double n = static_cast<double>(records.size() * plane);
    const double mean = static_cast<double>(s) / n;
    const double var = std::max(static_cast<double>(s2) / n - mean * mean, 0.0);
    norm.mean[c] = mean / 255.0;
    norm.std[c] = std::max(std::sqrt(var) / 255.0, 1e-6);
  }
  return norm;
}

AugmentParams sample_augment(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> off(-4, 4);
  std::uniform_int_distribution<int> coin(0, 1);
  AugmentParams p;
  p.dx = off(rng);
  p.dy = off(rng);
  p.flip = coin(rng) == 1;
  return p;
}

LabeledImage augment(const LabeledImage& img, const AugmentParams& p) {
  if (p.dx < -4 || p.dx > 4 || p.dy < -4 || p.dy > 4) {
    throw DatasetError("augment offsets must lie in [-4, 4]");
  }
  LabeledImage out = img;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::uint8_t* src = img.pixels.data() + c * 1024;
    std::uint8_t* dst = out.pixels.data() + c * 1024;
    for (int y = 0; y < 32; ++y) {
      const int sy = y + p.dy;
      for (int x = 0; x < 32; ++x) {
        const int ox = p.flip ? 31 - x : x;
        const int sx = ox + p.dx;
        const bool inside = sy >= 0 && sy < 32 && sx >= 0 && sx < 32;
        dst[y * 32 + x] = inside ? src[sy * 32 + sx] : 0;
      }
    }
  }
  return out;
}

LabeledImage augment(const LabeledImage& img, std::mt19937_64& rng) {
  return augment(img, sample_augment(rng));
}

std::vector<std::size_t> subset_indices(const DatasetSplit& split, std::size_t n,
                                        std::uint64_t seed) {
  if (n > split.size()) {
    throw DatasetError("subset of " + std::to_string(n) + " requested from " +
                       std::to_string(split.size()) + " records");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(split.num_classes);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto label = static_cast<std::size_t>(split.records[i].label);
    if (label >= split.num_classes) throw DatasetError("record label exceeds class count");
    by_class[label].push_back(i);
  }
  for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);
  std::vector<std::size_t> order(split.num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> picked;
  picked.reserve(n);
  std::vector<std::size_t> cursor(split.num_classes, 0);
  while (picked.size() < n) {
    for (std::size_t k : order) {
      if (picked.size() == n) break;
      if (cursor[k] < by_class[k].size()) picked.push_back(by_class[k][cursor[k]++]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

DatasetSplit subset(const DatasetSplit& split, std::size_t n, std::uint64_t seed) {
  DatasetSplit out;
  out.tag = split.tag;
  out.num_classes = split.num_classes;
  out.norm = split.norm;
  for (std::size_t i : subset_indices(split, n, seed)) out.records.push_back(split.records[i]);
  if (out.tag == SplitTag::Train) out.norm = compute_normalization(out.records);
  return out;
}

DatasetSplit synthetic_dataset(std::size_t n, std::size_t num_classes, std::uint64_t seed,
                               SplitTag tag) {
  if (num_classes < 2 || num_classes > 16) {
    throw DatasetError("synthetic dataset supports 2..16 classes");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(-20, 20);
  DatasetSplit split;
  split.tag = tag;
  split.num_classes = num_classes;
  split.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage& img = split.records[i];
    const std::size_t k = i % num_classes;
    img.label = static_cast<std::int32_t>(k);
    for (std::size_t c = 0; c < 3; ++c) {
      // Code bits are rows of a 16x16 Sylvester-Hadamard matrix. Per channel,
      // bit 0 is the sign of a mean shift; bits 1..3 switch on row stripes,
      // column stripes and a checkerboard.
      int bit[4];
      for (std::size_t q = 0; q < 4; ++q) {
        bit[q] = std::popcount((k + 1) & (c * 4 + q)) % 2 ? -1 : 1;
      }
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
          const int pattern[4] = {1, y % 2 ? 1 : -1, x % 2 ? 1 : -1, (x + y) % 2 ? 1 : -1};
          int v = 128 + 35 * bit[0] + noise(rng);
          for (std::size_t q = 1; q < 4; ++q) v += bit[q] > 0 ? 22 * pattern[q] : 0;
          img.pixels[c * 1024 + y * 32 + x] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }
  }
  split.norm = compute_normalization(split.records);
  return split;
}

template <typename T>
Tensor<T> make_batch(std::span<const LabeledImage* const> images, const Normalization& norm) {
  if (images.empty()) throw DatasetError("empty batch");
  Tensor<T> out({images.size(), 3, 32, 32});
  T* dst = out.data();
  for (const LabeledImage* img : images) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double scale = 1.0 / (255.0 * norm.std[c]);
      const double shift = norm.mean[c] / norm.std[c];
      for (std::size_t i = 0; i < 1024; ++i) {
        *dst++ = static_cast<T>(img->pixels[c * 1024 + i] * scale - shift);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> make_batch(const DatasetSplit& split, std::span<const std::size_t> indices) {
  std::vector<const LabeledImage*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&split.records.at(i));
  return make_batch<T>(std::span<const LabeledImage* const>(ptrs), split.norm);
}

std::vector<std::int32_t> batch_labels(const DatasetSplit& split,
                                       std::span<const std::size_t> indices) {
  std::vector<std::int32_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(split.records.at(i).label);
  return out;
}

template Tensor<float> make_batch<float>(std::span<const LabeledImage* const>,
                                         const Normalization&);
template Tensor<double> make_batch<double>(std::span<const LabeledImage* const>,
                                           const Normalization&);
template Tensor<float> make_batch<float>(const DatasetSplit&, std::span<const std::size_t>);
template Tensor<double> make_batch<double>(const DatasetSplit&, std::span<const std::size_t>);

}  // namespace recalib
