#include "gradpath/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

namespace gradpath {

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr float kPixelScale = 1.0f / 255.0f;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw FormatError(path.string() + ": truncated IDX header", bytes.size());
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void expect_length(const std::vector<unsigned char>& bytes, std::uint64_t expected,
                   const std::filesystem::path& path) {
  if (bytes.size() < expected) {
    throw FormatError(path.string() + ": truncated, expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) {
    throw FormatError(path.string() + ": " + std::to_string(bytes.size() - expected) +
                          " trailing bytes after declared payload",
                      expected);
  }
}

}  // namespace

Dataset load_mnist(const std::filesystem::path& image_path,
                   const std::filesystem::path& label_path, Split split) {
  const std::vector<unsigned char> img = read_file(image_path);
  const std::vector<unsigned char> lbl = read_file(label_path);

  if (read_be32(img, 0, image_path) != kIdxImagesMagic) {
    throw FormatError(image_path.string() + ": bad IDX image magic", 0);
  }
  const std::uint64_t n = read_be32(img, 4, image_path);
  const std::uint64_t rows = read_be32(img, 8, image_path);
  const std::uint64_t cols = read_be32(img, 12, image_path);
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(image_path.string() + ": zero dimension in IDX header", 4);
  }
  expect_length(img, 16 + n * rows * cols, image_path);

  if (read_be32(lbl, 0, label_path) != kIdxLabelsMagic) {
    throw FormatError(label_path.string() + ": bad IDX label magic", 0);
  }
  const std::uint64_t nl = read_be32(lbl, 4, label_path);
  if (nl != n) {
    throw FormatError(label_path.string() + ": " + std::to_string(nl) + " labels for " +
                          std::to_string(n) + " images",
                      4);
  }
  expect_length(lbl, 8 + n, label_path);

  Dataset d;
  d.kind = DatasetKind::mnist;
  d.class_count = 10;
  d.split = split;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char v = lbl[8 + i];
    if (v >= d.class_count) {
      throw FormatError(label_path.string() + ": label " + std::to_string(v) + " out of range",
                        8 + i);
    }
    d.labels[i] = v;
  }
  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[16 + i] * kPixelScale;
  d.images = Tensor(Shape{n, 1, rows, cols}, std::move(pixels));
  return d;
}

namespace {

// label_offset: index of the label byte used within each record.
void append_cifar_records(const std::filesystem::path& path, std::size_t record_size,
                          std::size_t label_offset, std::size_t class_count,
                          std::vector<std::int32_t>& labels, std::vector<float>& pixels) {
  const std::vector<unsigned char> bytes = read_file(path);
  if (bytes.empty()) throw FormatError(path.string() + ": empty file", 0);
  if (bytes.size() % record_size != 0) {
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of the " + std::to_string(record_size) +
                          "-byte record size",
                      bytes.size() - bytes.size() % record_size);
  }
  const std::size_t n = bytes.size() / record_size;
  const std::size_t pixel_offset = record_size - kCifarPixels;
  labels.reserve(labels.size() + n);
  pixels.reserve(pixels.size() + n * kCifarPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * record_size;
    const unsigned char label = bytes[base + label_offset];
    if (label >= class_count) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " >= " +
                            std::to_string(class_count) + " in record " + std::to_string(r),
                        base + label_offset);
    }
    labels.push_back(label);
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      pixels.push_back(bytes[base + pixel_offset + i] * kPixelScale);
    }
  }
}

Dataset finish_cifar(DatasetKind kind, std::size_t classes, Split split,
                     std::vector<std::int32_t> labels, std::vector<float> pixels) {
  Dataset d;
  d.kind = kind;
  d.class_count = classes;
  d.split = split;
  const std::size_t n = labels.size();
  d.labels = std::move(labels);
  d.images = Tensor(Shape{n, 3, 32, 32}, std::move(pixels));
  return d;
}

}  // namespace

Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths, Split split) {
  if (batch_paths.empty()) throw DataError("load_cifar10: no batch files given");
  std::vector<std::int32_t> labels;
  std::vector<float> pixels;
  for (const auto& p : batch_paths) append_cifar_records(p, 1 + kCifarPixels, 0, 10, labels, pixels);
  return finish_cifar(DatasetKind::cifar10, 10, split, std::move(labels), std::move(pixels));
}

Dataset load_cifar100(const std::filesystem::path& path, Split split) {
  std::vector<std::int32_t> labels;
  std::vector<float> pixels;
  append_cifar_records(path, 2 + kCifarPixels, 1, 100, labels, pixels);
  return finish_cifar(DatasetKind::cifar100, 100, split, std::move(labels), std::move(pixels));
}

std::optional<std::filesystem::path> default_data_dir() {
  if (const char* env = std::getenv("GRADPATH_DATA_DIR"); env && *env) {
    return std::filesystem::path(env);
  }
  return std::nullopt;
}

namespace {

std::filesystem::path require_file(const std::filesystem::path& p) {
  if (!std::filesystem::is_regular_file(p)) throw DataError("missing dataset file " + p.string());
  return p;
}

}  // namespace

Dataset load_dataset(DatasetKind kind, Split split, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  switch (kind) {
    case DatasetKind::mnist: {
      const std::string prefix = split == Split::train ? "train" : "t10k";
      fs::path dir = root / "mnist";
      if (!fs::is_regular_file(dir / (prefix + "-images-idx3-ubyte"))) dir = root;
      return load_mnist(require_file(dir / (prefix + "-images-idx3-ubyte")),
                        require_file(dir / (prefix + "-labels-idx1-ubyte")), split);
    }
    case DatasetKind::cifar10: {
      const fs::path dir = root / "cifar-10-batches-bin";
      std::vector<fs::path> files;
      if (split == Split::train) {
        for (int i = 1; i <= 5; ++i) {
          files.push_back(require_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
        }
      } else {
        files.push_back(require_file(dir / "test_batch.bin"));
      }
      return load_cifar10(files, split);
    }
    case DatasetKind::cifar100: {
      const fs::path dir = root / "cifar-100-binary";
      return load_cifar100(require_file(dir / (split == Split::train ? "train.bin" : "test.bin")),
                           split);
    }
    case DatasetKind::toy:
      return make_toy_dataset(split == Split::train ? 200 : 100, split == Split::train ? 1 : 2);
  }
  throw ParameterError("unknown dataset kind");
}

std::string fetch_instructions(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist:
      return "Place the four uncompressed MNIST IDX files (train-images-idx3-ubyte, "
             "train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) in "
             "<data-dir>/mnist/. They are published at http://yann.lecun.com/exdb/mnist/ "
             "(gunzip after download).";
    case DatasetKind::cifar10:
      return "Download cifar-10-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html "
             "and extract it into <data-dir> (creates cifar-10-batches-bin/).";
    case DatasetKind::cifar100:
      return "Download cifar-100-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html "
             "and extract it into <data-dir> (creates cifar-100-binary/).";
    case DatasetKind::toy:
      return "The toy dataset is generated in-process.";
  }
  return {};
}

Dataset take_first(const Dataset& data, std::size_t n) {
  if (n >= data.size()) return data;
  if (n == 0) throw ParameterError("subset size must be >= 1");
  Dataset d;
  d.kind = data.kind;
  d.class_count = data.class_count;
  d.split = data.split;
  d.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(n));
  d.images = slice_batch(data.images, 0, n);
  return d;
}

Dataset make_toy_dataset(std::size_t n, std::uint64_t seed, double noise) {
  if (n == 0) throw ParameterError("toy dataset size must be >= 1");
  constexpr std::size_t kSide = 8;
  constexpr std::size_t kClasses = 10;
  // blob centres, one per class, spread over the 8x8 grid
  constexpr double centres[kClasses][2] = {{1.5, 1.5}, {1.5, 5.5}, {5.5, 1.5}, {5.5, 5.5},
                                           {3.5, 3.5}, {1.0, 3.5}, {6.0, 3.5}, {3.5, 1.0},
                                           {3.5, 6.0}, {0.5, 0.5}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-noise, noise);

  Dataset d;
  d.kind = DatasetKind::toy;
  d.class_count = kClasses;
  d.split = Split::train;
  d.labels.resize(n);
  std::vector<float> pixels(n * kSide * kSide);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % kClasses;
    d.labels[i] = static_cast<std::int32_t>(label);
    for (std::size_t y = 0; y < kSide; ++y) {
      for (std::size_t x = 0; x < kSide; ++x) {
        const double dy = static_cast<double>(y) - centres[label][0];
        const double dx = static_cast<double>(x) - centres[label][1];
        const double v = std::exp(-(dx * dx + dy * dy) / 2.0) + jitter(rng);
        pixels[(i * kSide + y) * kSide + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  d.images = Tensor(Shape{n, 1, kSide, kSide}, std::move(pixels));
  return d;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle) {
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ParameterError("cannot gather an empty batch");
  std::vector<std::size_t> dims = data.images.shape().dims();
  const std::size_t row = data.images.size() / dims[0];
  dims[0] = indices.size();
  std::vector<float> pixels(indices.size() * row);
  Batch b;
  b.labels.reserve(indices.size());
  const float* src = data.images.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw DimensionError("batch index out of range");
    std::copy_n(src + indices[i] * row, row, pixels.begin() + static_cast<std::ptrdiff_t>(i * row));
    b.labels.push_back(data.labels[indices[i]]);
  }
  b.images = Tensor(Shape(std::move(dims)), std::move(pixels));
  return b;
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                           bool shuffle) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, shuffle)) {
    out.push_back(gather(data, idx));
  }
  return out;
}

}  // namespace gradpath
