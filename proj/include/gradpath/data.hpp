#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gradpath/models.hpp"
#include "gradpath/tensor.hpp"

namespace gradpath {

enum class Split { train, test };

std::string_view to_string(Split split);

/// Labeled images, pixels scaled to [0,1]. Immutable after loading.
struct Dataset {
  Tensor images;  // [n,c,h,w]
  std::vector<std::int32_t> labels;
  DatasetKind kind = DatasetKind::toy;
  std::size_t class_count = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Batch {
  Tensor images;
  std::vector<std::int32_t> labels;
};

/// IDX pair (images magic 0x803, labels magic 0x801, big-endian headers).
Dataset load_mnist(const std::filesystem::path& image_path,
                   const std::filesystem::path& label_path, Split split);

/// 3073-byte records: label then R, G, B planes of 32x32.
Dataset load_cifar10(std::span<const std::filesystem::path> batch_paths, Split split);

/// 3074-byte records: coarse label, fine label, pixels. Fine labels are used.
Dataset load_cifar100(const std::filesystem::path& path, Split split);

/// Root directory from GRADPATH_DATA_DIR, if set.
std::optional<std::filesystem::path> default_data_dir();

/// Loads a split from the conventional layout under `root`:
///   mnist:    root/[mnist/]{train,t10k}-{images-idx3,labels-idx1}-ubyte
///   cifar10:  root/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
///   cifar100: root/cifar-100-binary/{train,test}.bin
/// Throws DataError naming the missing file.
Dataset load_dataset(DatasetKind kind, Split split, const std::filesystem::path& root);

/// Download hints printed by the CLI when files are missing.
std::string fetch_instructions(DatasetKind kind);

/// First `n` samples (all when n >= size).
Dataset take_first(const Dataset& data, std::size_t n);

/// Seeded 8x8 single-channel blobs, 10 classes, labels cycling 0..9.
Dataset make_toy_dataset(std::size_t n, std::uint64_t seed, double noise = 0.1);

/// Index lists per batch. shuffle=true uses a permutation drawn from `seed`.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle);

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

/// Materialized batches covering every sample exactly once.
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                           bool shuffle);

}  // namespace gradpath
