#pragma once

// Byte-level writers for IDX and CIFAR binary files, used to build loader fixtures.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace gradpath::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gradpath_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)), {});
}

inline std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows,
                                             std::uint32_t cols,
                                             const std::vector<unsigned char>& pixels) {
  std::vector<unsigned char> out;
  put_be32(out, 0x00000803);
  put_be32(out, n);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

inline std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out;
  put_be32(out, 0x00000801);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// pixel value of record r at plane index i; deterministic so tests can check it
inline unsigned char cifar_pixel(std::size_t r, std::size_t i) {
  return static_cast<unsigned char>((r * 31 + i * 7) % 256);
}

// `labels_per_record` is 1 (CIFAR-10) or 2 (CIFAR-100: coarse, fine).
inline std::vector<unsigned char> cifar_records(std::size_t n, std::size_t labels_per_record,
                                                std::size_t classes, std::size_t first = 0) {
  std::vector<unsigned char> out;
  out.reserve(n * (labels_per_record + 3072));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r = first + k;
    if (labels_per_record == 2) out.push_back(static_cast<unsigned char>(r % 20));
    out.push_back(static_cast<unsigned char>(r % classes));
    for (std::size_t i = 0; i < 3072; ++i) out.push_back(cifar_pixel(r, i));
  }
  return out;
}

}  // namespace gradpath::testing
