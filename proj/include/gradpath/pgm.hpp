#pragma once

#include <filesystem>

#include "gradpath/tensor.hpp"

namespace gradpath {

/// Binary PGM (P5, maxval <= 255) as a [1,1,h,w] tensor scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);

/// Value range mapped onto 0..255 by write_pgm_rescaled.
struct PgmRange {
  float min;
  float max;
};

/// Writes a [1,1,h,w] (or [h,w]) tensor as P5, rescaling [min,max] linearly to 0..255.
/// A constant image is written as all zeros.
PgmRange write_pgm_rescaled(const Tensor& image, const std::filesystem::path& path);

}  // namespace gradpath
