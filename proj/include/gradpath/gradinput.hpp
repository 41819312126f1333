#pragma once

#include <functional>

#include "gradpath/tensor.hpp"

namespace gradpath {

/// Horizontal (width) and vertical (height) finite differences of an image.
template <typename T>
struct SpatialGradients {
  BasicTensor<T> dx;
  BasicTensor<T> dy;
};

/// Per-channel differences of a [b,c,h,w] image: central (I[i+1]-I[i-1])/2 in
/// the interior, one-sided I[1]-I[0] / I[n-1]-I[n-2] at the borders.
/// Throws ShapeError when h or w is below 2.
template <typename T>
SpatialGradients<T> spatial_gradients(const BasicTensor<T>& image);

/// Per-pixel combination of (dx, dy).
template <typename T>
using GradientCombiner = std::function<T(T dx, T dy)>;

/// Returns a new image with every pixel replaced by combine(dx, dy). The source is untouched.
template <typename T>
BasicTensor<T> gradient_transform(const BasicTensor<T>& image, const GradientCombiner<T>& combine);

/// The gradient image used by the dual-path models: dx + dy per pixel.
template <typename T>
BasicTensor<T> gradient_transform(const BasicTensor<T>& image);

}  // namespace gradpath
