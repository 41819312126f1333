#include "gradpath/gradinput.hpp"

#include <string>

namespace gradpath {

namespace {

// Derivative along a strided line of n samples at position i.
template <typename T>
T line_derivative(const T* line, std::size_t stride, std::size_t n, std::size_t i) {
  if (i == 0) return line[stride] - line[0];
  if (i == n - 1) return line[(n - 1) * stride] - line[(n - 2) * stride];
  return (line[(i + 1) * stride] - line[(i - 1) * stride]) / T{2};
}

}  // namespace

template <typename T>
SpatialGradients<T> spatial_gradients(const BasicTensor<T>& image) {
  detail::require_rank(image.shape(), 4, "spatial_gradients");
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (h < 2 || w < 2) {
    throw ShapeError("image gradients need height and width >= 2, got " +
                     image.shape().to_string());
  }
  SpatialGradients<T> g{BasicTensor<T>(image.shape()), BasicTensor<T>(image.shape())};
  const std::size_t planes = image.dim(0) * image.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = image.data().data() + p * h * w;
    T* dx = g.dx.data().data() + p * h * w;
    T* dy = g.dy.data().data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        dx[y * w + x] = line_derivative(in + y * w, 1, w, x);
        dy[y * w + x] = line_derivative(in + x, w, h, y);
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> gradient_transform(const BasicTensor<T>& image,
                                  const GradientCombiner<T>& combine) {
  SpatialGradients<T> g = spatial_gradients(image);
  auto dx = g.dx.data();
  auto dy = g.dy.data();
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = combine(dx[i], dy[i]);
  return std::move(g.dx);
}

template <typename T>
BasicTensor<T> gradient_transform(const BasicTensor<T>& image) {
  SpatialGradients<T> g = spatial_gradients(image);
  return add_elementwise(g.dx, g.dy);
}

template SpatialGradients<float> spatial_gradients(const BasicTensor<float>&);
template SpatialGradients<double> spatial_gradients(const BasicTensor<double>&);
template BasicTensor<float> gradient_transform(const BasicTensor<float>&,
                                               const GradientCombiner<float>&);
template BasicTensor<double> gradient_transform(const BasicTensor<double>&,
                                                const GradientCombiner<double>&);
template BasicTensor<float> gradient_transform(const BasicTensor<float>&);
template BasicTensor<double> gradient_transform(const BasicTensor<double>&);

}  // namespace gradpath
