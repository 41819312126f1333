#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradpath/tensor.hpp"

namespace gradpath {

enum class Mode { train, eval };

enum class LayerKind { conv2d, relu, maxpool2x2, dropout, batchnorm, flatten, dense, softmax_cross_entropy };

std::string_view to_string(LayerKind kind);

/// Trainable tensor together with its accumulated gradient (same shape).
template <typename T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Param(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Non-trainable state that still belongs in a checkpoint (batchnorm running stats).
template <typename T>
struct Buffer {
  std::string name;
  BasicTensor<T>* value;
};

// ---------------------------------------------------------------------------
// Stateless forward primitives. Layers below wrap these and add backward.

/// Cross-correlation with a [cout,cin,3,3] kernel plus per-channel bias.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, std::size_t padding,
                              std::size_t stride = 1);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// 2x2 window maximum, stride 2. `argmax` receives the flat input index of each output.
template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x, std::vector<std::size_t>* argmax = nullptr);

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x);

/// x[b,fin] * W[fin,fout] + bias[fout].
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                             const BasicTensor<T>& bias);

template <typename T>
struct LossValue {
  T loss;
  BasicTensor<T> logits_grad;
};

/// Batch-mean cross entropy of softmax(logits). Gradient is (softmax - onehot) / b.
template <typename T>
LossValue<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                   std::span<const std::int32_t> labels);

// ---------------------------------------------------------------------------

/// One differentiable stage of a network. Owns its weights, gradients, and the
/// forward cache needed by backward(). Not thread-safe.
template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  const std::string& name() const noexcept { return name_; }

  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;

  /// Gradient with respect to the last forward input. Adds weight gradients
  /// into params()[i].grad. Consumes the forward cache.
  virtual BasicTensor<T> backward(const BasicTensor<T>& upstream) = 0;

  virtual std::span<Param<T>> params() { return {}; }
  virtual std::vector<Buffer<T>> buffers() { return {}; }

  /// Output shape for an input of shape `in` (without running anything).
  virtual Shape output_shape(const Shape& in) const = 0;

  /// Human-readable configuration, e.g. "[3x3, 4], padding 1".
  virtual std::string describe() const = 0;

  virtual std::unique_ptr<Layer<T>> clone() const = 0;

  void zero_grad() {
    for (auto& p : params()) p.grad.fill(T{0});
  }

 protected:
  void require_cache(bool present) const;
  void require_upstream(const BasicTensor<T>& upstream, const Shape& expected) const;

 private:
  std::string name_;
};

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t padding,
         std::mt19937_64& rng, std::size_t stride = 1);

  LayerKind kind() const override { return LayerKind::conv2d; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  std::span<Param<T>> params() override { return params_; }
  Shape output_shape(const Shape& in) const override;
  std::string describe() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  const BasicTensor<T>& weights() const { return params_[0].value; }
  const BasicTensor<T>& bias() const { return params_[1].value; }

 private:
  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t padding_;
  std::size_t stride_;
  std::vector<Param<T>> params_;
  std::optional<BasicTensor<T>> input_;
  Shape output_shape_;
};

template <typename T>
class Relu : public Layer<T> {
 public:
  using Layer<T>::Layer;
  LayerKind kind() const override { return LayerKind::relu; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string describe() const override { return "ReLU"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  std::optional<BasicTensor<T>> input_;
};

template <typename T>
class MaxPool2x2 : public Layer<T> {
 public:
  using Layer<T>::Layer;
  LayerKind kind() const override { return LayerKind::maxpool2x2; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  Shape output_shape(const Shape& in) const override;
  std::string describe() const override { return "2x2 max, stride 2"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2x2>(*this); }

 private:
  std::vector<std::size_t> argmax_;
  std::optional<Shape> input_shape_;
  Shape output_shape_;
};

/// Inverted dropout. Each layer owns its engine so masks are reproducible per seed.
template <typename T>
class Dropout : public Layer<T> {
 public:
  Dropout(std::string name, double p, std::uint64_t seed);

  LayerKind kind() const override { return LayerKind::dropout; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string describe() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }

  double rate() const noexcept { return p_; }
  void reseed(std::uint64_t seed) { engine_.seed(seed); }

 private:
  double p_;
  std::mt19937_64 engine_;
  std::vector<T> mask_;  // empty => identity
  std::optional<Shape> shape_;
};

/// Per-channel batch normalization over (b,h,w) for rank-4 input or over b for rank-2.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  static constexpr double kDefaultEps = 1e-5;
  static constexpr double kDefaultMomentum = 0.9;

  BatchNorm(std::string name, std::size_t channels, double eps = kDefaultEps,
            double momentum = kDefaultMomentum);

  LayerKind kind() const override { return LayerKind::batchnorm; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  std::span<Param<T>> params() override { return params_; }
  std::vector<Buffer<T>> buffers() override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string describe() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  BasicTensor<T>& gamma() { return params_[0].value; }
  BasicTensor<T>& beta() { return params_[1].value; }
  const BasicTensor<T>& running_mean() const { return running_mean_; }
  const BasicTensor<T>& running_var() const { return running_var_; }

 private:
  std::size_t channels_;
  double eps_;
  double momentum_;
  std::vector<Param<T>> params_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;

  // forward cache
  std::optional<Shape> shape_;
  Mode cached_mode_ = Mode::train;
  std::vector<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  using Layer<T>::Layer;
  LayerKind kind() const override { return LayerKind::flatten; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  Shape output_shape(const Shape& in) const override;
  std::string describe() const override { return "matrix to vector"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  std::optional<Shape> input_shape_;
};

template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);

  LayerKind kind() const override { return LayerKind::dense; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& upstream) override;
  std::span<Param<T>> params() override { return params_; }
  Shape output_shape(const Shape& in) const override;
  std::string describe() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  std::size_t in_features() const noexcept { return in_features_; }
  std::size_t out_features() const noexcept { return out_features_; }

 private:
  std::size_t in_features_;
  std::size_t out_features_;
  std::vector<Param<T>> params_;
  std::optional<BasicTensor<T>> input_;
};

/// Kaiming-normal tensor, std = sqrt(2 / fan_in). Drawn in double so float and
/// double layers built from the same seed hold the same (rounded) weights.
template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace gradpath
