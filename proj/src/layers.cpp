#include "gradpath/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gradpath {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::dropout: return "dropout";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kKernel = 3;

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, oh, ow;
};

std::size_t conv_out_extent(std::size_t in, std::size_t padding, std::size_t stride) {
  if (stride == 0) throw ParameterError("conv2d stride must be >= 1");
  const std::size_t padded = in + 2 * padding;
  if (padded < kKernel) {
    throw ShapeError("conv2d kernel 3 does not fit padded extent " + std::to_string(padded));
  }
  if ((padded - kKernel) % stride != 0) {
    throw ShapeError("conv2d output size is not integral for extent " + std::to_string(in) +
                     ", padding " + std::to_string(padding) + ", stride " +
                     std::to_string(stride));
  }
  return (padded - kKernel) / stride + 1;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& weights, std::size_t padding,
                           std::size_t stride) {
  detail::require_rank(x, 4, "conv2d input");
  detail::require_rank(weights, 4, "conv2d weights");
  if (weights[2] != kKernel || weights[3] != kKernel) {
    throw DimensionError("conv2d supports 3x3 kernels only, got " + weights.to_string());
  }
  if (weights[1] != x[1]) {
    throw DimensionError("conv2d channel mismatch: input " + x.to_string() + ", weights " +
                         weights.to_string());
  }
  return {x[0], x[1], x[2], x[3], weights[0], conv_out_extent(x[2], padding, stride),
          conv_out_extent(x[3], padding, stride)};
}

// cols[k, p] with k = (ci*3 + ky)*3 + kx and p = oy*ow + ox; zero where the
// window reaches into padding.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, std::size_t padding, std::size_t stride,
            T* cols) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        T* row = cols + ((ci * kKernel + ky) * kKernel + kx) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? plane[iy * g.w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t padding, std::size_t stride,
                T* img) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const T* row = cols + ((ci * kKernel + ky) * kKernel + kx) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            plane[iy * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Primitives

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, std::size_t padding,
                              std::size_t stride) {
  const ConvGeometry g = conv_geometry(x.shape(), weights.shape(), padding, stride);
  if (bias.shape() != Shape{g.cout}) {
    throw DimensionError("conv2d bias must be [" + std::to_string(g.cout) + "], got " +
                         bias.shape().to_string());
  }
  const std::size_t K = g.cin * kKernel * kKernel;
  const std::size_t P = g.oh * g.ow;
  BasicTensor<T> out(Shape{g.batch, g.cout, g.oh, g.ow});
  std::vector<T> cols(K * P);
  const T* W = weights.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.data().data() + n * g.cin * g.h * g.w, g, padding, stride, cols.data());
    T* o = out.data().data() + n * g.cout * P;
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* orow = o + co * P;
      std::fill(orow, orow + P, bias[co]);
      for (std::size_t k = 0; k < K; ++k) {
        const T wv = W[co * K + k];
        const T* crow = cols.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x, std::vector<std::size_t>* argmax) {
  detail::require_rank(x.shape(), 4, "maxpool2x2");
  const std::size_t nb = x.dim(0), nc = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2 needs even height and width, got " + x.shape().to_string());
  }
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> out(Shape{nb, nc, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  const T* in = x.data().data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < nb * nc; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        // row-major scan of the window; strict '>' keeps the first maximum on ties
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out[o] = in[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
  const std::size_t b = x.dim(0);
  return x.reshaped(Shape{b, x.size() / b});
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                             const BasicTensor<T>& bias) {
  detail::require_rank(x.shape(), 2, "dense input");
  detail::require_rank(weights.shape(), 2, "dense weights");
  if (x.dim(1) != weights.dim(0)) {
    throw DimensionError("dense input width " + std::to_string(x.dim(1)) +
                         " does not match weights " + weights.shape().to_string());
  }
  if (bias.shape() != Shape{weights.dim(1)}) {
    throw DimensionError("dense bias shape " + bias.shape().to_string() + " does not match " +
                         weights.shape().to_string());
  }
  BasicTensor<T> out = matmul(x, weights);
  const std::size_t fout = weights.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < fout; ++j) out[i * fout + j] += bias[j];
  return out;
}

template <typename T>
LossValue<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                   std::span<const std::int32_t> labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  }
  LossValue<T> result{T{0}, BasicTensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const std::int32_t label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("label " + std::to_string(label) + " outside [0," + std::to_string(k) +
                      ") at batch row " + std::to_string(i));
    }
    const T* row = logits.data().data() + i * k;
    T* grow = result.logits_grad.data().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    total += log_denom - static_cast<double>(row[label] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double prob = std::exp(static_cast<double>(row[j] - mx) - log_denom);
      grow[j] = static_cast<T>((prob - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0)) /
                               static_cast<double>(b));
    }
  }
  result.loss = static_cast<T>(total / static_cast<double>(b));
  return result;
}

template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// ---------------------------------------------------------------------------
// Layer base

template <typename T>
void Layer<T>::require_cache(bool present) const {
  if (!present) {
    throw StateError("layer '" + name_ + "': backward() without a preceding forward()");
  }
}

template <typename T>
void Layer<T>::require_upstream(const BasicTensor<T>& upstream, const Shape& expected) const {
  if (upstream.shape() != expected) {
    throw DimensionError("layer '" + name_ + "': upstream gradient " +
                         upstream.shape().to_string() + " does not match output " +
                         expected.to_string());
  }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                  std::size_t padding, std::mt19937_64& rng, std::size_t stride)
    : Layer<T>(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      padding_(padding),
      stride_(stride) {
  if (stride_ == 0) throw ParameterError("conv2d stride must be >= 1");
  params_.emplace_back("weight",
                       kaiming_normal<T>(Shape{out_channels, in_channels, kKernel, kKernel},
                                         in_channels * kKernel * kKernel, rng));
  params_.emplace_back("bias", BasicTensor<T>(Shape{out_channels}));
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = conv2d_forward(x, params_[0].value, params_[1].value, padding_, stride_);
  input_ = x;
  output_shape_ = out.shape();
  return out;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(input_.has_value());
  this->require_upstream(upstream, output_shape_);
  const BasicTensor<T>& x = *input_;
  const ConvGeometry g = conv_geometry(x.shape(), params_[0].value.shape(), padding_, stride_);
  const std::size_t K = g.cin * kKernel * kKernel;
  const std::size_t P = g.oh * g.ow;

  BasicTensor<T> dx(x.shape());
  std::vector<T> cols(K * P);
  std::vector<T> dcols(K * P);
  const T* W = params_[0].value.data().data();
  T* dW = params_[0].grad.data().data();
  T* db = params_[1].grad.data().data();

  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dout = upstream.data().data() + n * g.cout * P;
    im2col(x.data().data() + n * g.cin * g.h * g.w, g, padding_, stride_, cols.data());
    std::fill(dcols.begin(), dcols.end(), T{0});
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* drow = dout + co * P;
      T bsum{0};
      for (std::size_t p = 0; p < P; ++p) bsum += drow[p];
      db[co] += bsum;
      for (std::size_t k = 0; k < K; ++k) {
        const T* crow = cols.data() + k * P;
        T acc{0};
        for (std::size_t p = 0; p < P; ++p) acc += drow[p] * crow[p];
        dW[co * K + k] += acc;
        const T wv = W[co * K + k];
        T* dcrow = dcols.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) dcrow[p] += wv * drow[p];
      }
    }
    col2im_add(dcols.data(), g, padding_, stride_, dx.data().data() + n * g.cin * g.h * g.w);
  }
  input_.reset();
  return dx;
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  const ConvGeometry g = conv_geometry(in, params_[0].value.shape(), padding_, stride_);
  return Shape{g.batch, g.cout, g.oh, g.ow};
}

template <typename T>
std::string Conv2d<T>::describe() const {
  return "[3x3, " + std::to_string(out_channels_) + "], padding " + std::to_string(padding_);
}

// ---------------------------------------------------------------------------
// Relu

template <typename T>
BasicTensor<T> Relu<T>::forward(const BasicTensor<T>& x, Mode) {
  input_ = x;
  return relu(x);
}

template <typename T>
BasicTensor<T> Relu<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(input_.has_value());
  this->require_upstream(upstream, input_->shape());
  BasicTensor<T> dx = upstream;
  auto in = input_->data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(in[i] > T{0})) d[i] = T{0};
  }
  input_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2x2

template <typename T>
BasicTensor<T> MaxPool2x2<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = maxpool2x2(x, &argmax_);
  input_shape_ = x.shape();
  output_shape_ = out.shape();
  return out;
}

template <typename T>
BasicTensor<T> MaxPool2x2<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(input_shape_.has_value());
  this->require_upstream(upstream, output_shape_);
  BasicTensor<T> dx(*input_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += upstream[o];
  input_shape_.reset();
  return dx;
}

template <typename T>
Shape MaxPool2x2<T>::output_shape(const Shape& in) const {
  detail::require_rank(in, 4, "maxpool2x2");
  if (in[2] % 2 != 0 || in[3] % 2 != 0) {
    throw ShapeError("maxpool2x2 needs even height and width, got " + in.to_string());
  }
  return Shape{in[0], in[1], in[2] / 2, in[3] / 2};
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
Dropout<T>::Dropout(std::string name, double p, std::uint64_t seed)
    : Layer<T>(std::move(name)), p_(p), engine_(seed) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must be in [0,1), got " + std::to_string(p));
  }
}

template <typename T>
BasicTensor<T> Dropout<T>::forward(const BasicTensor<T>& x, Mode mode) {
  shape_ = x.shape();
  mask_.clear();
  if (mode == Mode::eval || p_ == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  mask_.resize(x.size());
  BasicTensor<T> out = x;
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    mask_[i] = uniform(engine_) < p_ ? T{0} : keep_scale;
    o[i] *= mask_[i];
  }
  return out;
}

template <typename T>
BasicTensor<T> Dropout<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(shape_.has_value());
  this->require_upstream(upstream, *shape_);
  shape_.reset();
  if (mask_.empty()) return upstream;
  BasicTensor<T> dx = upstream;
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= mask_[i];
  return dx;
}

template <typename T>
std::string Dropout<T>::describe() const {
  std::string s = std::to_string(p_);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return s;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, double eps, double momentum)
    : Layer<T>(std::move(name)),
      channels_(channels),
      eps_(eps),
      momentum_(momentum),
      running_mean_(Shape{channels}, T{0}),
      running_var_(Shape{channels}, T{1}) {
  if (!(eps > 0.0)) throw ParameterError("batchnorm eps must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ParameterError("batchnorm momentum must be in [0,1)");
  }
  params_.emplace_back("gamma", BasicTensor<T>(Shape{channels}, T{1}));
  params_.emplace_back("beta", BasicTensor<T>(Shape{channels}, T{0}));
}

namespace {

// (outer, channels, inner) view: rank 4 -> (b, c, h*w), rank 2 -> (b, f, 1).
struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const Shape& s, std::size_t channels, const std::string& name) {
  if (s.rank() != 4 && s.rank() != 2) {
    throw DimensionError("batchnorm '" + name + "' expects rank 2 or 4, got " + s.to_string());
  }
  if (s[1] != channels) {
    throw DimensionError("batchnorm '" + name + "' has " + std::to_string(channels) +
                         " channels, input is " + s.to_string());
  }
  return {s[0], s[1], s.rank() == 4 ? s[2] * s[3] : 1};
}

}  // namespace

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const ChannelLayout L = channel_layout(x.shape(), channels_, this->name());
  if (mode == Mode::train && L.outer < 2) {
    throw ParameterError("batchnorm '" + this->name() + "' needs batch size >= 2 in train mode");
  }
  const std::size_t count = L.outer * L.inner;
  const T* in = x.data().data();
  const T* gamma = params_[0].value.data().data();
  const T* beta = params_[1].value.data().data();

  BasicTensor<T> out(x.shape());
  T* o = out.data().data();
  xhat_.assign(x.size(), T{0});
  inv_std_.assign(channels_, T{0});

  for (std::size_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < L.outer; ++n)
        for (std::size_t i = 0; i < L.inner; ++i) sum += in[(n * channels_ + c) * L.inner + i];
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < L.outer; ++n)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double d = in[(n * channels_ + c) * L.inner + i] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);  // biased
      running_mean_[c] = static_cast<T>(momentum_ * running_mean_[c] + (1.0 - momentum_) * mean);
      running_var_[c] = static_cast<T>(momentum_ * running_var_[c] + (1.0 - momentum_) * var);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + eps_));
    const T m = static_cast<T>(mean);
    inv_std_[c] = inv_std;
    for (std::size_t n = 0; n < L.outer; ++n) {
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (n * channels_ + c) * L.inner + i;
        const T xh = (in[idx] - m) * inv_std;
        xhat_[idx] = xh;
        o[idx] = gamma[c] * xh + beta[c];
      }
    }
  }
  shape_ = x.shape();
  cached_mode_ = mode;
  return out;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(shape_.has_value());
  this->require_upstream(upstream, *shape_);
  const ChannelLayout L = channel_layout(*shape_, channels_, this->name());
  const double count = static_cast<double>(L.outer * L.inner);
  const T* dy = upstream.data().data();
  const T* gamma = params_[0].value.data().data();
  T* dgamma = params_[0].grad.data().data();
  T* dbeta = params_[1].grad.data().data();

  BasicTensor<T> dx(*shape_);
  T* d = dx.data().data();
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < L.outer; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (n * channels_ + c) * L.inner + i;
        sum_dy += dy[idx];
        sum_dy_xhat += static_cast<double>(dy[idx]) * xhat_[idx];
      }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);

    const double g = gamma[c];
    const double inv_std = inv_std_[c];
    for (std::size_t n = 0; n < L.outer; ++n)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (n * channels_ + c) * L.inner + i;
        if (cached_mode_ == Mode::train) {
          d[idx] = static_cast<T>(g * inv_std / count *
                                  (count * dy[idx] - sum_dy - xhat_[idx] * sum_dy_xhat));
        } else {
          d[idx] = static_cast<T>(g * inv_std * dy[idx]);
        }
      }
  }
  shape_.reset();
  return dx;
}

template <typename T>
std::vector<Buffer<T>> BatchNorm<T>::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

template <typename T>
std::string BatchNorm<T>::describe() const {
  return "normalize per channel (" + std::to_string(channels_) + ")";
}

// ---------------------------------------------------------------------------
// Flatten

template <typename T>
BasicTensor<T> Flatten<T>::forward(const BasicTensor<T>& x, Mode) {
  input_shape_ = x.shape();
  return flatten(x);
}

template <typename T>
BasicTensor<T> Flatten<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(input_shape_.has_value());
  this->require_upstream(upstream, output_shape(*input_shape_));
  BasicTensor<T> dx = upstream.reshaped(*input_shape_);
  input_shape_.reset();
  return dx;
}

template <typename T>
Shape Flatten<T>::output_shape(const Shape& in) const {
  return Shape{in[0], in.numel() / in[0]};
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::string name, std::size_t in_features, std::size_t out_features,
                std::mt19937_64& rng)
    : Layer<T>(std::move(name)), in_features_(in_features), out_features_(out_features) {
  params_.emplace_back("weight",
                       kaiming_normal<T>(Shape{in_features, out_features}, in_features, rng));
  params_.emplace_back("bias", BasicTensor<T>(Shape{out_features}));
}

template <typename T>
BasicTensor<T> Dense<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = dense_forward(x, params_[0].value, params_[1].value);
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> Dense<T>::backward(const BasicTensor<T>& upstream) {
  this->require_cache(input_.has_value());
  const BasicTensor<T>& x = *input_;
  const std::size_t b = x.dim(0);
  this->require_upstream(upstream, Shape{b, out_features_});

  const T* X = x.data().data();
  const T* dY = upstream.data().data();
  const T* W = params_[0].value.data().data();
  T* dW = params_[0].grad.data().data();
  T* db = params_[1].grad.data().data();

  // dW += X^T dY ; db += column sums of dY ; dX = dY W^T
  BasicTensor<T> dx(x.shape());
  T* dX = dx.data().data();
  for (std::size_t n = 0; n < b; ++n) {
    const T* xrow = X + n * in_features_;
    const T* drow = dY + n * out_features_;
    for (std::size_t j = 0; j < out_features_; ++j) db[j] += drow[j];
    for (std::size_t i = 0; i < in_features_; ++i) {
      const T xv = xrow[i];
      T* dwrow = dW + i * out_features_;
      const T* wrow = W + i * out_features_;
      T acc{0};
      for (std::size_t j = 0; j < out_features_; ++j) {
        dwrow[j] += xv * drow[j];
        acc += wrow[j] * drow[j];
      }
      dX[n * in_features_ + i] = acc;
    }
  }
  input_.reset();
  return dx;
}

template <typename T>
Shape Dense<T>::output_shape(const Shape& in) const {
  detail::require_rank(in, 2, "dense input");
  if (in[1] != in_features_) {
    throw DimensionError("dense '" + this->name() + "' expects width " +
                         std::to_string(in_features_) + ", got " + in.to_string());
  }
  return Shape{in[0], out_features_};
}

template <typename T>
std::string Dense<T>::describe() const {
  return std::to_string(in_features_) + " -> " + std::to_string(out_features_);
}

// ---------------------------------------------------------------------------

#define GRADPATH_INSTANTIATE(T)                                                              \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                         const BasicTensor<T>&, std::size_t, std::size_t);   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> maxpool2x2(const BasicTensor<T>&, std::vector<std::size_t>*);      \
  template BasicTensor<T> flatten(const BasicTensor<T>&);                                    \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                        const BasicTensor<T>&);                              \
  template LossValue<T> softmax_cross_entropy(const BasicTensor<T>&,                         \
                                              std::span<const std::int32_t>);                \
  template BasicTensor<T> kaiming_normal(Shape, std::size_t, std::mt19937_64&);              \
  template class Layer<T>;                                                                   \
  template class Conv2d<T>;                                                                  \
  template class Relu<T>;                                                                    \
  template class MaxPool2x2<T>;                                                              \
  template class Dropout<T>;                                                                 \
  template class BatchNorm<T>;                                                               \
  template class Flatten<T>;                                                                 \
  template class Dense<T>;

GRADPATH_INSTANTIATE(float)
GRADPATH_INSTANTIATE(double)

#undef GRADPATH_INSTANTIATE

}  // namespace gradpath
