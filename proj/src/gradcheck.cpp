#include "gradpath/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gradpath {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<GradcheckEntry> GradcheckReport::failures() const {
  std::vector<GradcheckEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [](const auto& e) { return !e.passed; });
  return out;
}

double GradcheckReport::max_error(const std::string& subject) const {
  double worst = -1.0;
  for (const auto& e : entries) {
    if (e.subject == subject) worst = std::max(worst, e.max_rel_error);
  }
  return worst;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("relative_error: length mismatch");
  }
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    // NaN anywhere must fail the check
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) {
      return std::numeric_limits<double>::infinity();
    }
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace {

constexpr std::uint64_t kDropoutSeed = 0xD20F;

TensorD random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  TensorD t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Central difference of f with respect to every element of `target`.
std::vector<double> numeric_gradient(std::span<double> target, double eps,
                                     const std::function<double()>& f) {
  std::vector<double> grad(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double saved = target[i];
    target[i] = saved + eps;
    const double up = f();
    target[i] = saved - eps;
    const double down = f();
    target[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

GradcheckEntry make_entry(std::string subject, std::string tensor, std::span<const double> analytic,
                          std::span<const double> numeric, double tolerance) {
  const double err = relative_error(analytic, numeric);
  return {std::move(subject), std::move(tensor), err, err < tolerance};
}

void reseed_if_dropout(Layer<double>& layer) {
  if (auto* d = dynamic_cast<Dropout<double>*>(&layer)) d->reseed(kDropoutSeed);
}

}  // namespace

std::vector<GradcheckEntry> check_layer(Layer<double>& layer, const Shape& input_shape, Mode mode,
                                        const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  TensorD x = random_tensor(input_shape, rng);
  if (layer.kind() == LayerKind::relu) {
    // keep inputs away from the kink at 0
    for (double& v : x.data()) v += v >= 0.0 ? 0.1 : -0.1;
  }
  const TensorD w = random_tensor(layer.output_shape(input_shape), rng);

  auto loss = [&]() {
    reseed_if_dropout(layer);
    const TensorD y = layer.forward(x, mode);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };

  const std::string subject(to_string(layer.kind()));
  layer.zero_grad();
  reseed_if_dropout(layer);
  layer.forward(x, mode);
  const TensorD dx = layer.backward(w);

  std::vector<GradcheckEntry> out;
  out.push_back(make_entry(subject, layer.name() + ".input", dx.data(),
                           numeric_gradient(x.data(), options.epsilon, loss), options.tolerance));
  for (auto& p : layer.params()) {
    const TensorD analytic = p.grad;
    const auto numeric = numeric_gradient(p.value.data(), options.epsilon, loss);
    out.push_back(make_entry(subject, layer.name() + "." + p.name, analytic.data(), numeric,
                             options.tolerance));
  }
  return out;
}

std::vector<GradcheckEntry> check_softmax_cross_entropy(const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed + 1);
  TensorD logits = random_tensor(Shape{3, 5}, rng);
  const std::vector<std::int32_t> labels{0, 3, 4};
  const LossValue<double> lv = softmax_cross_entropy(logits, std::span<const std::int32_t>(labels));
  const auto numeric = numeric_gradient(logits.data(), options.epsilon, [&]() {
    return softmax_cross_entropy(logits, std::span<const std::int32_t>(labels)).loss;
  });
  return {make_entry(std::string(to_string(LayerKind::softmax_cross_entropy)), "logits",
                     lv.logits_grad.data(), numeric, options.tolerance)};
}

std::vector<GradcheckEntry> check_model(ModelSpec<double>& model, const TensorD& batch,
                                        std::span<const std::int32_t> labels, Mode mode,
                                        const GradcheckOptions& options) {
  auto loss = [&]() {
    model.reseed_dropout(kDropoutSeed);
    return softmax_cross_entropy(model.forward(batch, mode).logits, labels).loss;
  };

  model.zero_grad();
  model.reseed_dropout(kDropoutSeed);
  ForwardOutput<double> fwd = model.forward(batch, mode);
  const LossValue<double> lv = softmax_cross_entropy(fwd.logits, labels);
  model.backward(fwd.trace, lv.logits_grad);

  const std::string subject(to_string(model.topology()));
  std::vector<GradcheckEntry> out;
  for (const auto* group : {&model.trunk(), &model.head()}) {
    for (const auto& layer : *group) {
      for (auto& p : layer->params()) {
        const TensorD analytic = p.grad;
        const auto numeric = numeric_gradient(p.value.data(), options.epsilon, loss);
        out.push_back(make_entry(subject, layer->name() + "." + p.name, analytic.data(), numeric,
                                 options.tolerance));
      }
    }
  }
  return out;
}

namespace {

std::unique_ptr<Layer<double>> default_layer(LayerKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2d<double>>("conv2d", 3, 4, 1, rng);
    case LayerKind::relu: return std::make_unique<Relu<double>>("relu");
    case LayerKind::maxpool2x2: return std::make_unique<MaxPool2x2<double>>("maxpool2x2");
    case LayerKind::dropout: return std::make_unique<Dropout<double>>("dropout", 0.2, kDropoutSeed);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm<double>>("batchnorm", 3);
    case LayerKind::flatten: return std::make_unique<Flatten<double>>("flatten");
    case LayerKind::dense: return std::make_unique<Dense<double>>("dense", 5, 4, rng);
    case LayerKind::softmax_cross_entropy: break;
  }
  return nullptr;
}

}  // namespace

GradcheckReport gradcheck_suite(const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);

  auto make = [&](LayerKind kind) {
    std::unique_ptr<Layer<double>> layer;
    if (options.layer_override) layer = options.layer_override(kind, rng);
    if (!layer) layer = default_layer(kind, rng);
    return layer;
  };
  auto run = [&](LayerKind kind, const Shape& shape, Mode mode) {
    auto layer = make(kind);
    auto entries = check_layer(*layer, shape, mode, options);
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  };

  const Shape image{2, 3, 6, 6};
  run(LayerKind::conv2d, image, Mode::train);
  run(LayerKind::relu, image, Mode::train);
  run(LayerKind::maxpool2x2, image, Mode::train);
  run(LayerKind::dropout, image, Mode::train);
  run(LayerKind::batchnorm, Shape{4, 3, 6, 6}, Mode::train);
  run(LayerKind::batchnorm, Shape{4, 3, 6, 6}, Mode::eval);
  run(LayerKind::flatten, image, Mode::train);
  run(LayerKind::dense, Shape{3, 5}, Mode::train);
  {
    auto entries = check_softmax_cross_entropy(options);
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }

  // full models: 2 filters on 8x8 input, both topologies from the same weights
  const Architecture tiny = tiny_architecture(2, 8, 4);
  std::mt19937_64 data_rng(options.seed + 2);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  TensorD batch(Shape{3, 1, 8, 8});
  for (double& v : batch.data()) v = pixel(data_rng);
  const std::vector<std::int32_t> labels{0, 2, 3};
  for (Topology topology : {Topology::single, Topology::dual}) {
    ModelSpec<double> model = build_model<double>(tiny, topology, options.seed);
    auto entries = check_model(model, batch, labels, Mode::train, options);
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }
  return report;
}

}  // namespace gradpath
