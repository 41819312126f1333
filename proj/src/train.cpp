#include "gradpath/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace gradpath {

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0,1)");
  if (subset_size && *subset_size == 0) throw ParameterError("subset size must be >= 1");
  if (precision != 32 && precision != 64) throw ParameterError("precision must be 32 or 64");
}

template <typename T>
void sgd_step(std::span<Param<T>* const> params, std::vector<BasicTensor<T>>& velocity, double lr,
              double momentum) {
  if (velocity.empty()) {
    for (const Param<T>* p : params) velocity.emplace_back(p->value.shape());
  }
  if (velocity.size() != params.size()) {
    throw DimensionError("optimizer holds " + std::to_string(velocity.size()) +
                         " velocity tensors for " + std::to_string(params.size()) + " params");
  }
  const T m = static_cast<T>(momentum);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    if (velocity[i].shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw DimensionError("sgd_step shape mismatch for '" + p.name + "'");
    }
    auto w = p.value.data();
    auto g = p.grad.data();
    auto v = velocity[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] + g[j];
      w[j] -= rate * v[j];
      g[j] = T{0};
    }
  }
}

template <typename T>
SgdMomentum<T>::SgdMomentum(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate >= 0.0)) throw ParameterError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0,1)");
}

namespace {

template <typename T>
BasicTensor<T> as_precision(Tensor images) {
  if constexpr (std::is_same_v<T, float>) {
    return images;
  } else {
    return images.template cast<T>();
  }
}

template <typename T>
std::size_t count_correct(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.data().data() + i * k;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    if (best == static_cast<std::size_t>(labels[i])) ++correct;
  }
  return correct;
}

}  // namespace

template <typename T>
EpochStats train_epoch(ModelSpec<T>& model, const Dataset& data, const TrainConfig& config,
                       SgdMomentum<T>& optimizer, std::uint64_t shuffle_seed) {
  const auto plan = batch_indices(data.size(), config.batch_size, shuffle_seed, true);
  const std::vector<Param<T>*> params = model.params();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < plan.size(); ++b) {
    Batch batch = gather(data, plan[b]);
    const BasicTensor<T> x = as_precision<T>(std::move(batch.images));
    ForwardOutput<T> fwd = model.forward(x, Mode::train);
    LossValue<T> loss = softmax_cross_entropy(fwd.logits, std::span<const std::int32_t>(batch.labels));
    if (!std::isfinite(static_cast<double>(loss.loss))) {
      throw DivergenceError("non-finite training loss at batch " + std::to_string(b), b);
    }
    model.backward(fwd.trace, loss.logits_grad);
    optimizer.step(params);
    loss_sum += static_cast<double>(loss.loss) * static_cast<double>(batch.labels.size());
    correct += count_correct(fwd.logits, std::span<const std::int32_t>(batch.labels));
  }
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

template <typename T>
EpochStats evaluate(ModelSpec<T>& model, const Dataset& data, std::size_t batch_size) {
  const auto plan = batch_indices(data.size(), batch_size, 0, false);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& idx : plan) {
    Batch batch = gather(data, idx);
    const BasicTensor<T> x = as_precision<T>(std::move(batch.images));
    ForwardOutput<T> fwd = model.forward(x, Mode::eval);
    const LossValue<T> loss =
        softmax_cross_entropy(fwd.logits, std::span<const std::int32_t>(batch.labels));
    loss_sum += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
    correct += count_correct(fwd.logits, std::span<const std::int32_t>(batch.labels));
  }
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + epoch;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T>
std::vector<MetricsRow> train_arm(ModelSpec<T>& model, const Dataset& train, const Dataset& test,
                                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const Dataset* train_set = &train;
  Dataset capped;
  if (config.subset_size && *config.subset_size < train.size()) {
    capped = take_first(train, *config.subset_size);
    train_set = &capped;
  }
  SgdMomentum<T> optimizer(config.learning_rate, config.momentum);
  std::vector<MetricsRow> rows;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const EpochStats tr = train_epoch(model, *train_set, config, optimizer,
                                      epoch_seed(config.seed, epoch));
    const EpochStats te = evaluate(model, test);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(te.loss)) {
      throw DivergenceError("non-finite test loss after epoch " + std::to_string(epoch), 0);
    }
    rows.push_back({epoch, std::string(arch_tag(model.topology())), tr.loss, tr.accuracy,
                    te.loss, te.accuracy, elapsed});
    if (on_epoch) on_epoch(rows.back());
  }
  return rows;
}

namespace {

template <typename T>
ExperimentResult run_experiment_impl(const TrainConfig& config, const Dataset& train,
                                     const Dataset& test, const EpochCallback& on_epoch) {
  ExperimentResult result{{}, 0.0, 0.0};
  ModelSpec<T> baseline = build_baseline<T>(config.dataset, config.seed);
  ModelSpec<T> dual = build_dualpath<T>(config.dataset, config.seed);
  for (ModelSpec<T>* model : {&baseline, &dual}) {
    std::vector<MetricsRow> rows = train_arm(*model, train, test, config, on_epoch);
    const double acc = rows.back().test_acc;
    (model == &baseline ? result.baseline_test_acc : result.dualpath_test_acc) = acc;
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  }
  return result;
}

}  // namespace

ExperimentResult run_experiment(const TrainConfig& config, const Dataset& train,
                                const Dataset& test, const EpochCallback& on_epoch) {
  config.validate();
  if (config.precision == 64) return run_experiment_impl<double>(config, train, test, on_epoch);
  return run_experiment_impl<float>(config, train, test, on_epoch);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows, bool include_timing) {
  out << kMetricsHeader << '\n';
  char buf[256];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.arch.c_str(),
                  r.train_loss, r.train_acc, r.test_loss, r.test_acc,
                  include_timing ? r.wall_time_s : 0.0);
    out << buf;
  }
}

#define GRADPATH_INSTANTIATE(T)                                                              \
  template void sgd_step(std::span<Param<T>* const>, std::vector<BasicTensor<T>>&, double,   \
                         double);                                                            \
  template class SgdMomentum<T>;                                                             \
  template EpochStats train_epoch(ModelSpec<T>&, const Dataset&, const TrainConfig&,         \
                                  SgdMomentum<T>&, std::uint64_t);                           \
  template EpochStats evaluate(ModelSpec<T>&, const Dataset&, std::size_t);                  \
  template std::vector<MetricsRow> train_arm(ModelSpec<T>&, const Dataset&, const Dataset&,  \
                                             const TrainConfig&, const EpochCallback&);

GRADPATH_INSTANTIATE(float)
GRADPATH_INSTANTIATE(double)

#undef GRADPATH_INSTANTIATE

}  // namespace gradpath
