#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradpath/data.hpp"
#include "gradpath/models.hpp"

namespace gradpath {

struct TrainConfig {
  DatasetKind dataset = DatasetKind::mnist;
  Topology topology = Topology::single;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::optional<std::size_t> subset_size;
  int precision = 32;  // 32 or 64

  /// Throws ParameterError on out-of-range fields.
  void validate() const;
};

struct MetricsRow {
  std::size_t epoch;
  std::string arch;
  double train_loss;
  double train_acc;
  double test_loss;
  double test_acc;
  double wall_time_s;
};

struct EpochStats {
  double loss;
  double accuracy;
};

/// v <- momentum*v + g ; w <- w - lr*v ; g <- 0. `velocity` is sized lazily.
template <typename T>
void sgd_step(std::span<Param<T>* const> params, std::vector<BasicTensor<T>>& velocity, double lr,
              double momentum);

/// Momentum SGD holding one velocity tensor per parameter.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum);

  void step(std::span<Param<T>* const> params) {
    sgd_step(params, velocity_, learning_rate_, momentum_);
  }

 private:
  double learning_rate_;
  double momentum_;
  std::vector<BasicTensor<T>> velocity_;
};

/// One shuffled pass: forward, loss, backward, step per batch. Loss/accuracy are
/// sample-weighted means of the train-mode outputs. Throws DivergenceError on a
/// non-finite loss.
template <typename T>
EpochStats train_epoch(ModelSpec<T>& model, const Dataset& data, const TrainConfig& config,
                       SgdMomentum<T>& optimizer, std::uint64_t shuffle_seed);

/// Eval-mode loss and accuracy over the whole dataset, in index order.
template <typename T>
EpochStats evaluate(ModelSpec<T>& model, const Dataset& data, std::size_t batch_size = 256);

/// Shuffle seed of epoch `epoch` (1-based) for a run seeded with `seed`.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

using EpochCallback = std::function<void(const MetricsRow&)>;

/// Trains `model` for config.epochs, logging one row per epoch.
template <typename T>
std::vector<MetricsRow> train_arm(ModelSpec<T>& model, const Dataset& train, const Dataset& test,
                                  const TrainConfig& config, const EpochCallback& on_epoch = {});

struct ExperimentResult {
  std::vector<MetricsRow> rows;  // baseline rows first, then dualpath
  double baseline_test_acc;
  double dualpath_test_acc;

  double delta() const { return dualpath_test_acc - baseline_test_acc; }
};

/// Baseline and dual-path arms from identical initial weights and data order.
/// config.topology is ignored; config.subset_size caps the training split.
ExperimentResult run_experiment(const TrainConfig& config, const Dataset& train,
                                const Dataset& test, const EpochCallback& on_epoch = {});

inline constexpr const char* kMetricsHeader =
    "epoch,arch,train_loss,train_acc,test_loss,test_acc,wall_time_s";

/// Writes the header and rows, floats with 6 decimals. With include_timing=false the
/// wall_time_s column is written as 0.000000 so the file is reproducible byte-for-byte.
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows,
                       bool include_timing = true);

}  // namespace gradpath
