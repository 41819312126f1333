#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradpath/layers.hpp"

namespace gradpath {

enum class DatasetKind : std::uint32_t { mnist = 0, cifar10 = 1, cifar100 = 2, toy = 3 };
enum class Topology : std::uint32_t { single = 0, dual = 1 };

std::string_view to_string(DatasetKind kind);
std::string_view to_string(Topology topology);
/// Accepts "mnist", "cifar10", "cifar100", "toy". Throws ParameterError otherwise.
DatasetKind parse_dataset_kind(std::string_view name);
/// Accepts "baseline"/"single" and "dualpath"/"dual".
Topology parse_topology(std::string_view name);
/// "baseline" or "dualpath", the arch tag used in metrics.
std::string_view arch_tag(Topology topology);

struct ConvBlock {
  std::size_t filters;
  bool pool;
};

/// Layer geometry of a network: conv blocks (conv, relu, [pool], dropout,
/// batchnorm), then flatten and a linear dense stack ending in `classes`.
struct Architecture {
  DatasetKind kind;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  std::vector<ConvBlock> blocks;
  std::vector<std::size_t> dense_widths;  // hidden widths, classifier excluded
  std::size_t classes;
  double dropout = 0.2;
};

/// The benchmark stacks: one block for MNIST, three for CIFAR-10/100; toy is
/// an 8x8 single-block variant for fast tests.
Architecture architecture_for(DatasetKind kind);

/// Smallest useful network (single block of `filters` on a size x size image)
/// for full-model gradient checks.
Architecture tiny_architecture(std::size_t filters = 2, std::size_t size = 8,
                               std::size_t classes = 4);

/// Activations recorded by ModelSpec::forward. Branch-tagged for dual topology.
template <typename T>
struct ForwardTrace {
  std::uint64_t generation = 0;
  Topology topology = Topology::single;
  Mode mode = Mode::train;
  std::size_t batch = 0;
  /// Flattened trunk output: [b,F] single, [2b,F] dual (original rows first).
  BasicTensor<T> features;
  /// Dual only: the two halves of `features` at the ADD point.
  std::optional<std::array<BasicTensor<T>, 2>> branches;
  /// Input of the dense head (features for single, branch sum for dual).
  BasicTensor<T> head_input;
  /// Per-layer outputs in execution order, when requested.
  std::vector<BasicTensor<T>> layer_outputs;
};

template <typename T>
struct ForwardOutput {
  BasicTensor<T> logits;
  ForwardTrace<T> trace;
};

template <typename T>
using InputTransform = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

/// A network instance: shared conv trunk (through flatten), dense head, and a
/// topology flag. Copying a ModelSpec shares layer objects; use clone() for
/// independent weights.
template <typename T>
class ModelSpec {
 public:
  ModelSpec(Architecture arch, Topology topology,
            std::vector<std::shared_ptr<Layer<T>>> trunk,
            std::vector<std::shared_ptr<Layer<T>>> head);

  const Architecture& architecture() const noexcept { return arch_; }
  DatasetKind dataset_kind() const noexcept { return arch_.kind; }
  Topology topology() const noexcept { return topology_; }
  const std::vector<std::shared_ptr<Layer<T>>>& trunk() const noexcept { return trunk_; }
  const std::vector<std::shared_ptr<Layer<T>>>& head() const noexcept { return head_; }

  /// Second-branch input builder. Defaults to gradient_transform; replaceable for tests.
  void set_input_transform(InputTransform<T> transform) { transform_ = std::move(transform); }

  ForwardOutput<T> forward(const BasicTensor<T>& batch, Mode mode, bool record_layers = false);

  /// Backpropagates d(loss)/d(logits) through head and trunk, adding into every
  /// Param::grad. The trace must come from the latest forward() of this spec.
  void backward(const ForwardTrace<T>& trace, const BasicTensor<T>& logits_grad);

  std::vector<Param<T>*> params() const;
  /// Params plus non-trainable buffers, named "<layer>.<tensor>", in checkpoint order.
  std::vector<std::pair<std::string, BasicTensor<T>*>> named_tensors() const;
  void zero_grad() const;

  /// Re-seeds every dropout layer from `seed` (distinct stream per layer).
  void reseed_dropout(std::uint64_t seed) const;

  /// Same layer objects, different topology.
  ModelSpec with_topology(Topology topology) const;
  /// Deep copy with independent weights and caches.
  ModelSpec clone() const;

 private:
  Architecture arch_;
  Topology topology_;
  std::vector<std::shared_ptr<Layer<T>>> trunk_;
  std::vector<std::shared_ptr<Layer<T>>> head_;
  InputTransform<T> transform_;
  std::shared_ptr<std::uint64_t> generation_;
};

template <typename T>
ModelSpec<T> build_model(const Architecture& arch, Topology topology, std::uint64_t seed);

/// Benchmark network: only the original image is fed.
template <typename T>
ModelSpec<T> build_baseline(DatasetKind kind, std::uint64_t seed);

/// Same layers and initial weights as build_baseline(kind, seed); the gradient
/// image runs through the shared trunk and the two flattened outputs are added.
template <typename T>
ModelSpec<T> build_dualpath(DatasetKind kind, std::uint64_t seed);

/// Number of trainable scalars (conv/dense weights and biases, batchnorm gamma/beta).
template <typename T>
std::size_t param_count(const ModelSpec<T>& spec);

/// One row of the printable layer table.
struct LayerRow {
  std::string name;
  std::string kind;
  std::string config;
  std::string output_shape;
  std::size_t params;
};

template <typename T>
std::vector<LayerRow> layer_table(const ModelSpec<T>& spec);

// Checkpoints: "GPTH1", u32 dataset kind, u32 topology, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims, f32 values (all little-endian).
void save_checkpoint(const ModelSpec<float>& spec, const std::filesystem::path& path);
ModelSpec<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace gradpath
