#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gradpath/layers.hpp"
#include "gradpath/models.hpp"

namespace gradpath {

/// Result of comparing one analytic gradient tensor against central differences.
struct GradcheckEntry {
  std::string subject;  // layer kind, or "single"/"dual" for full models
  std::string tensor;   // "input", "<layer>.<param>", ...
  double max_rel_error;
  bool passed;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;

  bool passed() const;
  std::vector<GradcheckEntry> failures() const;
  /// Largest error over all entries of `subject`; negative when the subject is absent.
  double max_error(const std::string& subject) const;
};

using LayerFactory =
    std::function<std::unique_ptr<Layer<double>>(LayerKind kind, std::mt19937_64& rng)>;

struct GradcheckOptions {
  double tolerance = 1e-4;
  double epsilon = 1e-5;
  std::uint64_t seed = 7;
  /// Replaces the default layer constructed for a kind when it returns non-null.
  LayerFactory layer_override;
};

/// max_i |a_i - n_i| / max(max|a|, max|n|, 1e-12)
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Checks input and parameter gradients of `layer` for a random input of `input_shape`
/// under the scalar loss sum(w * layer(x)) with random w.
std::vector<GradcheckEntry> check_layer(Layer<double>& layer, const Shape& input_shape, Mode mode,
                                        const GradcheckOptions& options);

/// Checks d(loss)/d(logits) of softmax_cross_entropy on random logits.
std::vector<GradcheckEntry> check_softmax_cross_entropy(const GradcheckOptions& options);

/// Checks every trainable tensor of a full model on one batch under the
/// cross-entropy loss. Dropout is reseeded before every evaluation.
std::vector<GradcheckEntry> check_model(ModelSpec<double>& model, const TensorD& batch,
                                        std::span<const std::int32_t> labels, Mode mode,
                                        const GradcheckOptions& options);

/// Every layer kind of the benchmark networks plus both topologies of the tiny network.
GradcheckReport gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace gradpath
