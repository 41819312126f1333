#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gradpath {

/// Operand shapes do not line up (matmul inner dims, elementwise ops, layer inputs).
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spatial geometry is invalid for the requested operation (odd pool input, tiny image).
class ShapeError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

/// A hyperparameter or argument is out of its allowed range.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// backward() called without a matching forward() cache.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed dataset/checkpoint bytes. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Data-level problem that is not about byte layout (label out of range, missing file).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what), batch_index_(batch_index) {}

  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

}  // namespace gradpath
