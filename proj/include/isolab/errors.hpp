#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace isolab {

/// A row with zero norm reached a normalization that has no epsilon guard.
class DegenerateRowError : public std::runtime_error {
 public:
  DegenerateRowError(std::size_t row, std::optional<std::size_t> layer = std::nullopt)
      : std::runtime_error(describe(row, layer)), row_(row), layer_(layer) {}

  std::size_t row() const { return row_; }
  std::optional<std::size_t> layer() const { return layer_; }

 private:
  static std::string describe(std::size_t row, std::optional<std::size_t> layer) {
    std::string msg = "degenerate row " + std::to_string(row);
    if (layer) msg += " at layer " + std::to_string(*layer);
    return msg;
  }

  std::size_t row_;
  std::optional<std::size_t> layer_;
};

/// Malformed input file (matrix, dataset or config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace isolab
