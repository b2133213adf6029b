#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nid {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operands whose shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file or failed read/write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major real grid. The tag keeps time matrices, reliability maps and
/// plain grids from being mixed up at call sites.
template <class Tag>
class BasicGrid {
 public:
  BasicGrid() = default;
  BasicGrid(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  BasicGrid(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) throw ShapeError("grid: value count does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vector() const { return values_; }

  bool same_shape(const BasicGrid& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  friend bool operator==(const BasicGrid&, const BasicGrid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct TimeTag {};
struct ReliabilityTag {};
struct PlainTag {};

/// Per-element diffusion time. Entries are real-valued in [0, T].
using TimeMatrix = BasicGrid<TimeTag>;
/// Per-element amplitude reliability M (0 = unobserved).
using ReliabilityMap = BasicGrid<ReliabilityTag>;
using RealGrid = BasicGrid<PlainTag>;

/// Sum of entries.
double total(std::span<const double> v);

/// Repeats a per-element map once per plane: result[p * n + i] = map[i].
std::vector<double> expand_planes(std::span<const double> per_element, std::size_t planes);

/// Number of planes a stacked state of `state_size` carries over `elements` grid entries.
std::size_t planes_for(std::size_t state_size, std::size_t elements);

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what);

}  // namespace nid
