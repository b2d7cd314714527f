#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedflat {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Every dimension is at least 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Layout of named parameter blocks inside a flat vector. Offsets are
/// contiguous in insertion order.
class Manifest {
 public:
  void add(std::string name, Shape shape);

  [[nodiscard]] const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t total_size() const noexcept { return total_; }
  [[nodiscard]] const ParamEntry& at(std::size_t i) const { return entries_.at(i); }
  [[nodiscard]] const ParamEntry* find(const std::string& name) const;

  friend bool operator==(const Manifest& a, const Manifest& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

/// Flat parameter vector plus the manifest describing its layer blocks.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const Manifest> manifest, double fill = 0.0);
  ParamVector(std::shared_ptr<const Manifest> manifest, std::vector<double> values);

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<double> data() noexcept { return values_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return values_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
  [[nodiscard]] const Manifest& manifest() const { return *manifest_; }
  [[nodiscard]] const std::shared_ptr<const Manifest>& manifest_ptr() const noexcept {
    return manifest_;
  }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  [[nodiscard]] std::span<const double> block(const ParamEntry& e) const {
    return data().subspan(e.offset, shape_size(e.shape));
  }

  /// Same layout, different values.
  [[nodiscard]] ParamVector like(std::vector<double> values) const;
  [[nodiscard]] bool same_layout(const ParamVector& other) const;

 private:
  std::shared_ptr<const Manifest> manifest_;
  std::vector<double> values_;
};

/// Flat-vector arithmetic used by optimizers and analysis.
namespace vec {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);
std::vector<double> add(std::span<const double> a, std::span<const double> b);
std::vector<double> sub(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> a);

}  // namespace vec

}  // namespace fedflat
