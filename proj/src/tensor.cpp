#include "fedflat/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fedflat/errors.hpp"

namespace fedflat {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw UsageError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw UsageError("tensor dimensions must be >= 1, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw UsageError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Manifest::add(std::string name, Shape shape) {
  const auto n = shape_size(shape);
  entries_.push_back(ParamEntry{std::move(name), std::move(shape), total_});
  total_ += n;
}

const ParamEntry* Manifest::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

ParamVector::ParamVector(std::shared_ptr<const Manifest> manifest, double fill)
    : manifest_(std::move(manifest)), values_(manifest_->total_size(), fill) {}

ParamVector::ParamVector(std::shared_ptr<const Manifest> manifest, std::vector<double> values)
    : manifest_(std::move(manifest)), values_(std::move(values)) {
  if (values_.size() != manifest_->total_size()) {
    throw UsageError("parameter vector of length " + std::to_string(values_.size()) +
                     " does not match manifest total " + std::to_string(manifest_->total_size()));
  }
}

ParamVector ParamVector::like(std::vector<double> values) const {
  return ParamVector(manifest_, std::move(values));
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (manifest_ == other.manifest_) return true;
  return manifest_ && other.manifest_ && *manifest_ == *other.manifest_;
}

namespace vec {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw UsageError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (auto& v : x) v *= alpha;
}

std::vector<double> add(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("add: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

std::vector<double> sub(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("sub: length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool all_finite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace vec

}  // namespace fedflat
