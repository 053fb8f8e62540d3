#include "kpx/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kpx {

static std::size_t checked_volume(const std::vector<int>& shape) {
  if (shape.empty()) throw ShapeError("Tensor: empty shape");
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("Tensor: non-positive extent");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(checked_volume(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (checked_volume(shape_) != data_.size())
    throw ShapeError("Tensor: data length does not match shape " +
                     shape_str());
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i)
    os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double x : data_) s += x;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

void Tensor::add_scaled(const Tensor& o, double s) {
  if (!same_shape(o))
    throw ShapeError("add_scaled: shape mismatch " + shape_str() + " vs " +
                     o.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

}  // namespace kpx
