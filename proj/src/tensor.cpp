#include "hsad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace hsad {

std::string to_string(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

DType dtype_from_string(const std::string& name) {
  if (name == "float32") return DType::kFloat32;
  if (name == "float64") return DType::kFloat64;
  throw ConfigError("unknown dtype '" + name + "' (expected float32 or float64)");
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
  }
  size_ = shape_size(shape_);
  if (dtype == DType::kFloat32) {
    storage_ = std::make_shared<Storage>(std::vector<float>(size_, 0.0f));
  } else {
    storage_ = std::make_shared<Storage>(std::vector<double>(size_, 0.0));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype) : Tensor(std::move(shape), dtype) {
  if (values.size() != size_) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
  if (dtype == DType::kFloat64) {
    std::get<std::vector<double>>(*storage_) = std::move(values);
  } else {
    auto& v = std::get<std::vector<float>>(*storage_);
    for (std::size_t i = 0; i < size_; ++i) v[i] = static_cast<float>(values[i]);
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& x : t.mutable_data<T>()) x = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape(), other.dtype()); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t flat) const {
  return dispatch(dtype_, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data<T>()[flat]);
  });
}

void Tensor::set(std::size_t flat, double value) {
  dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    mutable_data<T>()[flat] = static_cast<T>(value);
  });
}

double Tensor::item() const {
  if (size_ != 1) throw ContractError("item() on a tensor of shape " + shape_to_string(shape_));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(size_);
  dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto src = data<T>();
    for (std::size_t i = 0; i < size_; ++i) out[i] = static_cast<double>(src[i]);
  });
  return out;
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  return Tensor(shape_, to_vector(), dtype);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size_) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " into " + shape_to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::clone() const {
  Tensor out = *this;
  if (storage_ != nullptr) out.storage_ = std::make_shared<Storage>(*storage_);
  return out;
}

void Tensor::detach() {
  if (storage_ != nullptr && storage_.use_count() > 1) {
    storage_ = std::make_shared<Storage>(*storage_);
  }
}

bool Tensor::all_finite() const {
  if (empty()) return true;
  return dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    for (T x : data<T>()) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  });
}

bool Tensor::identical(const Tensor& other) const {
  if (empty() || other.empty()) return empty() == other.empty();
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
  });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                        to_string(b.dtype()));
  }
}

}  // namespace hsad
