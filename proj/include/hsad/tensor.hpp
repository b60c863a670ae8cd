#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hsad/errors.hpp"

namespace hsad {

enum class DType { kFloat32, kFloat64 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::kFloat32) return fn(float{});
  return fn(double{});
}

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == sizeof(float) ? DType::kFloat32 : DType::kFloat64;
}

/// Dense row-major n-dimensional array.
///
/// Storage is shared between copies and detached on the first mutable access,
/// so a Tensor behaves as an immutable value when passed around. A
/// default-constructed Tensor is "empty" (rank 0, no storage) and is used as a
/// null marker for absent gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::kFloat64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::kFloat64);

  static Tensor zeros(Shape shape, DType dtype = DType::kFloat64);
  static Tensor ones(Shape shape, DType dtype = DType::kFloat64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat64);
  static Tensor scalar(double value, DType dtype = DType::kFloat64);
  static Tensor zeros_like(const Tensor& other);

  bool empty() const { return storage_ == nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return size_; }
  DType dtype() const { return dtype_; }

  template <typename T>
  std::span<const T> data() const {
    check_dtype<T>();
    const auto& v = std::get<std::vector<T>>(*storage_);
    return {v.data(), v.size()};
  }

  template <typename T>
  std::span<T> mutable_data() {
    check_dtype<T>();
    detach();
    auto& v = std::get<std::vector<T>>(*storage_);
    return {v.data(), v.size()};
  }

  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);
  /// Value of a single-element tensor.
  double item() const;

  std::vector<double> to_vector() const;
  Tensor to(DType dtype) const;
  /// Same buffer viewed with a different shape of equal size.
  Tensor reshaped(Shape shape) const;
  Tensor clone() const;

  bool all_finite() const;
  /// Bitwise equality of shape, dtype and buffer contents.
  bool identical(const Tensor& other) const;

 private:
  using Storage = std::variant<std::vector<float>, std::vector<double>>;

  template <typename T>
  void check_dtype() const {
    if (storage_ == nullptr) throw ContractError("access to an empty tensor");
    if (dtype_of<T>() != dtype_) {
      throw ContractError("tensor dtype is " + to_string(dtype_));
    }
  }
  void detach();

  Shape shape_;
  std::size_t size_ = 0;
  DType dtype_ = DType::kFloat64;
  std::shared_ptr<Storage> storage_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace hsad
