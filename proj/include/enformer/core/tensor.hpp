#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace enformer {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

// Dense row-major ND array. Plain value type: copy copies the buffer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T{}) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
      throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int64_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw std::out_of_range("tensor: dim index " + std::to_string(i) + " for " + shape_str(shape_));
    return shape_[i];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  template <typename... Ix>
  T& at(Ix... ix) { return data_[offset({static_cast<int64_t>(ix)...})]; }
  template <typename... Ix>
  const T& at(Ix... ix) const { return data_[offset({static_cast<int64_t>(ix)...})]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor r = *this;
    r.shape_ = std::move(s);
    return r;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  size_t offset(std::initializer_list<int64_t> ix) const {
    if (static_cast<int>(ix.size()) != rank())
      throw std::out_of_range("tensor: index rank mismatch for " + shape_str(shape_));
    size_t off = 0;
    int i = 0;
    for (int64_t v : ix) {
      if (v < 0 || v >= shape_[i]) throw std::out_of_range("tensor: index out of range");
      off = off * static_cast<size_t>(shape_[i]) + static_cast<size_t>(v);
      ++i;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace enformer
