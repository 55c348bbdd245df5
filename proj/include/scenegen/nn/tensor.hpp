#pragma once

#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scenegen::nn {

// Dense row-major tensor. The scalar type is float in the training/inference
// profile and double where finite-difference checks need full precision.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)), data(count(shape), S(0)) {}
  Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if (static_cast<std::size_t>(count(shape)) != data.size())
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static int count(const std::vector<int>& shp) {
    int n = 1;
    for (int d : shp) {
      if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
  static Tensor full(std::vector<int> shp, S v) {
    Tensor t(std::move(shp));
    for (S& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  int numel() const { return static_cast<int>(data.size()); }
  int dim(int i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  S& operator[](std::size_t i) { return data[i]; }
  S operator[](std::size_t i) const { return data[i]; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

}  // namespace scenegen::nn
