#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "trajcast/errors.hpp"
#include "trajcast/rng.hpp"

namespace trajcast {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor. T is float (training) or double (verification).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }

  Tensor(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("non-positive dim in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor uniform(std::vector<int> s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(std::vector<int> s, Rng& rng, double mean, double stddev) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // row-major strides
  std::vector<std::int64_t> strides() const {
    std::vector<std::int64_t> st(shape.size());
    std::int64_t acc = 1;
    for (int i = rank() - 1; i >= 0; --i) {
      st[static_cast<std::size_t>(i)] = acc;
      acc *= shape[static_cast<std::size_t>(i)];
    }
    return st;
  }

  T& at(std::initializer_list<int> idx) {
    return data[static_cast<std::size_t>(offset(idx))];
  }
  const T& at(std::initializer_list<int> idx) const {
    return data[static_cast<std::size_t>(offset(idx))];
  }

  std::int64_t offset(std::initializer_list<int> idx) const {
    auto st = strides();
    std::int64_t off = 0;
    int i = 0;
    for (int v : idx) off += st[static_cast<std::size_t>(i++)] * v;
    return off;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace trajcast
