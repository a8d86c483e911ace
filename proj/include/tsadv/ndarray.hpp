#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsadv/error.hpp"

namespace tsadv {

/// Dense row-major array of 64-bit floats. Rank 1 or 2 in practice;
/// scalars are rank-1 arrays of length one.
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  NdArray() = default;
  NdArray(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size())
      throw ShapeError("NdArray: shape does not match data length");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  static NdArray zeros(std::vector<std::size_t> s) {
    std::size_t n = count(s);
    return NdArray(std::move(s), std::vector<double>(n, 0.0));
  }

  static NdArray full(std::vector<std::size_t> s, double v) {
    std::size_t n = count(s);
    return NdArray(std::move(s), std::vector<double>(n, v));
  }

  static NdArray scalar(double v) { return NdArray({1}, {v}); }

  static NdArray vec(std::vector<double> v) {
    std::size_t n = v.size();
    return NdArray({n}, std::move(v));
  }

  static NdArray matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return NdArray({r, c}, std::move(v));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<const double> view() const { return {data.data(), data.size()}; }

  bool same_shape(const NdArray& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_string(const NdArray& a) {
  std::string s = "(";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(a.shape[i]);
  }
  return s + ")";
}

}  // namespace tsadv
