// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hfedckd/errors.hpp"

namespace hfedckd {

/// Dense row-major array of doubles. Carries features, logits, parameters
/// and gradients throughout the artifact.
struct TensorValue {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  TensorValue() = default;
  TensorValue(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape product " +
                       std::to_string(element_count(shape)));
    }
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return s.empty() ? 0 : n;
  }

  static TensorValue zeros(std::vector<std::size_t> s) {
    std::size_t n = element_count(s);
    return TensorValue(std::move(s), std::vector<double>(n, 0.0));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  // 2-d accessors; rank-1 tensors behave as a single row.
  std::size_t rows() const { return rank() >= 2 ? shape[0] : (shape.empty() ? 0 : 1); }
  std::size_t cols() const { return rank() >= 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data.data() + r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data.data() + r * cols(), cols());
  }

  bool same_shape(const TensorValue& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_string(const TensorValue& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

inline void check_finite(const TensorValue& t, const char* what) {
  if (!t.all_finite())
    throw StateError(std::string(what) + ": non-finite entries produced");
}

}  // namespace hfedckd
