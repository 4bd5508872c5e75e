#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "scsp/errors.hpp"

namespace scsp {

// Row-major n-d array of doubles. Conv weights are stored H x W x I x O and
// FC weights fan_in x fan_out, so in both cases filter o is column o of the
// (numel / O) x O matrix view.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw DimensionError("Tensor: data length does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    if (s.empty()) return 0;
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + ")";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace scsp
