#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatelab/rng.hpp"

namespace gatelab {

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 covers everything the
// toy models need; higher-rank data is kept as flattened matrices.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != count(shape))
      throw std::runtime_error("tensor: data length does not match shape");
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d < 1) throw std::runtime_error("tensor: dimension < 1");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    std::int64_t n = count(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(std::vector<int> s, double v) {
    std::int64_t n = count(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<int> s, double sigma, Rng& rng) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.data) x = rng.normal(0.0, sigma);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return size() == 1; }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace gatelab
