#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pogmv/errors.hpp"

namespace pogmv {

// Dense row-major tensor of doubles. Feature maps are [N, C, T, H, W],
// scalars are shape {1}.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) {
    for (double& x : data) x = v;
  }
};

std::string shape_str(const std::vector<int>& s);

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

bool all_finite(const Tensor& t);

double max_abs(const Tensor& t);

}  // namespace pogmv
