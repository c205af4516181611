#pragma once

// Dense row-major double tensors used throughout the library.

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace noisymarl {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& where, const std::string& msg) {
  throw std::runtime_error(where + ": " + msg);
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      fail("Tensor", "data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    for (int dim : shape)
      if (dim <= 0) fail("Tensor", "non-positive dimension in shape " + shape_str(shape));
  }
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {}

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  std::size_t size() const { return data.size(); }
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
};

}  // namespace noisymarl
