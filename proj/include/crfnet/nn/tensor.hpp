#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crfnet/error.hpp"

namespace crfnet::nn {

/// Dense row-major tensor of doubles. Activations use N x H x W x C order;
/// convolution kernels use KH x KW x C_in x C_out.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(element_count(shape_) == data_.size(), ErrorCode::dimension_mismatch,
            "tensor data length does not match its shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (N, H, W, C).
  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }
  double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset(n, h, w, c)];
  }
  double at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[offset(n, h, w, c)];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  require(t.rank() == rank, ErrorCode::dimension_mismatch,
          std::string(what) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
              t.shape_string());
}

}  // namespace crfnet::nn
