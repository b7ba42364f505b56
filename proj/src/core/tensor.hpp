#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/error.hpp"

namespace mstage {

// Dense row-major tensor of 64-bit reals. Rank 1..3 is all the models need.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape);

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor from(std::vector<size_t> shape, std::vector<double> data);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }
  size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // rank-2 access: [r][c]
  double& at2(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  double at2(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }
  double* row(size_t r) { return data_.data() + r * shape_[1]; }
  const double* row(size_t r) const { return data_.data() + r * shape_[1]; }

  // rank-3 access: [i][j][k]
  double& at3(size_t i, size_t j, size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(size_t i, size_t j, size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void require_finite(const std::string& what) const;

  std::string shape_str() const;

private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

// Named parameters with matching gradient accumulators, in insertion order.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

class ParamSet {
public:
  // Returns the stored value tensor. Duplicate names are rejected.
  Tensor& add(const std::string& name, Tensor init);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  size_t scalar_count() const;
  void zero_grads();

private:
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace mstage
