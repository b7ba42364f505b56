#include "core/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mstage {

namespace {

size_t checked_size(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) {
    if (d == 0) fail(ErrorKind::InvalidArg, "tensor dimension of size 0");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
  data_.assign(checked_size(shape_), 0.0);
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data) {
  size_t n = checked_size(shape);
  if (n != data.size()) {
    std::ostringstream os;
    os << "tensor data length " << data.size() << " does not match shape product " << n;
    fail(ErrorKind::InvalidArg, os.str());
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.require_finite("tensor");
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) fail(ErrorKind::Numeric, what + " contains a non-finite entry");
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor& ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name))
    fail(ErrorKind::InvalidArg, "duplicate parameter name: " + name);
  index_[name] = params_.size();
  Param p;
  p.name = name;
  p.grad = Tensor::zeros(init.shape());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back().value;
}

Param& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::InvalidArg, "unknown parameter: " + name);
  return params_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::InvalidArg, "unknown parameter: " + name);
  return params_[it->second];
}

size_t ParamSet::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& p : params_) p.grad.fill(0.0);
}

}  // namespace mstage
