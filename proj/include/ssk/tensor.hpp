#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssk {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major N-D array of 64-bit reals.
///
/// A Tensor is a plain value: it never refers to a computation graph. Values
/// that take part in differentiation are recorded on a Tape (see tape.hpp),
/// which returns lightweight Var handles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors for [N,C,H,W] tensors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  double item() const;

  /// Same data, new shape. Throws if the element count differs.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A named trainable tensor. `group` selects the learning-rate group.
struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  std::optional<Tensor> grad;

  void zero_grad() { grad.reset(); }
};

/// Insertion-ordered parameter collection keyed by "layer/param".
class ParameterStore {
 public:
  Parameter& add(std::string name, std::string group, Tensor value);
  bool contains(const std::string& name) const;
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  void erase(const std::string& name);

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

}  // namespace ssk
