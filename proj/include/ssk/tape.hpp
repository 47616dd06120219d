#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "ssk/tensor.hpp"

namespace ssk {

enum class OpKind {
  Constant,
  Parameter,
  Conv2d,
  MaxPool2d,
  BilinearUpsample,
  Add,
  Sub,
  Mul,
  MulBroadcast,
  Scale,
  AddScalar,
  Sigmoid,
  Tanh,
  Relu,
  SoftmaxChannels,
  Sum,
  Reshape,
  Select,
  Stack,
  ChannelsLast,
  CrossEntropy,
  IouLoss,
  SegLoss,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;
};

/// Append-only record of a forward computation for reverse-mode
/// differentiation. Node ids grow monotonically, so every node's inputs have
/// smaller ids and the reverse append order is a valid topological order.
///
/// Not thread-safe; build and differentiate a tape on one thread.
class Tape {
 public:
  /// Reads the node's output gradient (`grad(self)`) and accumulates into
  /// the gradients of its inputs via `accumulate`.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);

  /// Registers a parameter as a leaf. When `trainable`, backward() writes its
  /// gradient into `p.grad` (accumulating onto any existing gradient).
  /// The Parameter must outlive the tape's backward() call.
  Var parameter(Parameter& p, bool trainable = true);

  /// Appends an operation node. Its requires_grad flag is the OR of its
  /// inputs'; `backward` is dropped when no input requires a gradient.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. a node, or an empty
  /// tensor when none reached it.
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  const Tensor& grad(Var v) const { return grad(v.id); }

  /// Adds `g` into the gradient buffer of node `id` (no-op when the node does
  /// not require a gradient).
  void accumulate(std::size_t id, std::span<const double> g);
  /// Mutable gradient buffer of node `id`, zero-initialised on first access.
  std::span<double> grad_buffer(std::size_t id);

  /// Reverse sweep from a scalar node. Populates `grad` on every trainable
  /// parameter registered on this tape.
  void backward(Var loss);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace ssk
