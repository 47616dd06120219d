#include "ssk/tape.hpp"

#include <stdexcept>

namespace ssk {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::BilinearUpsample: return "bilinear_upsample";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::MulBroadcast: return "mul_broadcast";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::SoftmaxChannels: return "softmax_channels";
    case OpKind::Sum: return "sum";
    case OpKind::Reshape: return "reshape";
    case OpKind::Select: return "select";
    case OpKind::Stack: return "stack";
    case OpKind::ChannelsLast: return "channels_last";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::IouLoss: return "iou_loss";
    case OpKind::SegLoss: return "seg_loss";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape(); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, {}, std::move(value), {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p, bool trainable) {
  nodes_.push_back(Node{OpKind::Parameter, {}, p.value, {}, {}, trainable ? &p : nullptr, trainable});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, Backward backward) {
  bool rg = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("Tape::record: input id from the future");
    rg = rg || nodes_[in].requires_grad;
  }
  if (!rg) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, std::move(backward), nullptr, rg});
  return Var{this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.numel() != n.value.numel() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad.data();
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  if (!nodes_.at(id).requires_grad) return;
  auto buf = grad_buffer(id);
  if (buf.size() != g.size()) throw std::logic_error("Tape::accumulate: gradient size mismatch");
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = value(loss.id);
  if (lv.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (nodes_[loss.id].requires_grad) grad_buffer(loss.id)[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }

  for (auto& n : nodes_) {
    if (!n.param) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
    if (n.param->grad && n.param->grad->shape() == g.shape()) {
      auto dst = n.param->grad->data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
    } else {
      n.param->grad = std::move(g);
    }
  }
}

}  // namespace ssk
