#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ssk/tape.hpp"

namespace ssk {

enum class Padding { Same, Valid };

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::Same;
};

/// Output extent and leading pad for one spatial axis. "Same" padding pads
/// symmetrically with the odd pixel going to the bottom/right, producing
/// ceil(in / stride) outputs.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
  std::size_t pad_total = 0;
};
AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                       Padding padding);

// input [N,C_in,H,W], weight [C_out,C_in,kh,kw], bias [C_out] (optional).
Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt = {});

// Padding::Same pads with -inf so edge windows only see real pixels.
Var max_pool2d(Var input, std::size_t kernel, std::size_t stride, Padding padding = Padding::Valid);

/// Align-corners bilinear resize of [N,C,h,w] to [N,C,out_h,out_w].
Var bilinear_upsample(Var input, std::size_t out_h, std::size_t out_w);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a [N, ...rest] times b [...rest], b repeated over the leading axis.
Var mul_broadcast(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

enum class ElementwiseOp { Add, Sub, Mul, Sigmoid, Tanh, Relu, Scale };
/// Dispatcher over the elementwise family. Binary ops take `b`; Scale takes
/// `scalar`; unary ops take neither.
Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt,
                std::optional<double> scalar = std::nullopt);

/// Per-pixel softmax over the channel axis of [N,C,H,W].
Var softmax_channels(Var input);

Var sum(Var a);
Var reshape(Var a, Shape shape);
/// Drops `axis`, keeping slice `index`.
Var select(Var a, std::size_t axis, std::size_t index);
/// Inverse of select: stacks equally-shaped vars along a new `axis`.
Var stack(const std::vector<Var>& vars, std::size_t axis);
/// [N,C,H,W] -> [N*H*W, C]: one row per pixel sample.
Var channels_last(Var input);

// Plain-tensor helpers (no tape).
Tensor softmax_channels(const Tensor& input);
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

}  // namespace ssk
