#include "ssk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ssk {
namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                " input, got " + shape_str(a.shape()));
  }
}

// Dot product with four independent accumulators; fixed association order.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw;
  AxisGeometry gy, gx;
  std::size_t stride, dilation;
  std::size_t rows() const { return cin * kh * kw; }
  std::size_t pixels() const { return gy.out * gx.out; }
};

void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::size_t ho = g.gy.out, wo = g.gx.out;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
        double* row = cols + r * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki * g.dilation) -
                          static_cast<long>(g.gy.pad_before);
          double* out = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj * g.dilation) -
                            static_cast<long>(g.gx.pad_before);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t ho = g.gy.out, wo = g.gx.out;
  std::size_t r = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++r) {
        const double* row = cols + r * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki * g.dilation) -
                          static_cast<long>(g.gy.pad_before);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj * g.dilation) -
                            static_cast<long>(g.gx.pad_before);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename F, typename D>
Var unary(Var a, OpKind kind, F f, D dfdx_from_xy) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  return a.tape->record(kind, {ia}, std::move(y), [ia, dfdx_from_xy](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    std::vector<double> gx(gy.numel());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gy[i] * dfdx_from_xy(xv[i], yv[i]);
    t.accumulate(ia, gx);
  });
}

}  // namespace

AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                       Padding padding) {
  if (kernel == 0 || stride == 0 || dilation == 0) {
    throw std::invalid_argument("conv geometry: kernel, stride and dilation must be >= 1");
  }
  const std::size_t span = dilation * (kernel - 1) + 1;
  AxisGeometry g;
  if (padding == Padding::Same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + span;
    g.pad_total = needed > in ? needed - in : 0;
    g.pad_before = g.pad_total / 2;
  }
  if (in + g.pad_total < span) {
    throw std::invalid_argument("conv geometry: kernel span " + std::to_string(span) +
                                " exceeds padded input extent " + std::to_string(in + g.pad_total) +
                                " (zero-size result)");
  }
  g.out = (in + g.pad_total - span) / stride + 1;
  return g;
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt) {
  require_same_tape(input, weight, "conv2d");
  require_rank(input, 4, "conv2d(input)");
  require_rank(weight, 4, "conv2d(weight)");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs[1] != ws[1]) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(xs[1]) +
                                " channels but weight " + shape_str(ws) + " expects " +
                                std::to_string(ws[1]));
  }
  if (bias) {
    require_same_tape(input, *bias, "conv2d");
    if (bias->shape() != Shape{ws[0]}) {
      throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->shape()) +
                                  " does not match C_out " + std::to_string(ws[0]));
    }
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3],
                 conv_axis(xs[2], ws[2], opt.stride, opt.dilation, opt.padding),
                 conv_axis(xs[3], ws[3], opt.stride, opt.dilation, opt.padding),
                 opt.stride, opt.dilation};

  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const std::size_t K = g.rows(), P = g.pixels();
  Tensor y({g.n, g.cout, g.gy.out, g.gx.out}, 0.0);
  std::vector<double> cols(K * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x.data().data() + n * g.cin * g.h * g.w, cols.data());
    double* out = y.data().data() + n * g.cout * P;
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* orow = out + co * P;
      if (bias) std::fill(orow, orow + P, bias->value()[co]);
      const double* wrow = w.data().data() + co * K;
      for (std::size_t r = 0; r < K; ++r) axpy(wrow[r], cols.data() + r * P, orow, P);
    }
  }

  std::vector<std::size_t> ins{input.id, weight.id};
  if (bias) ins.push_back(bias->id);
  const std::size_t ix = input.id, iw = weight.id;
  const std::optional<std::size_t> ib = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  return input.tape->record(OpKind::Conv2d, std::move(ins), std::move(y),
                            [g, ix, iw, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    const std::size_t K = g.rows(), P = g.pixels();
    const bool need_x = t.requires_grad(ix);
    const bool need_w = t.requires_grad(iw);
    const bool need_b = ib && t.requires_grad(*ib);
    std::vector<double> cols(K * P), dcols(K * P);
    std::vector<double> dw(need_w ? g.cout * K : 0), db(need_b ? g.cout : 0);
    std::vector<double> dx(need_x ? xv.numel() : 0);
    for (std::size_t n = 0; n < g.n; ++n) {
      const double* gout = gy.data().data() + n * g.cout * P;
      if (need_w) {
        im2col(g, xv.data().data() + n * g.cin * g.h * g.w, cols.data());
        for (std::size_t co = 0; co < g.cout; ++co)
          for (std::size_t r = 0; r < K; ++r)
            dw[co * K + r] += dot(gout + co * P, cols.data() + r * P, P);
      }
      if (need_b) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* row = gout + co * P;
          double s = 0;
          for (std::size_t p = 0; p < P; ++p) s += row[p];
          db[co] += s;
        }
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* wrow = wv.data().data() + co * K;
          for (std::size_t r = 0; r < K; ++r) axpy(wrow[r], gout + co * P, dcols.data() + r * P, P);
        }
        col2im(g, dcols.data(), dx.data() + n * g.cin * g.h * g.w);
      }
    }
    if (need_x) t.accumulate(ix, dx);
    if (need_w) t.accumulate(iw, dw);
    if (need_b) t.accumulate(*ib, db);
  });
}

Var max_pool2d(Var input, std::size_t kernel, std::size_t stride, Padding padding) {
  require_rank(input, 4, "max_pool2d");
  if (kernel == 0 || stride == 0) throw std::invalid_argument("max_pool2d: kernel and stride must be >= 1");
  const Shape& xs = input.shape();
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (padding == Padding::Valid && (kernel > H || kernel > W)) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(kernel) +
                                " larger than input " + shape_str(xs));
  }
  const AxisGeometry gy = conv_axis(H, kernel, stride, 1, padding);
  const AxisGeometry gx = conv_axis(W, kernel, stride, 1, padding);
  const Tensor& x = input.value();
  Tensor y({N, C, gy.out, gx.out});
  std::vector<std::size_t> argmax(y.numel());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = x.data().data() + nc * H * W;
    for (std::size_t oy = 0; oy < gy.out; ++oy) {
      for (std::size_t ox = 0; ox < gx.out; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(gy.pad_before);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(gx.pad_before);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (best_idx == std::numeric_limits<std::size_t>::max() || plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
        }
        y[o] = best;
        argmax[o] = nc * H * W + best_idx;
      }
    }
  }
  const std::size_t ix = input.id;
  const std::size_t in_numel = x.numel();
  return input.tape->record(OpKind::MaxPool2d, {ix}, std::move(y),
                            [ix, in_numel, argmax = std::move(argmax)](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    std::vector<double> gx(in_numel, 0.0);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
    t.accumulate(ix, gx);
  });
}

namespace {

struct Interp {
  std::size_t i0, i1;
  double w1;
};

std::vector<Interp> align_corners_table(std::size_t in, std::size_t out) {
  std::vector<Interp> tab(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) /
                                     static_cast<double>(out - 1)
                               : 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    tab[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return tab;
}

void resize_planes(const double* src, std::size_t planes, std::size_t h, std::size_t w,
                   double* dst, std::size_t oh, std::size_t ow, const std::vector<Interp>& ty,
                   const std::vector<Interp>& tx) {
  for (std::size_t p = 0; p < planes; ++p) {
    const double* s = src + p * h * w;
    double* d = dst + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto [y0, y1, wy] = ty[oy];
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto [x0, x1, wx] = tx[ox];
        const double top = s[y0 * w + x0] * (1 - wx) + s[y0 * w + x1] * wx;
        const double bot = s[y1 * w + x0] * (1 - wx) + s[y1 * w + x1] * wx;
        d[oy * ow + ox] = top * (1 - wy) + bot * wy;
      }
    }
  }
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 4) throw std::invalid_argument("bilinear_resize: expected [N,C,H,W]");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_resize: zero output size");
  const Shape& s = input.shape();
  Tensor y({s[0], s[1], out_h, out_w});
  resize_planes(input.data().data(), s[0] * s[1], s[2], s[3], y.data().data(), out_h, out_w,
                align_corners_table(s[2], out_h), align_corners_table(s[3], out_w));
  return y;
}

Var bilinear_upsample(Var input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_upsample");
  const Shape xs = input.shape();
  const std::size_t h = xs[2], w = xs[3];
  if (out_h < h || out_w < w) {
    throw std::invalid_argument("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " smaller than input " + shape_str(xs));
  }
  auto ty = align_corners_table(h, out_h);
  auto tx = align_corners_table(w, out_w);
  Tensor y({xs[0], xs[1], out_h, out_w});
  resize_planes(input.value().data().data(), xs[0] * xs[1], h, w, y.data().data(), out_h, out_w, ty, tx);
  const std::size_t ix = input.id;
  return input.tape->record(OpKind::BilinearUpsample, {ix}, std::move(y),
                            [ix, xs, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const std::size_t h = xs[2], w = xs[3];
    std::vector<double> gx(shape_numel(xs), 0.0);
    for (std::size_t p = 0; p < xs[0] * xs[1]; ++p) {
      const double* g = gy.data().data() + p * out_h * out_w;
      double* d = gx.data() + p * h * w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto [y0, y1, wy] = ty[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto [x0, x1, wx] = tx[ox];
          const double v = g[oy * out_w + ox];
          d[y0 * w + x0] += v * (1 - wy) * (1 - wx);
          d[y0 * w + x1] += v * (1 - wy) * wx;
          d[y1 * w + x0] += v * wy * (1 - wx);
          d[y1 * w + x1] += v * wy * wx;
        }
      }
    }
    t.accumulate(ix, gx);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::Add, {ia, ib}, std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g.data());
    t.accumulate(ib, g.data());
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::Sub, {ia, ib}, std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.accumulate(ia, g.data());
    std::vector<double> neg(g.numel());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g[i];
    t.accumulate(ib, neg);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::Mul, {ia, ib}, std::move(y), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    std::vector<double> ga(g.numel()), gb(g.numel());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var mul_broadcast(Var a, Var b) {
  require_same_tape(a, b, "mul_broadcast");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() + 1 || !std::equal(bs.begin(), bs.end(), as.begin() + 1)) {
    throw std::invalid_argument("mul_broadcast: cannot broadcast " + shape_str(bs) + " over " +
                                shape_str(as));
  }
  const std::size_t inner = b.value().numel();
  const std::size_t outer = as[0];
  Tensor y(as);
  for (std::size_t n = 0; n < outer; ++n)
    for (std::size_t i = 0; i < inner; ++i) y[n * inner + i] = a.value()[n * inner + i] * b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(OpKind::MulBroadcast, {ia, ib}, std::move(y),
                        [ia, ib, inner, outer](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    std::vector<double> ga(g.numel()), gb(inner, 0.0);
    for (std::size_t n = 0; n < outer; ++n) {
      for (std::size_t i = 0; i < inner; ++i) {
        ga[n * inner + i] = g[n * inner + i] * bv[i];
        gb[i] += g[n * inner + i] * av[n * inner + i];
      }
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var scale(Var a, double s) {
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * s;
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::Scale, {ia}, std::move(y), [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::vector<double> ga(g.numel());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * s;
    t.accumulate(ia, ga);
  });
}

Var add_scalar(Var a, double s) {
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + s;
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::AddScalar, {ia}, std::move(y), [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).data());
  });
}

Var sigmoid(Var a) {
  return unary(
      a, OpKind::Sigmoid,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, OpKind::Tanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, OpKind::Relu, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b, std::optional<double> scalar) {
  auto need_b = [&]() -> Var {
    if (!b) throw std::invalid_argument("elementwise: binary op requires a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::Add: return add(a, need_b());
    case ElementwiseOp::Sub: return sub(a, need_b());
    case ElementwiseOp::Mul: return mul(a, need_b());
    case ElementwiseOp::Sigmoid: return sigmoid(a);
    case ElementwiseOp::Tanh: return tanh(a);
    case ElementwiseOp::Relu: return relu(a);
    case ElementwiseOp::Scale:
      if (!scalar) throw std::invalid_argument("elementwise: scale requires a scalar");
      return scale(a, *scalar);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("softmax_channels: expected [N,C,H,W], got " + shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  if (C == 0) throw std::invalid_argument("softmax_channels: zero channels");
  Tensor y(s);
  for (std::size_t n = 0; n < N; ++n) {
    const double* in = x.data().data() + n * C * HW;
    double* out = y.data().data() + n * C * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      double m = in[p];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, in[c * HW + p]);
      double z = 0;
      for (std::size_t c = 0; c < C; ++c) {
        out[c * HW + p] = std::exp(in[c * HW + p] - m);
        z += out[c * HW + p];
      }
      for (std::size_t c = 0; c < C; ++c) out[c * HW + p] /= z;
    }
  }
  return y;
}

Var softmax_channels(Var input) {
  require_rank(input, 4, "softmax_channels");
  Tensor y = softmax_channels(input.value());
  const std::size_t ix = input.id;
  return input.tape->record(OpKind::SoftmaxChannels, {ix}, std::move(y), [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    const Shape& s = yv.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    std::vector<double> gx(yv.numel());
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = n * C * HW;
      for (std::size_t p = 0; p < HW; ++p) {
        double dotgy = 0;
        for (std::size_t c = 0; c < C; ++c) dotgy += g[base + c * HW + p] * yv[base + c * HW + p];
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t k = base + c * HW + p;
          gx[k] = yv[k] * (g[k] - dotgy);
        }
      }
    }
    t.accumulate(ix, gx);
  });
}

Var sum(Var a) {
  double s = 0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  const std::size_t n = a.value().numel();
  return a.tape->record(OpKind::Sum, {ia}, Tensor::scalar(s), [ia, n](Tape& t, std::size_t self) {
    std::vector<double> g(n, t.grad(self)[0]);
    t.accumulate(ia, g);
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                                shape_str(shape));
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::Reshape, {ia}, a.value().reshaped(std::move(shape)),
                        [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self).data()); });
}

Var select(Var a, std::size_t axis, std::size_t index) {
  const Shape& s = a.shape();
  if (axis >= s.size() || index >= s[axis]) {
    throw std::invalid_argument("select: index " + std::to_string(index) + " on axis " +
                                std::to_string(axis) + " out of range for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  Tensor y(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * len + index) * inner, inner, y.data().data() + o * inner);
  const std::size_t ia = a.id;
  const std::size_t total = x.numel();
  return a.tape->record(OpKind::Select, {ia}, std::move(y),
                        [ia, outer, inner, len, index, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto buf = t.grad_buffer(ia);
    if (buf.size() != total) throw std::logic_error("select: gradient size mismatch");
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) buf[(o * len + index) * inner + i] += g[o * inner + i];
  });
}

Var stack(const std::vector<Var>& vars, std::size_t axis) {
  if (vars.empty()) throw std::invalid_argument("stack: no inputs");
  const Shape& s = vars[0].shape();
  if (axis > s.size()) throw std::invalid_argument("stack: axis out of range");
  for (const auto& v : vars) require_same_shape(vars[0], v, "stack");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = vars.size();
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<long>(axis), len);
  Tensor y(out_shape);
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < len; ++k) {
    ids.push_back(vars[k].id);
    const Tensor& x = vars[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().data() + o * inner, inner, y.data().data() + (o * len + k) * inner);
  }
  return vars[0].tape->record(OpKind::Stack, ids, std::move(y),
                              [ids, outer, inner, len](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::vector<double> gk(outer * inner);
    for (std::size_t k = 0; k < len; ++k) {
      if (!t.requires_grad(ids[k])) continue;
      for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(g.data().data() + (o * len + k) * inner, inner, gk.data() + o * inner);
      t.accumulate(ids[k], gk);
    }
  });
}

Var channels_last(Var input) {
  require_rank(input, 4, "channels_last");
  const Shape s = input.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor y({N * HW, C});
  const Tensor& x = input.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) y[(n * HW + p) * C + c] = x[(n * C + c) * HW + p];
  const std::size_t ix = input.id;
  return input.tape->record(OpKind::ChannelsLast, {ix}, std::move(y), [ix, N, C, HW](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::vector<double> gx(g.numel());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < HW; ++p) gx[(n * C + c) * HW + p] = g[(n * HW + p) * C + c];
    t.accumulate(ix, gx);
  });
}

}  // namespace ssk
