#pragma once

#include <cstdint>
#include <string>

#include "ssk/rng.hpp"
#include "ssk/tensor.hpp"

namespace ssk::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Parameter random_param(std::string name, Shape shape, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  return Parameter{std::move(name), "test", random_tensor(std::move(shape), rng, lo, hi), std::nullopt};
}

// Brute-force direct cross-correlation used as the conv2d oracle. Padding is
// given explicitly so the oracle shares no geometry code with the library.
inline Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride,
                          std::size_t dilation, std::size_t pad_top, std::size_t pad_left,
                          std::size_t out_h, std::size_t out_w) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  Tensor y({xs[0], ws[0], out_h, out_w});
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t co = 0; co < ws[0]; ++co)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          double s = b ? (*b)[co] : 0.0;
          for (std::size_t ci = 0; ci < xs[1]; ++ci)
            for (std::size_t i = 0; i < ws[2]; ++i)
              for (std::size_t j = 0; j < ws[3]; ++j) {
                const long iy = long(oy * stride + i * dilation) - long(pad_top);
                const long ix = long(ox * stride + j * dilation) - long(pad_left);
                if (iy < 0 || ix < 0 || iy >= long(xs[2]) || ix >= long(xs[3])) continue;
                s += w.at(co, ci, i, j) * x.at(n, ci, std::size_t(iy), std::size_t(ix));
              }
          y.at(n, co, oy, ox) = s;
        }
  return y;
}

}  // namespace ssk::test
