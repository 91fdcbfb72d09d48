#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "siseg/tensor.hpp"

// Convolutional network building blocks on (N, C, spatial...) tensors,
// rank 4 for dims == 2 and rank 5 for dims == 3. Convolutions use the
// cross-correlation convention (no kernel flip). Internally everything is
// canonicalized to (N, C, D, H, W) with D = 1 in the 2D case, so both
// ranks share one code path; the spatially innermost loops run over
// contiguous rows.

namespace siseg::nn {

namespace detail {

struct ConvGeom {
  std::size_t batch = 1, cin = 1, cout = 1;
  std::array<std::size_t, 3> in{1, 1, 1};      // XD, XH, XW
  std::array<std::size_t, 3> kn{1, 1, 1};      // KD, KH, KW
  std::array<std::size_t, 3> out{1, 1, 1};     // OD, OH, OW
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
};

inline void check_rank(const std::vector<std::size_t>& shape, int dims, const char* what) {
  if (dims != 2 && dims != 3)
    throw ShapeMismatch(std::string(what) + ": dims must be 2 or 3");
  if (shape.size() != static_cast<std::size_t>(dims) + 2)
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(dims + 2) +
                        ", got " + shape_string(shape));
}

// Output index range [lo, hi] (inclusive) on one axis for kernel offset k:
// all o in [0, O) with 0 <= o*s + k - p < X. Returns false when empty.
inline bool tap_range(std::size_t O, std::size_t X, std::size_t k, std::size_t s,
                      std::size_t p, std::size_t& lo, std::size_t& hi) {
  const std::int64_t lo_num = static_cast<std::int64_t>(p) - static_cast<std::int64_t>(k);
  lo = lo_num <= 0 ? 0
                   : static_cast<std::size_t>((lo_num + static_cast<std::int64_t>(s) - 1) /
                                              static_cast<std::int64_t>(s));
  const std::int64_t hi_num = static_cast<std::int64_t>(X) - 1 -
                              static_cast<std::int64_t>(k) + static_cast<std::int64_t>(p);
  if (hi_num < 0) return false;
  hi = std::min(O - 1, static_cast<std::size_t>(hi_num / static_cast<std::int64_t>(s)));
  return lo <= hi;
}

// out[ow] += sum_j w[j] * in[ow + j - p] for ow in [0, n_out), taps clipped
// to [0, n_in). Stride-1 rows only; the interior (all taps valid) runs in
// one fused pass, edges tap by tap.
template <typename T>
void fused_row(T* out, const T* in, const T* w, std::size_t taps, std::ptrdiff_t p,
               std::ptrdiff_t n_out, std::ptrdiff_t n_in) {
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, std::min(p, n_out));
  std::ptrdiff_t hi = std::min(n_out - 1, n_in - static_cast<std::ptrdiff_t>(taps) + p);
  const std::ptrdiff_t right_start = std::max(hi + 1, lo);
  auto edge = [&](std::ptrdiff_t from, std::ptrdiff_t to) {
    for (std::ptrdiff_t ow = from; ow < to; ++ow)
      for (std::size_t j = 0; j < taps; ++j) {
        const std::ptrdiff_t ix = ow + static_cast<std::ptrdiff_t>(j) - p;
        if (ix >= 0 && ix < n_in) out[ow] += w[j] * in[ix];
      }
  };
  edge(0, lo);
  if (taps == 3) {
    const T w0 = w[0], w1 = w[1], w2 = w[2];
    const T* a = in - p;
    for (std::ptrdiff_t ow = lo; ow <= hi; ++ow)
      out[ow] += w0 * a[ow] + w1 * a[ow + 1] + w2 * a[ow + 2];
  } else if (taps == 1) {
    const T w0 = w[0];
    const T* a = in - p;
    for (std::ptrdiff_t ow = lo; ow <= hi; ++ow) out[ow] += w0 * a[ow];
  } else {
    const T* a = in - p;
    for (std::ptrdiff_t ow = lo; ow <= hi; ++ow) {
      T acc = out[ow];
      for (std::size_t j = 0; j < taps; ++j) acc += w[j] * a[ow + static_cast<std::ptrdiff_t>(j)];
      out[ow] = acc;
    }
  }
  edge(right_start, n_out);
}

// Four parallel accumulator chains; fixed summation order keeps results
// reproducible run to run.
template <typename T>
T dot_rows(const T* a, const T* b, std::size_t n) {
  T s0(0), s1(0), s2(0), s3(0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  T s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void conv_forward_kernel(const T* x, const T* k, T* out, const ConvGeom& g) {
  const std::size_t xplane = g.in[0] * g.in[1] * g.in[2];
  const std::size_t oplane = g.out[0] * g.out[1] * g.out[2];
  const std::size_t ksz = g.kn[0] * g.kn[1] * g.kn[2];
  const bool unit_w_stride = g.stride[2] == 1;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* op = out + (n * g.cout + co) * oplane;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* xp = x + (n * g.cin + ci) * xplane;
        const T* kp = k + (co * g.cin + ci) * ksz;
        for (std::size_t kd = 0; kd < g.kn[0]; ++kd) {
          std::size_t dlo, dhi;
          if (!tap_range(g.out[0], g.in[0], kd, g.stride[0], g.pad[0], dlo, dhi)) continue;
          for (std::size_t kh = 0; kh < g.kn[1]; ++kh) {
            std::size_t hlo, hhi;
            if (!tap_range(g.out[1], g.in[1], kh, g.stride[1], g.pad[1], hlo, hhi)) continue;
            const T* wrow = kp + (kd * g.kn[1] + kh) * g.kn[2];
            for (std::size_t od = dlo; od <= dhi; ++od) {
              const std::size_t id = od * g.stride[0] + kd - g.pad[0];
              for (std::size_t oh = hlo; oh <= hhi; ++oh) {
                const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                const T* xrow = xp + (id * g.in[1] + ih) * g.in[2];
                T* orow = op + (od * g.out[1] + oh) * g.out[2];
                if (unit_w_stride) {
                  fused_row(orow, xrow, wrow, g.kn[2],
                            static_cast<std::ptrdiff_t>(g.pad[2]),
                            static_cast<std::ptrdiff_t>(g.out[2]),
                            static_cast<std::ptrdiff_t>(g.in[2]));
                } else {
                  for (std::size_t kw = 0; kw < g.kn[2]; ++kw) {
                    std::size_t wlo, whi;
                    if (!tap_range(g.out[2], g.in[2], kw, g.stride[2], g.pad[2], wlo, whi))
                      continue;
                    const T wv = wrow[kw];
                    const std::ptrdiff_t off =
                        static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad[2]);
                    for (std::size_t ow = wlo; ow <= whi; ++ow)
                      orow[ow] += wv * xrow[static_cast<std::ptrdiff_t>(ow * g.stride[2]) + off];
                  }
                }
              }
            }
          }
        }
      }
    }
}

template <typename T>
void conv_backward_kernel(const T* x, T* dx, const T* k, T* dk, const T* dout,
                          const ConvGeom& g) {
  const std::size_t xplane = g.in[0] * g.in[1] * g.in[2];
  const std::size_t oplane = g.out[0] * g.out[1] * g.out[2];
  const std::size_t ksz = g.kn[0] * g.kn[1] * g.kn[2];
  const bool unit_w_stride = g.stride[2] == 1;
  const std::size_t KW = g.kn[2];
  std::vector<T> wrev(KW), dkrow(KW);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* gp = dout + (n * g.cout + co) * oplane;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* xp = x + (n * g.cin + ci) * xplane;
        T* dxp = dx + (n * g.cin + ci) * xplane;
        const T* kp = k + (co * g.cin + ci) * ksz;
        T* dkp = dk + (co * g.cin + ci) * ksz;
        for (std::size_t kd = 0; kd < g.kn[0]; ++kd) {
          std::size_t dlo, dhi;
          if (!tap_range(g.out[0], g.in[0], kd, g.stride[0], g.pad[0], dlo, dhi)) continue;
          for (std::size_t kh = 0; kh < g.kn[1]; ++kh) {
            std::size_t hlo, hhi;
            if (!tap_range(g.out[1], g.in[1], kh, g.stride[1], g.pad[1], hlo, hhi)) continue;
            const T* wrow = kp + (kd * g.kn[1] + kh) * g.kn[2];
            if (unit_w_stride) {
              // dx[ix] += sum_kw w[kw]*g[ix - kw + p] is another stride-1
              // correlation with the taps reversed and pad KW-1-p.
              for (std::size_t j = 0; j < KW; ++j) wrev[j] = wrow[KW - 1 - j];
              std::fill(dkrow.begin(), dkrow.end(), T(0));
              for (std::size_t od = dlo; od <= dhi; ++od) {
                const std::size_t id = od * g.stride[0] + kd - g.pad[0];
                for (std::size_t oh = hlo; oh <= hhi; ++oh) {
                  const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                  const T* xrow = xp + (id * g.in[1] + ih) * g.in[2];
                  T* dxrow = dxp + (id * g.in[1] + ih) * g.in[2];
                  const T* grow = gp + (od * g.out[1] + oh) * g.out[2];
                  fused_row(dxrow, grow, wrev.data(), KW,
                            static_cast<std::ptrdiff_t>(KW) - 1 -
                                static_cast<std::ptrdiff_t>(g.pad[2]),
                            static_cast<std::ptrdiff_t>(g.in[2]),
                            static_cast<std::ptrdiff_t>(g.out[2]));
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    std::size_t wlo, whi;
                    if (!tap_range(g.out[2], g.in[2], kw, 1, g.pad[2], wlo, whi)) continue;
                    const std::ptrdiff_t off =
                        static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad[2]);
                    dkrow[kw] += dot_rows(grow + wlo, xrow + static_cast<std::ptrdiff_t>(wlo) + off,
                                          whi - wlo + 1);
                  }
                }
              }
              for (std::size_t kw = 0; kw < KW; ++kw)
                dkp[(kd * g.kn[1] + kh) * KW + kw] += dkrow[kw];
            } else {
              for (std::size_t kw = 0; kw < KW; ++kw) {
                std::size_t wlo, whi;
                if (!tap_range(g.out[2], g.in[2], kw, g.stride[2], g.pad[2], wlo, whi)) continue;
                const T wv = wrow[kw];
                const std::ptrdiff_t off =
                    static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad[2]);
                T acc(0);
                for (std::size_t od = dlo; od <= dhi; ++od) {
                  const std::size_t id = od * g.stride[0] + kd - g.pad[0];
                  for (std::size_t oh = hlo; oh <= hhi; ++oh) {
                    const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                    const T* xrow = xp + (id * g.in[1] + ih) * g.in[2];
                    T* dxrow = dxp + (id * g.in[1] + ih) * g.in[2];
                    const T* grow = gp + (od * g.out[1] + oh) * g.out[2];
                    for (std::size_t ow = wlo; ow <= whi; ++ow) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(ow * g.stride[2]) + off;
                      dxrow[ix] += wv * grow[ow];
                      acc += xrow[ix] * grow[ow];
                    }
                  }
                }
                dkp[(kd * g.kn[1] + kh) * KW + kw] += acc;
              }
            }
          }
        }
      }
    }
}

}  // namespace detail

/// Cross-correlation of x (N, C, spatial...) with kernels k
/// (Cout, Cin, k-spatial...). Output extent per axis is
/// (X + 2*padding - K) / stride + 1.
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride,
               std::size_t padding, int dims) {
  detail::check_rank(x.shape(), dims, "conv input");
  detail::check_rank(k.shape(), dims, "conv kernel");
  if (x.shape()[1] != k.shape()[1])
    throw ShapeMismatch("conv: input channels " + std::to_string(x.shape()[1]) +
                        " != kernel channels " + std::to_string(k.shape()[1]));
  if (stride < 1) throw ShapeMismatch("conv: stride must be >= 1");

  detail::ConvGeom g;
  g.batch = x.shape()[0];
  g.cin = x.shape()[1];
  g.cout = k.shape()[0];
  const int spatial = dims;
  for (int a = 0; a < spatial; ++a) {
    const int slot = a + (3 - spatial);  // right-align: (d,)h,w
    g.in[slot] = x.shape()[2 + a];
    g.kn[slot] = k.shape()[2 + a];
    g.stride[slot] = stride;
    g.pad[slot] = padding;
    if (g.in[slot] + 2 * padding < g.kn[slot])
      throw ShapeMismatch("conv: kernel larger than padded input on axis " + std::to_string(a));
    g.out[slot] = (g.in[slot] + 2 * padding - g.kn[slot]) / stride + 1;
  }

  std::vector<std::size_t> out_shape{g.batch, g.cout};
  for (int a = 0; a < spatial; ++a) out_shape.push_back(g.out[a + (3 - spatial)]);

  auto xn = x.node(), kn = k.node();
  auto out = Tensor<T>::make_op(std::move(out_shape), {xn, kn}, [xn, kn, g](auto& o) {
    detail::conv_backward_kernel(xn->values.data(), xn->grad.data(), kn->values.data(),
                                 kn->grad.data(), o.grad.data(), g);
  });
  detail::conv_forward_kernel(xn->values.data(), kn->values.data(), out.values().data(), g);
  return out;
}

/// Adds a per-channel bias b (C) to x (N, C, spatial...).
template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape().size() < 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
    throw ShapeMismatch("bias_add: bias " + shape_string(b.shape()) + " does not match " +
                        shape_string(x.shape()));
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t plane = x.size() / (batch * ch);
  auto xn = x.node(), bn = b.node();
  auto out = Tensor<T>::make_op(x.shape(), {xn, bn}, [xn, bn, batch, ch, plane](auto& o) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c) {
        const T* g = o.grad.data() + (n * ch + c) * plane;
        T* dx = xn->grad.data() + (n * ch + c) * plane;
        T acc(0);
        for (std::size_t i = 0; i < plane; ++i) {
          dx[i] += g[i];
          acc += g[i];
        }
        bn->grad[c] += acc;
      }
  });
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* src = xn->values.data() + (n * ch + c) * plane;
      T* dst = out.values().data() + (n * ch + c) * plane;
      const T bv = bn->values[c];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bv;
    }
  return out;
}

/// Max pooling with window == stride. Output extent is floor(X / window);
/// ties within a window route the gradient to the first (lowest-index)
/// maximal element.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, std::size_t window, int dims) {
  detail::check_rank(x.shape(), dims, "maxpool input");
  if (window < 1) throw ShapeMismatch("maxpool: window must be >= 1");
  const std::size_t batch = x.shape()[0], ch = x.shape()[1];
  const std::size_t XD = dims == 3 ? x.shape()[2] : 1;
  const std::size_t XH = x.shape()[dims == 3 ? 3 : 2];
  const std::size_t XW = x.shape()[dims == 3 ? 4 : 3];
  const std::size_t wd = dims == 3 ? window : 1;
  if (XD < wd || XH < window || XW < window)
    throw ShapeMismatch("maxpool: window larger than input");
  const std::size_t OD = XD / wd, OH = XH / window, OW = XW / window;

  std::vector<std::size_t> out_shape{batch, ch};
  if (dims == 3) out_shape.push_back(OD);
  out_shape.push_back(OH);
  out_shape.push_back(OW);

  auto xn = x.node();
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  auto out = Tensor<T>::make_op(std::move(out_shape), {xn}, [xn, argmax](auto& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      xn->grad[(*argmax)[i]] += o.grad[i];
  });

  argmax->resize(out.size());
  const std::size_t xplane = XD * XH * XW;
  std::size_t oi = 0;
  for (std::size_t nc = 0; nc < batch * ch; ++nc) {
    const T* xp = xn->values.data() + nc * xplane;
    for (std::size_t od = 0; od < OD; ++od)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow, ++oi) {
          T best = T(0);
          std::size_t besti = 0;
          bool first = true;
          for (std::size_t id = od * wd; id < od * wd + wd; ++id)
            for (std::size_t ih = oh * window; ih < (oh + 1) * window; ++ih)
              for (std::size_t iw = ow * window; iw < (ow + 1) * window; ++iw) {
                const std::size_t xi = (id * XH + ih) * XW + iw;
                if (first || xp[xi] > best) {
                  best = xp[xi];
                  besti = xi;
                  first = false;
                }
              }
          out.values()[oi] = best;
          (*argmax)[oi] = nc * xplane + besti;
        }
  }
  return out;
}

/// Transposed convolution of x (N, Cin, spatial...) with kernels k
/// (Cin, Cout, k-spatial...). Output extent per axis is (X - 1)*stride + K.
template <typename T>
Tensor<T> upconv(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, int dims) {
  detail::check_rank(x.shape(), dims, "upconv input");
  detail::check_rank(k.shape(), dims, "upconv kernel");
  if (x.shape()[1] != k.shape()[0])
    throw ShapeMismatch("upconv: input channels " + std::to_string(x.shape()[1]) +
                        " != kernel input channels " + std::to_string(k.shape()[0]));
  if (stride < 1) throw ShapeMismatch("upconv: stride must be >= 1");

  const std::size_t batch = x.shape()[0], cin = x.shape()[1], cout = k.shape()[1];
  std::array<std::size_t, 3> X{1, 1, 1}, K{1, 1, 1}, O{1, 1, 1}, S{1, 1, 1};
  for (int a = 0; a < dims; ++a) {
    const int slot = a + (3 - dims);
    X[slot] = x.shape()[2 + a];
    K[slot] = k.shape()[2 + a];
    S[slot] = stride;
    O[slot] = (X[slot] - 1) * stride + K[slot];
  }

  std::vector<std::size_t> out_shape{batch, cout};
  for (int a = 0; a < dims; ++a) out_shape.push_back(O[a + (3 - dims)]);

  const std::size_t xplane = X[0] * X[1] * X[2];
  const std::size_t oplane = O[0] * O[1] * O[2];
  const std::size_t ksz = K[0] * K[1] * K[2];

  auto xn = x.node(), kn = k.node();
  auto out = Tensor<T>::make_op(
      std::move(out_shape), {xn, kn},
      [xn, kn, batch, cin, cout, X, K, O, S, xplane, oplane, ksz](auto& o) {
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xp = xn->values.data() + (n * cin + ci) * xplane;
            T* dxp = xn->grad.data() + (n * cin + ci) * xplane;
            for (std::size_t co = 0; co < cout; ++co) {
              const T* gp = o.grad.data() + (n * cout + co) * oplane;
              const T* kp = kn->values.data() + (ci * cout + co) * ksz;
              T* dkp = kn->grad.data() + (ci * cout + co) * ksz;
              for (std::size_t kd = 0; kd < K[0]; ++kd)
                for (std::size_t kh = 0; kh < K[1]; ++kh)
                  for (std::size_t kw = 0; kw < K[2]; ++kw) {
                    const T wv = kp[(kd * K[1] + kh) * K[2] + kw];
                    T acc(0);
                    for (std::size_t id = 0; id < X[0]; ++id)
                      for (std::size_t ih = 0; ih < X[1]; ++ih) {
                        const T* xrow = xp + (id * X[1] + ih) * X[2];
                        T* dxrow = dxp + (id * X[1] + ih) * X[2];
                        const T* grow = gp + ((id * S[0] + kd) * O[1] + ih * S[1] + kh) * O[2] + kw;
                        for (std::size_t iw = 0; iw < X[2]; ++iw) {
                          const T gv = grow[iw * S[2]];
                          dxrow[iw] += wv * gv;
                          acc += xrow[iw] * gv;
                        }
                      }
                    dkp[(kd * K[1] + kh) * K[2] + kw] += acc;
                  }
            }
          }
      });

  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xp = xn->values.data() + (n * cin + ci) * xplane;
      for (std::size_t co = 0; co < cout; ++co) {
        T* op = out.values().data() + (n * cout + co) * oplane;
        const T* kp = kn->values.data() + (ci * cout + co) * ksz;
        for (std::size_t kd = 0; kd < K[0]; ++kd)
          for (std::size_t kh = 0; kh < K[1]; ++kh)
            for (std::size_t kw = 0; kw < K[2]; ++kw) {
              const T wv = kp[(kd * K[1] + kh) * K[2] + kw];
              for (std::size_t id = 0; id < X[0]; ++id)
                for (std::size_t ih = 0; ih < X[1]; ++ih) {
                  const T* xrow = xp + (id * X[1] + ih) * X[2];
                  T* orow = op + ((id * S[0] + kd) * O[1] + ih * S[1] + kh) * O[2] + kw;
                  for (std::size_t iw = 0; iw < X[2]; ++iw)
                    orow[iw * S[2]] += wv * xrow[iw];
                }
            }
      }
    }
  return out;
}

/// Concatenates along the channel axis (axis 1); all other extents must
/// agree.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != b.shape().size() || a.shape().size() < 2)
    throw ShapeMismatch("concat: rank mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (i != 1 && a.shape()[i] != b.shape()[i])
      throw ShapeMismatch("concat: extents differ outside the channel axis: " +
                          shape_string(a.shape()) + " vs " + shape_string(b.shape()));

  const std::size_t batch = a.shape()[0];
  const std::size_t ca = a.shape()[1], cb = b.shape()[1];
  const std::size_t plane = a.size() / (batch * ca);
  std::vector<std::size_t> out_shape = a.shape();
  out_shape[1] = ca + cb;

  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(std::move(out_shape), {an, bn},
                                [an, bn, batch, ca, cb, plane](auto& o) {
    const std::size_t ablock = ca * plane, bblock = cb * plane;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* g = o.grad.data() + n * (ablock + bblock);
      T* da = an->grad.data() + n * ablock;
      T* db = bn->grad.data() + n * bblock;
      for (std::size_t i = 0; i < ablock; ++i) da[i] += g[i];
      for (std::size_t i = 0; i < bblock; ++i) db[i] += g[ablock + i];
    }
  });
  const std::size_t ablock = ca * plane, bblock = cb * plane;
  for (std::size_t n = 0; n < batch; ++n) {
    T* dst = out.values().data() + n * (ablock + bblock);
    std::copy_n(an->values.data() + n * ablock, ablock, dst);
    std::copy_n(bn->values.data() + n * bblock, bblock, dst + ablock);
  }
  return out;
}

/// Equal-weighted soft-Dice + binary cross-entropy:
///   0.5 * (1 - (2*sum(p*t) + 1e-6) / (sum(p) + sum(t) + 1e-6))
/// + 0.5 * mean(-t*log(max(p, 1e-7)) - (1-t)*log(max(1-p, 1e-7)))
/// Gradients flow into pred only; target is treated as data.
template <typename T>
Tensor<T> dice_bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check_same_shape(pred, target, "dice_bce_loss");
  static constexpr double kDiceEps = 1e-6;
  static constexpr double kLogClamp = 1e-7;

  auto pn = pred.node(), tn = target.node();
  const std::size_t m = pred.size();

  double sum_p = 0.0, sum_t = 0.0, sum_pt = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = pn->values[i];
    const double t = tn->values[i];
    sum_p += p;
    sum_t += t;
    sum_pt += p * t;
    bce += -t * std::log(std::max(p, kLogClamp)) -
           (1.0 - t) * std::log(std::max(1.0 - p, kLogClamp));
  }
  const double denom = sum_p + sum_t + kDiceEps;
  const double numer = 2.0 * sum_pt + kDiceEps;
  const double dice = 1.0 - numer / denom;
  bce /= static_cast<double>(m);

  auto out = Tensor<T>::make_op({1}, {pn, tn}, [pn, tn, m, numer, denom](auto& o) {
    const double g = static_cast<double>(o.grad[0]);
    const double inv_m = 1.0 / static_cast<double>(m);
    const double denom2 = denom * denom;
    for (std::size_t i = 0; i < m; ++i) {
      const double p = pn->values[i];
      const double t = tn->values[i];
      const double d_dice = -(2.0 * t * denom - numer) / denom2;
      double d_bce = 0.0;
      if (p > kLogClamp) d_bce -= t / p;
      if (1.0 - p > kLogClamp) d_bce += (1.0 - t) / (1.0 - p);
      pn->grad[i] += static_cast<T>(g * 0.5 * (d_dice + d_bce * inv_m));
    }
  });
  out.values()[0] = static_cast<T>(0.5 * dice + 0.5 * bce);
  return out;
}

}  // namespace siseg::nn
