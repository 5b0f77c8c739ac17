#pragma once

#include <Eigen/Core>

#include "tensor.hpp"

namespace sfpn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unpacks one batch item into a (inC*kH*kW) x (outH*outW) column matrix.
template <class T>
void im2col(const T* src, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, T* col) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + (std::int64_t(ci) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            dst += ow;
            continue;
          }
          const T* row = src + (std::int64_t(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            *dst++ = (ix >= 0 && ix < w) ? row[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto the input gradient.
template <class T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride,
                int pad, int oh, int ow, T* dst) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + (std::int64_t(ci) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            src += ow;
            continue;
          }
          T* row = dst + (std::int64_t(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox, ++src) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) row[ix] += *src;
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, zero padding, square stride. weight is [outC,inC,kH,kW],
// bias is a 1 x outC x 1 x 1 tensor. Differentiable w.r.t. input, weight
// and bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad) {
  const Shape4& is = input.shape();
  const Shape4& ws = weight.shape();
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (pad < 0) throw ArgumentError("conv2d: padding must be >= 0");
  if (is[1] != ws[1])
    throw ArgumentError("conv2d: input has " + std::to_string(is[1]) +
                        " channels but weight expects " + std::to_string(ws[1]));
  if (bias.shape() != Shape4{1, ws[0], 1, 1})
    throw ArgumentError("conv2d: bias shape must be 1x" +
                        std::to_string(ws[0]) + "x1x1");
  const int n = is[0], c = is[1], h = is[2], w = is[3];
  const int oc = ws[0], kh = ws[2], kw = ws[3];
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw || oh < 1 || ow < 1)
    throw ArgumentError("conv2d: non-positive output size for input " +
                        shape_str(is) + " and kernel " + shape_str(ws));

  const std::int64_t k = std::int64_t(c) * kh * kw;
  const std::int64_t hw = std::int64_t(oh) * ow;
  std::vector<T> out(size_t(n) * oc * hw);
  std::vector<T> col(size_t(k) * hw);
  Eigen::Map<const detail::RowMat<T>> wmat(weight.data().data(), oc, k);
  for (int b = 0; b < n; ++b) {
    detail::im2col(input.data().data() + std::int64_t(b) * c * h * w, c, h, w,
                   kh, kw, stride, pad, oh, ow, col.data());
    Eigen::Map<const detail::RowMat<T>> cmat(col.data(), k, hw);
    Eigen::Map<detail::RowMat<T>> omat(out.data() + std::int64_t(b) * oc * hw,
                                       oc, hw);
    omat.noalias() = wmat * cmat;
    for (int o = 0; o < oc; ++o)
      omat.row(o).array() += bias.data()[size_t(o)];
  }

  auto in_n = input.node_ptr();
  auto w_n = weight.node_ptr();
  auto b_n = bias.node_ptr();
  return make_op_result<T>(
      {n, oc, oh, ow}, std::move(out), {input, weight, bias},
      [=](TensorNode<T>& self) {
        // The column matrix is recomputed here rather than cached from the
        // forward pass; memory stays flat over deep graphs.
        std::vector<T> col(size_t(k) * hw);
        Eigen::Map<const detail::RowMat<T>> wmat(w_n->value.data(), oc, k);
        const bool need_in = in_n->requires_grad;
        const bool need_w = w_n->requires_grad;
        const bool need_b = b_n->requires_grad;
        if (need_in) in_n->ensure_grad();
        if (need_w) w_n->ensure_grad();
        if (need_b) b_n->ensure_grad();
        std::vector<T> colgrad(need_in ? size_t(k) * hw : 0);
        for (int b = 0; b < n; ++b) {
          Eigen::Map<const detail::RowMat<T>> gmat(
              self.grad.data() + std::int64_t(b) * oc * hw, oc, hw);
          if (need_w || need_in)
            detail::im2col(in_n->value.data() + std::int64_t(b) * c * h * w, c,
                           h, w, kh, kw, stride, pad, oh, ow, col.data());
          if (need_w) {
            Eigen::Map<const detail::RowMat<T>> cmat(col.data(), k, hw);
            Eigen::Map<detail::RowMat<T>> wg(w_n->grad.data(), oc, k);
            wg.noalias() += gmat * cmat.transpose();
          }
          if (need_b) {
            for (int o = 0; o < oc; ++o)
              b_n->grad[size_t(o)] += gmat.row(o).sum();
          }
          if (need_in) {
            Eigen::Map<detail::RowMat<T>> cg(colgrad.data(), k, hw);
            cg.noalias() = wmat.transpose() * gmat;
            detail::col2im_add(colgrad.data(), c, h, w, kh, kw, stride, pad,
                               oh, ow,
                               in_n->grad.data() + std::int64_t(b) * c * h * w);
          }
        }
      },
      "conv2d");
}

// Bilinear resize with half-pixel centers:
//   src = (dst + 0.5) * srcSize / dstSize - 0.5, clamped to [0, srcSize-1].
// Resizing to the source size is exact identity. Backward scatter-adds the
// same four-neighbor weights.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w) {
  const Shape4& is = input.shape();
  if (out_h < 1 || out_w < 1)
    throw ArgumentError("bilinear_resize: target size must be >= 1");
  const int n = is[0], c = is[1], h = is[2], w = is[3];

  struct Tap {
    int lo, hi;
    T w_lo, w_hi;
  };
  auto make_taps = [](int src, int dst) {
    std::vector<Tap> taps;
    taps.resize(size_t(dst));
    for (int d = 0; d < dst; ++d) {
      double x = (d + 0.5) * double(src) / double(dst) - 0.5;
      x = std::min(std::max(x, 0.0), double(src - 1));
      int lo = int(std::floor(x));
      int hi = std::min(lo + 1, src - 1);
      T f = T(x - lo);
      taps[size_t(d)] = {lo, hi, T(1) - f, f};
    }
    return taps;
  };
  auto ty = make_taps(h, out_h);
  auto tx = make_taps(w, out_w);

  std::vector<T> out(size_t(n) * c * out_h * out_w);
  const T* src = input.data().data();
  T* dst = out.data();
  for (std::int64_t plane = 0; plane < std::int64_t(n) * c; ++plane) {
    const T* sp = src + plane * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[size_t(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[size_t(ox)];
        *dst++ = a.w_lo * (b.w_lo * sp[a.lo * w + b.lo] +
                           b.w_hi * sp[a.lo * w + b.hi]) +
                 a.w_hi * (b.w_lo * sp[a.hi * w + b.lo] +
                           b.w_hi * sp[a.hi * w + b.hi]);
      }
    }
  }

  auto in_n = input.node_ptr();
  return make_op_result<T>(
      {n, c, out_h, out_w}, std::move(out), {input},
      [=](TensorNode<T>& self) {
        in_n->ensure_grad();
        const T* g = self.grad.data();
        for (std::int64_t plane = 0; plane < std::int64_t(n) * c; ++plane) {
          T* gp = in_n->grad.data() + plane * h * w;
          for (int oy = 0; oy < out_h; ++oy) {
            const Tap& a = ty[size_t(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
              const Tap& b = tx[size_t(ox)];
              T gv = *g++;
              gp[a.lo * w + b.lo] += gv * a.w_lo * b.w_lo;
              gp[a.lo * w + b.hi] += gv * a.w_lo * b.w_hi;
              gp[a.hi * w + b.lo] += gv * a.w_hi * b.w_lo;
              gp[a.hi * w + b.hi] += gv * a.w_hi * b.w_hi;
            }
          }
        }
      },
      "bilinear_resize");
}

}  // namespace sfpn
