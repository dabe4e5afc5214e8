#pragma once

#include <algorithm>
#include <utility>

#include "kbsr/core/tensor.hpp"

namespace kbsr {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Geometry of a strided, zero-padded convolution mapping
/// (c_in, h_in, w_in) -> (c_out, h_out, w_out) with a (kh, kw) kernel.
struct ConvGeom {
  Eigen::Index c_in = 0, h_in = 0, w_in = 0;
  Eigen::Index c_out = 0, kh = 0, kw = 0;
  Eigen::Index stride = 1, pad = 0;
  Eigen::Index h_out = 0, w_out = 0;

  Eigen::Index patch() const { return c_in * kh * kw; }
};

inline ConvGeom conv_geometry(const Shape& in, const Shape& weight, Eigen::Index stride,
                              Eigen::Index pad) {
  if (in.size() != 3 || weight.size() != 4)
    throw std::invalid_argument("conv: input must be rank 3, weight rank 4");
  ConvGeom g;
  g.c_in = in[0];
  g.h_in = in[1];
  g.w_in = in[2];
  g.c_out = weight[0];
  g.kh = weight[2];
  g.kw = weight[3];
  g.stride = stride;
  g.pad = pad;
  if (weight[1] != g.c_in)
    throw std::invalid_argument("conv: weight expects " + std::to_string(weight[1]) +
                                " input channels, got " + std::to_string(g.c_in));
  g.h_out = (g.h_in + 2 * pad - g.kh) / stride + 1;
  g.w_out = (g.w_in + 2 * pad - g.kw) / stride + 1;
  if (g.h_out < 1 || g.w_out < 1) throw std::invalid_argument("conv: kernel larger than input");
  return g;
}

/// Half-open range of output positions whose tap (offset, stride, pad) lands
/// inside [0, n_in): valid x satisfy 0 <= x*stride + offset - pad < n_in.
/// Clamped so lo <= hi and both lie in [0, n_out].
inline std::pair<Eigen::Index, Eigen::Index> tap_span(Eigen::Index offset, const ConvGeom& g,
                                                      Eigen::Index n_in, Eigen::Index n_out) {
  const Eigen::Index bias = offset - g.pad;
  Eigen::Index lo = bias < 0 ? (-bias + g.stride - 1) / g.stride : 0;
  Eigen::Index hi = n_in > bias ? (n_in - bias + g.stride - 1) / g.stride : 0;
  lo = std::min(lo, n_out);
  hi = std::clamp(hi, lo, n_out);
  return {lo, hi};
}

/// Gather receptive fields into an (h_out*w_out) x (c_in*kh*kw) matrix;
/// out-of-bounds taps read zero (zero padding). In-bounds spans are copied
/// without per-element tests; stride 1 degenerates to straight memcpy rows.
template <class Scalar>
Mat<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeom& g) {
  Mat<Scalar> cols(g.h_out * g.w_out, g.patch());
  for (Eigen::Index c = 0; c < g.c_in; ++c)
    for (Eigen::Index i = 0; i < g.kh; ++i) {
      const auto [y_lo, y_hi] = tap_span(i, g, g.h_in, g.h_out);
      for (Eigen::Index j = 0; j < g.kw; ++j) {
        const Eigen::Index q = (c * g.kh + i) * g.kw + j;
        Scalar* col = cols.col(q).data();
        const auto [x_lo, x_hi] = tap_span(j, g, g.w_in, g.w_out);
        std::fill(col, col + y_lo * g.w_out, Scalar(0));
        for (Eigen::Index y = y_lo; y < y_hi; ++y) {
          const Eigen::Index sy = y * g.stride + i - g.pad;
          Scalar* row = col + y * g.w_out;
          const Scalar* src = x.data() + (c * g.h_in + sy) * g.w_in;
          std::fill(row, row + x_lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + x_lo + j - g.pad, src + x_hi + j - g.pad, row + x_lo);
          } else {
            for (Eigen::Index x2 = x_lo; x2 < x_hi; ++x2)
              row[x2] = src[x2 * g.stride + j - g.pad];
          }
          std::fill(row + x_hi, row + g.w_out, Scalar(0));
        }
        std::fill(col + y_hi * g.w_out, col + g.h_out * g.w_out, Scalar(0));
      }
    }
  return cols;
}

/// Adjoint of im2col: scatter-add columns back into an input-shaped tensor.
template <class Scalar>
Tensor<Scalar> col2im(const Mat<Scalar>& cols, const ConvGeom& g) {
  Tensor<Scalar> out({g.c_in, g.h_in, g.w_in});
  for (Eigen::Index c = 0; c < g.c_in; ++c)
    for (Eigen::Index i = 0; i < g.kh; ++i) {
      const auto [y_lo, y_hi] = tap_span(i, g, g.h_in, g.h_out);
      for (Eigen::Index j = 0; j < g.kw; ++j) {
        const Eigen::Index q = (c * g.kh + i) * g.kw + j;
        const Scalar* col = cols.col(q).data();
        const auto [x_lo, x_hi] = tap_span(j, g, g.w_in, g.w_out);
        if (x_lo >= x_hi) continue;
        for (Eigen::Index y = y_lo; y < y_hi; ++y) {
          const Eigen::Index sy = y * g.stride + i - g.pad;
          const Scalar* row = col + y * g.w_out;
          Scalar* dst = out.data() + (c * g.h_in + sy) * g.w_in;
          if (g.stride == 1) {
            const Eigen::Index base = x_lo + j - g.pad;
            Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(dst + base, x_hi - x_lo) +=
                Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(row + x_lo,
                                                                          x_hi - x_lo);
          } else {
            for (Eigen::Index x2 = x_lo; x2 < x_hi; ++x2)
              dst[x2 * g.stride + j - g.pad] += row[x2];
          }
        }
      }
    }
  return out;
}

/// Weights laid out (c_out, c_in, kh, kw) map directly onto a column-major
/// (c_in*kh*kw) x c_out matrix: element (q, o) lives at flat index o*patch + q.
template <class Scalar>
Eigen::Map<const Mat<Scalar>> weight_matrix(const Tensor<Scalar>& w, const ConvGeom& g) {
  return {w.data(), g.patch(), g.c_out};
}

template <class Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                            const Tensor<Scalar>* bias, const ConvGeom& g) {
  Tensor<Scalar> out({g.c_out, g.h_out, g.w_out});
  as_plane_matrix(out).noalias() = im2col(x, g) * weight_matrix(w, g);
  if (bias) {
    auto planes = as_plane_matrix(out);
    for (Eigen::Index o = 0; o < g.c_out; ++o) planes.col(o).array() += (*bias)[o];
  }
  return out;
}

/// Gradient w.r.t. the conv input given the gradient at its output.
template <class Scalar>
Tensor<Scalar> conv_backward_input(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& w,
                                   const ConvGeom& g) {
  const Mat<Scalar> gcols = as_plane_matrix(grad_out) * weight_matrix(w, g).transpose();
  return col2im(gcols, g);
}

/// Gradient w.r.t. the weights (and bias, if requested).
template <class Scalar>
void conv_backward_weights(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out,
                           const ConvGeom& g, Tensor<Scalar>& grad_w, Tensor<Scalar>* grad_bias) {
  Eigen::Map<Mat<Scalar>> gw(grad_w.data(), g.patch(), g.c_out);
  gw.noalias() += im2col(x, g).transpose() * as_plane_matrix(grad_out);
  if (grad_bias) {
    auto planes = as_plane_matrix(grad_out);
    for (Eigen::Index o = 0; o < g.c_out; ++o) (*grad_bias)[o] += planes.col(o).sum();
  }
}

/// Transposed-conv geometry: the underlying conv maps the deconv *output*
/// back to the deconv *input*. Weights are laid out (c_in, c_out, kh, kw).
inline ConvGeom deconv_geometry(const Shape& in, const Shape& weight, Eigen::Index stride,
                                Eigen::Index pad) {
  if (in.size() != 3 || weight.size() != 4)
    throw std::invalid_argument("deconv: input must be rank 3, weight rank 4");
  if (weight[0] != in[0])
    throw std::invalid_argument("deconv: weight expects " + std::to_string(weight[0]) +
                                " input channels, got " + std::to_string(in[0]));
  const Eigen::Index h_out = stride * (in[1] - 1) + weight[2] - 2 * pad;
  const Eigen::Index w_out = stride * (in[2] - 1) + weight[3] - 2 * pad;
  if (h_out < 1 || w_out < 1) throw std::invalid_argument("deconv: empty output");
  // From the underlying conv's point of view the roles are swapped: it maps
  // the deconv output (weight[1] channels) back to the deconv input.
  return conv_geometry({weight[1], h_out, w_out}, {weight[0], weight[1], weight[2], weight[3]},
                       stride, pad);
}

template <class Scalar>
Tensor<Scalar> deconv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                              const Tensor<Scalar>* bias, const ConvGeom& g) {
  // x plays the role of the underlying conv's output gradient.
  Tensor<Scalar> out = conv_backward_input(x, w, g);
  if (bias) {
    auto planes = as_plane_matrix(out);
    for (Eigen::Index o = 0; o < g.c_in; ++o) planes.col(o).array() += (*bias)[o];
  }
  return out;
}

template <class Scalar>
Tensor<Scalar> deconv_backward_input(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& w,
                                     const ConvGeom& g) {
  return conv_forward<Scalar>(grad_out, w, nullptr, g);
}

template <class Scalar>
void deconv_backward_weights(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out,
                             const ConvGeom& g, Tensor<Scalar>& grad_w, Tensor<Scalar>* grad_bias) {
  // d/dw of <grad_out, deconv_w(x)> = d/dw of <x, conv_w(grad_out)>.
  conv_backward_weights<Scalar>(grad_out, x, g, grad_w, nullptr);
  if (grad_bias) {
    auto planes = as_plane_matrix(grad_out);
    for (Eigen::Index o = 0; o < g.c_in; ++o) (*grad_bias)[o] += planes.col(o).sum();
  }
}

}  // namespace kbsr
