#pragma once

#include <string>
#include <vector>

#include "kbsr/degradation/kernel.hpp"

namespace kbsr {

enum class DownMode { decimate, area, bicubic };

inline std::string to_string(DownMode m) {
  switch (m) {
    case DownMode::decimate: return "decimate";
    case DownMode::area: return "area";
    case DownMode::bicubic: return "bicubic";
  }
  return "?";
}

inline DownMode parse_down_mode(const std::string& s) {
  if (s == "decimate") return DownMode::decimate;
  if (s == "area") return DownMode::area;
  if (s == "bicubic") return DownMode::bicubic;
  throw std::invalid_argument("unknown down_mode '" + s + "'");
}

/// Reflect an out-of-range index into [0,n) without repeating the edge sample
/// (…2,1,0,1,2… around 0), folding as often as needed for small n.
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// One reflect-padded plane, row-major (h+2r) x (w+2r); pad(y+r, x+r) = plane(y, x).
template <class Scalar>
using PlaneMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
PlaneMat<Scalar> reflect_pad_plane(const Tensor<Scalar>& img, Eigen::Index ch, Eigen::Index r) {
  const Eigen::Index h = img.dim(1), w = img.dim(2);
  PlaneMat<Scalar> pad(h + 2 * r, w + 2 * r);
  for (Eigen::Index py = 0; py < h + 2 * r; ++py) {
    const Eigen::Index sy = reflect_index(py - r, h);
    for (Eigen::Index px = 0; px < w + 2 * r; ++px)
      pad(py, px) = img(ch, sy, reflect_index(px - r, w));
  }
  return pad;
}

/// Shared core of blur_reflect and its autograd op (which feeds kernels that
/// are mid-graph values, not validated Kernel objects):
/// out(c,y,x) = sum_{i,j} K(i,j) * in(c, y+r-i, x+r-j), written as k^2
/// shifted-block accumulations over the padded plane
/// (in(y+r-i, x+r-j) = pad(y+2r-i, x+2r-j)) so the inner loops vectorize.
template <class Scalar, class KScalar>
Tensor<Scalar> blur_reflect_any(const Tensor<Scalar>& img, const Tensor<KScalar>& kernel) {
  if (img.rank() != 3) throw std::invalid_argument("blur_reflect: expected rank-3 raster");
  const Eigen::Index c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const Eigen::Index k = kernel.dim(0), r = k / 2;
  Tensor<Scalar> out({c, h, w});
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    const PlaneMat<Scalar> pad = reflect_pad_plane(img, ch, r);
    Eigen::Map<PlaneMat<Scalar>> plane(out.data() + ch * h * w, h, w);
    plane.setZero();
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        plane.noalias() += static_cast<Scalar>(kernel[i * k + j]) *
                           pad.block(2 * r - i, 2 * r - j, h, w);
  }
  return out;
}

/// True convolution with reflect padding, same-size output.
template <class Scalar>
Tensor<Scalar> blur_reflect(const Tensor<Scalar>& img, const Kernel& kernel) {
  require_kernel(kernel, "blur_reflect");
  return blur_reflect_any(img, kernel);
}

/// Adjoint of the blur in the image argument: scatter the output gradient
/// through the shifted blocks into a padded buffer, then fold the padding
/// back through the reflection.
template <class Scalar, class KScalar>
Tensor<Scalar> blur_backward_image(const Tensor<Scalar>& grad_out, const Tensor<KScalar>& kernel) {
  const Eigen::Index c = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  const Eigen::Index k = kernel.dim(0), r = k / 2;
  Tensor<Scalar> grad({c, h, w});
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    Eigen::Map<const PlaneMat<Scalar>> g(grad_out.data() + ch * h * w, h, w);
    PlaneMat<Scalar> pad = PlaneMat<Scalar>::Zero(h + 2 * r, w + 2 * r);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        pad.block(2 * r - i, 2 * r - j, h, w).noalias() +=
            static_cast<Scalar>(kernel[i * k + j]) * g;
    for (Eigen::Index py = 0; py < h + 2 * r; ++py) {
      const Eigen::Index sy = reflect_index(py - r, h);
      for (Eigen::Index px = 0; px < w + 2 * r; ++px)
        grad(ch, sy, reflect_index(px - r, w)) += pad(py, px);
    }
  }
  return grad;
}

/// Adjoint of the blur in the kernel argument: each tap's gradient is the
/// inner product of the output gradient with the matching shifted block.
template <class Scalar>
Tensor<Scalar> blur_backward_kernel(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& img,
                                    Eigen::Index k) {
  const Eigen::Index c = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  const Eigen::Index r = k / 2;
  Tensor<Scalar> grad({k, k});
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    const PlaneMat<Scalar> pad = reflect_pad_plane(img, ch, r);
    Eigen::Map<const PlaneMat<Scalar>> g(grad_out.data() + ch * h * w, h, w);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        grad(i, j) += pad.block(2 * r - i, 2 * r - j, h, w).cwiseProduct(g).sum();
  }
  return grad;
}

template <class Scalar>
Tensor<Scalar> downsample_decimate(const Tensor<Scalar>& img, int s) {
  const Eigen::Index c = img.dim(0), h = img.dim(1) / s, w = img.dim(2) / s;
  Tensor<Scalar> out({c, h, w});
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) out(ch, y, x) = img(ch, y * s, x * s);
  return out;
}

template <class Scalar>
Tensor<Scalar> downsample_area(const Tensor<Scalar>& img, int s) {
  const Eigen::Index c = img.dim(0), h = img.dim(1) / s, w = img.dim(2) / s;
  Tensor<Scalar> out({c, h, w});
  const double inv = 1.0 / (static_cast<double>(s) * s);
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) acc += static_cast<double>(img(ch, y * s + dy, x * s + dx));
        out(ch, y, x) = static_cast<Scalar>(acc * inv);
      }
  return out;
}

namespace detail {

/// Keys' cubic interpolation kernel (a = -1/2), support [-2,2].
inline double cubic(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

/// Repeat-edge reflection (…1,0,0,1… around 0), folding for small n.
inline Eigen::Index reflect_edge_index(Eigen::Index i, Eigen::Index n) {
  const Eigen::Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

struct ResampleTaps {
  std::vector<Eigen::Index> index;  // flattened [out][tap] source indices
  std::vector<double> weight;       // matching weights, each row sums to 1
  Eigen::Index taps = 0;
};

/// Per-axis cubic resampling plan mapping n_in samples to n_out. When
/// shrinking, the kernel is widened by 1/scale (antialiasing) so the plan
/// low-passes before decimation. Weights are renormalized per output sample,
/// which keeps constants exactly constant.
inline ResampleTaps cubic_plan(Eigen::Index n_in, Eigen::Index n_out) {
  const double scale = static_cast<double>(n_out) / static_cast<double>(n_in);
  const bool shrink = scale < 1.0;
  const double width = shrink ? 4.0 / scale : 4.0;
  ResampleTaps plan;
  plan.taps = static_cast<Eigen::Index>(std::ceil(width)) + 2;
  plan.index.resize(n_out * plan.taps);
  plan.weight.resize(n_out * plan.taps);
  for (Eigen::Index i = 0; i < n_out; ++i) {
    const double u = (i + 0.5) / scale - 0.5;  // center in input coordinates
    const Eigen::Index left = static_cast<Eigen::Index>(std::floor(u - width / 2));
    double sum = 0.0;
    for (Eigen::Index t = 0; t < plan.taps; ++t) {
      const Eigen::Index src = left + 1 + t;
      const double wgt = shrink ? scale * cubic(scale * (u - src)) : cubic(u - src);
      plan.index[i * plan.taps + t] = reflect_edge_index(src, n_in);
      plan.weight[i * plan.taps + t] = wgt;
      sum += wgt;
    }
    for (Eigen::Index t = 0; t < plan.taps; ++t) plan.weight[i * plan.taps + t] /= sum;
  }
  return plan;
}

}  // namespace detail

/// Separable cubic resize (antialiased when shrinking), rows then columns.
template <class Scalar>
Tensor<Scalar> bicubic_resize(const Tensor<Scalar>& img, Eigen::Index out_h, Eigen::Index out_w) {
  if (img.rank() != 3) throw std::invalid_argument("bicubic_resize: expected rank-3 raster");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: empty output");
  const Eigen::Index c = img.dim(0), h = img.dim(1), w = img.dim(2);

  const auto col_plan = detail::cubic_plan(h, out_h);
  Tensor<Scalar> mid({c, out_h, w});
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (Eigen::Index y = 0; y < out_h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (Eigen::Index t = 0; t < col_plan.taps; ++t)
          acc += col_plan.weight[y * col_plan.taps + t] *
                 static_cast<double>(img(ch, col_plan.index[y * col_plan.taps + t], x));
        mid(ch, y, x) = static_cast<Scalar>(acc);
      }

  const auto row_plan = detail::cubic_plan(w, out_w);
  Tensor<Scalar> out({c, out_h, out_w});
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (Eigen::Index y = 0; y < out_h; ++y)
      for (Eigen::Index x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (Eigen::Index t = 0; t < row_plan.taps; ++t)
          acc += row_plan.weight[x * row_plan.taps + t] *
                 static_cast<double>(mid(ch, y, row_plan.index[x * row_plan.taps + t]));
        out(ch, y, x) = static_cast<Scalar>(acc);
      }
  return out;
}

template <class Scalar>
Tensor<Scalar> downsample(const Tensor<Scalar>& img, int s, DownMode mode) {
  if (s < 1) throw std::invalid_argument("downsample: scale must be >= 1");
  if (img.dim(1) % s != 0 || img.dim(2) % s != 0)
    throw std::invalid_argument("downsample: dimensions " + shape_str(img.shape()) +
                                " not divisible by scale " + std::to_string(s));
  if (s == 1) return img;
  switch (mode) {
    case DownMode::decimate: return downsample_decimate(img, s);
    case DownMode::area: return downsample_area(img, s);
    case DownMode::bicubic: return bicubic_resize(img, img.dim(1) / s, img.dim(2) / s);
  }
  throw std::logic_error("downsample: unreachable");
}

/// Blur-then-downsample degradation: out = (in * K) down_s.
template <class Scalar>
Tensor<Scalar> degrade(const Tensor<Scalar>& hr, const Kernel& kernel, int s, DownMode mode) {
  return downsample(blur_reflect(hr, kernel), s, mode);
}

}  // namespace kbsr
