#pragma once

#include "kbsr/autograd/conv.hpp"
#include "kbsr/autograd/tape.hpp"
#include "kbsr/degradation/degrade.hpp"

namespace kbsr {

namespace detail {
template <class Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* what) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "add");
  Tape<Scalar>& t = *a.tape;
  Tensor<Scalar> out(a.shape(), (a.value().array() + b.value().array()).eval());
  const int ia = a.id, ib = b.id;
  return t.make(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).array() += g.array();
    if (t.needs_grad(ib)) t.grad(ib).array() += g.array();
  });
}

template <class Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "sub");
  Tape<Scalar>& t = *a.tape;
  Tensor<Scalar> out(a.shape(), (a.value().array() - b.value().array()).eval());
  const int ia = a.id, ib = b.id;
  return t.make(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).array() += g.array();
    if (t.needs_grad(ib)) t.grad(ib).array() -= g.array();
  });
}

template <class Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "hadamard");
  Tape<Scalar>& t = *a.tape;
  Tensor<Scalar> out(a.shape(), (a.value().array() * b.value().array()).eval());
  const int ia = a.id, ib = b.id;
  return t.make(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).array() += t.value(ib).array() * g.array();
    if (t.needs_grad(ib)) t.grad(ib).array() += t.value(ia).array() * g.array();
  });
}

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Tape<Scalar>& t = *a.tape;
  Tensor<Scalar> out(a.shape(), (a.value().array() * c).eval());
  const int ia = a.id;
  return t.make(std::move(out), {ia}, [ia, c](Tape<Scalar>& t, int self) {
    if (t.needs_grad(ia)) t.grad(ia).array() += c * t.grad(self).array();
  });
}

// ---------------------------------------------------------------------------
// Activations and pointwise nonlinearities
// ---------------------------------------------------------------------------

/// slope = 1 degrades to the identity, which the linearity tests exploit.
template <class Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, double slope) {
  Tape<Scalar>& t = *x.tape;
  const Scalar s = static_cast<Scalar>(slope);
  Tensor<Scalar> out(x.shape(),
                     (x.value().array() > Scalar(0))
                         .select(x.value().array(), x.value().array() * s)
                         .eval());
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix, s](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    const auto& xv = t.value(ix).array();
    t.grad(ix).array() +=
        (xv > Scalar(0)).select(t.grad(self).array(), t.grad(self).array() * s);
  });
}

template <class Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Tape<Scalar>& t = *x.tape;
  Tensor<Scalar> out(x.shape(), (Scalar(1) / (Scalar(1) + (-x.value().array()).exp())).eval());
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    const auto& y = t.value(self).array();
    t.grad(ix).array() += y * (Scalar(1) - y) * t.grad(self).array();
  });
}

/// log(max(x, eps)); the gradient is zero in the clamped region.
template <class Scalar>
Var<Scalar> log_clamped(Var<Scalar> x, double eps = 1e-20) {
  Tape<Scalar>& t = *x.tape;
  const Scalar e = static_cast<Scalar>(eps);
  Tensor<Scalar> out(x.shape(), x.value().array().max(e).log().eval());
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix, e](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    const auto& xv = t.value(ix).array();
    t.grad(ix).array() +=
        (xv >= e).select(t.grad(self).array() / xv.max(e), Scalar(0) * xv);
  });
}

/// Softmax over the whole tensor treated as one flat distribution.
template <class Scalar>
Var<Scalar> softmax_flat(Var<Scalar> x) {
  Tape<Scalar>& t = *x.tape;
  const auto& xv = x.value().array();
  Tensor<Scalar> out(x.shape(), (xv - xv.maxCoeff()).exp().eval());
  out.array() /= out.array().sum();
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    const auto& p = t.value(self).array();
    const auto& g = t.grad(self).array();
    const Scalar dot = (p * g).sum();
    t.grad(ix).array() += p * (g - dot);
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <class Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape dims) {
  Tape<Scalar>& t = *x.tape;
  Tensor<Scalar> out = x.value().reshaped(dims);
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix](Tape<Scalar>& t, int self) {
    if (t.needs_grad(ix)) t.grad(ix).array() += t.grad(self).array();
  });
}

template <class Scalar>
Var<Scalar> flatten(Var<Scalar> x) {
  return reshape(x, {x.value().size()});
}

/// Channelwise concatenation of rank-3 tensors with equal spatial dims.
template <class Scalar>
Var<Scalar> concat_ch(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_ch: nothing to concatenate");
  if (parts.size() == 1) return parts[0];
  Tape<Scalar>& t = *parts[0].tape;
  const Eigen::Index h = parts[0].value().dim(1), w = parts[0].value().dim(2);
  Eigen::Index channels = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.value().rank() != 3 || p.value().dim(1) != h || p.value().dim(2) != w)
      throw std::invalid_argument("concat_ch: spatial dims differ");
    channels += p.value().dim(0);
    ids.push_back(p.id);
  }
  Tensor<Scalar> out({channels, h, w});
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    const Eigen::Index n = p.value().size();
    out.array().segment(at, n) = p.value().array();
    at += n;
  }
  std::vector<int> parents = ids;
  return t.make(std::move(out), std::move(parents), [ids](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index n = t.value(id).size();
      if (t.needs_grad(id)) t.grad(id).array() += g.array().segment(at, n);
      at += n;
    }
  });
}

/// (d) vector -> (d,h,w) map of constant planes; adjoint sums each plane.
template <class Scalar>
Var<Scalar> stretch_to_map(Var<Scalar> v, Eigen::Index h, Eigen::Index w) {
  Tape<Scalar>& t = *v.tape;
  Tensor<Scalar> out = stretch(v.value(), h, w);
  const int iv = v.id;
  return t.make(std::move(out), {iv}, [iv](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(iv)) return;
    auto planes = as_plane_matrix(t.grad(self));
    auto& gv = t.grad(iv);
    for (Eigen::Index d = 0; d < gv.size(); ++d) gv[d] += planes.col(d).sum();
  });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// (C,H,W) -> (C): mean over each channel plane.
template <class Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> x) {
  Tape<Scalar>& t = *x.tape;
  if (x.value().rank() != 3) throw std::invalid_argument("global_avg_pool: expected rank 3");
  const Eigen::Index c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
  Tensor<Scalar> out({c});
  auto planes = as_plane_matrix(x.value());
  for (Eigen::Index i = 0; i < c; ++i) out[i] = planes.col(i).mean();
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix, hw](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    auto planes = as_plane_matrix(t.grad(ix));
    const auto& g = t.grad(self);
    for (Eigen::Index i = 0; i < g.size(); ++i)
      planes.col(i).array() += g[i] / static_cast<Scalar>(hw);
  });
}

/// y = W x + b with W stored row-major as a rank-2 (out,in) tensor.
template <class Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  Tape<Scalar>& t = *x.tape;
  if (x.value().rank() != 1 || w.value().rank() != 2 || w.value().dim(1) != x.value().size() ||
      b.value().size() != w.value().dim(0))
    throw std::invalid_argument("linear: inconsistent shapes");
  const Eigen::Index in = w.value().dim(1), outn = w.value().dim(0);
  // Row-major (out,in) data doubles as a column-major (in,out) matrix map.
  Eigen::Map<const Mat<Scalar>> wm(w.value().data(), in, outn);
  Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>> xv(x.value().data(), in);
  Tensor<Scalar> out({outn});
  Eigen::Map<Eigen::Vector<Scalar, Eigen::Dynamic>>(out.data(), outn).noalias() =
      wm.transpose() * xv;
  out.array() += b.value().array();
  const int ix = x.id, iw = w.id, ib = b.id;
  return t.make(std::move(out), {ix, iw, ib}, [ix, iw, ib, in, outn](Tape<Scalar>& t, int self) {
    Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>> g(t.grad(self).data(), outn);
    if (t.needs_grad(ix)) {
      Eigen::Map<const Mat<Scalar>> wm(t.value(iw).data(), in, outn);
      Eigen::Map<Eigen::Vector<Scalar, Eigen::Dynamic>>(t.grad(ix).data(), in).noalias() +=
          wm * g;
    }
    if (t.needs_grad(iw)) {
      Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>> xv(t.value(ix).data(), in);
      Eigen::Map<Mat<Scalar>>(t.grad(iw).data(), in, outn).noalias() += xv * g.transpose();
    }
    if (t.needs_grad(ib)) t.grad(ib).array() += t.grad(self).array();
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Bias is optional: pass a default-constructed Var to omit it.
template <class Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b, int stride, int pad) {
  Tape<Scalar>& t = *x.tape;
  const ConvGeom g = conv_geometry(x.shape(), w.shape(), stride, pad);
  Tensor<Scalar> out = conv_forward(x.value(), w.value(), b ? &b.value() : nullptr, g);
  const int ix = x.id, iw = w.id, ib = b ? b.id : -1;
  std::vector<int> parents{ix, iw};
  if (b) parents.push_back(ib);
  return t.make(std::move(out), std::move(parents), [ix, iw, ib, g](Tape<Scalar>& t, int self) {
    const auto& gout = t.grad(self);
    if (t.needs_grad(ix))
      t.grad(ix).array() += conv_backward_input(gout, t.value(iw), g).array();
    if (t.needs_grad(iw)) {
      Tensor<Scalar>* gb = (ib >= 0 && t.needs_grad(ib)) ? &t.grad(ib) : nullptr;
      conv_backward_weights(t.value(ix), gout, g, t.grad(iw), gb);
    } else if (ib >= 0 && t.needs_grad(ib)) {
      auto planes = as_plane_matrix(gout);
      for (Eigen::Index o = 0; o < g.c_out; ++o) t.grad(ib)[o] += planes.col(o).sum();
    }
  });
}

template <class Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b, int stride, int pad) {
  Tape<Scalar>& t = *x.tape;
  const ConvGeom g = deconv_geometry(x.shape(), w.shape(), stride, pad);
  Tensor<Scalar> out = deconv_forward(x.value(), w.value(), b ? &b.value() : nullptr, g);
  const int ix = x.id, iw = w.id, ib = b ? b.id : -1;
  std::vector<int> parents{ix, iw};
  if (b) parents.push_back(ib);
  return t.make(std::move(out), std::move(parents), [ix, iw, ib, g](Tape<Scalar>& t, int self) {
    const auto& gout = t.grad(self);
    if (t.needs_grad(ix))
      t.grad(ix).array() += deconv_backward_input(gout, t.value(iw), g).array();
    if (t.needs_grad(iw)) {
      Tensor<Scalar>* gb = (ib >= 0 && t.needs_grad(ib)) ? &t.grad(ib) : nullptr;
      deconv_backward_weights(t.value(ix), gout, g, t.grad(iw), gb);
    } else if (ib >= 0 && t.needs_grad(ib)) {
      auto planes = as_plane_matrix(gout);
      for (Eigen::Index o = 0; o < g.c_in; ++o) t.grad(ib)[o] += planes.col(o).sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Degradation operators inside the graph
// ---------------------------------------------------------------------------

/// Reflect-padded true convolution of a raster with a rank-2 kernel,
/// differentiable in both arguments. Mirrors blur_reflect exactly.
template <class Scalar>
Var<Scalar> blur_same(Var<Scalar> img, Var<Scalar> kernel) {
  Tape<Scalar>& t = *img.tape;
  const auto& iv = img.value();
  const auto& kv = kernel.value();
  if (iv.rank() != 3 || kv.rank() != 2 || kv.dim(0) != kv.dim(1) || kv.dim(0) % 2 == 0)
    throw std::invalid_argument("blur_same: expected rank-3 image and odd square kernel");
  const Eigen::Index k = kv.dim(0);
  const int ii = img.id, ik = kernel.id;
  return t.make(blur_reflect_any(iv, kv), {ii, ik}, [ii, ik, k](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ii))
      t.grad(ii).array() += blur_backward_image(g, t.value(ik)).array();
    if (t.needs_grad(ik))
      t.grad(ik).array() += blur_backward_kernel(g, t.value(ii), k).array();
  });
}

template <class Scalar>
Var<Scalar> downsample(Var<Scalar> x, int s, DownMode mode) {
  Tape<Scalar>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) % s != 0 || xv.dim(2) % s != 0)
    throw std::invalid_argument("downsample: dims not divisible by scale");
  const Eigen::Index c = xv.dim(0), oh = xv.dim(1) / s, ow = xv.dim(2) / s;
  const int ix = x.id;
  if (mode == DownMode::decimate) {
    return t.make(downsample_decimate(xv, s), {ix}, [ix, c, oh, ow, s](Tape<Scalar>& t, int self) {
      if (!t.needs_grad(ix)) return;
      auto& gi = t.grad(ix);
      const auto& g = t.grad(self);
      for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < oh; ++y)
          for (Eigen::Index x2 = 0; x2 < ow; ++x2) gi(ch, y * s, x2 * s) += g(ch, y, x2);
    });
  }
  if (mode == DownMode::area) {
    const Scalar inv = Scalar(1) / static_cast<Scalar>(s * s);
    return t.make(downsample_area(xv, s), {ix},
                  [ix, c, oh, ow, s, inv](Tape<Scalar>& t, int self) {
                    if (!t.needs_grad(ix)) return;
                    auto& gi = t.grad(ix);
                    const auto& g = t.grad(self);
                    for (Eigen::Index ch = 0; ch < c; ++ch)
                      for (Eigen::Index y = 0; y < oh; ++y)
                        for (Eigen::Index x2 = 0; x2 < ow; ++x2) {
                          const Scalar v = g(ch, y, x2) * inv;
                          for (int dy = 0; dy < s; ++dy)
                            for (int dx = 0; dx < s; ++dx) gi(ch, y * s + dy, x2 * s + dx) += v;
                        }
                  });
  }
  // Cubic: forward via the shared resampler; adjoint scatters through the
  // same tap plans in reverse pass order (width first, then height).
  const Eigen::Index h = xv.dim(1), w = xv.dim(2);
  return t.make(bicubic_resize(xv, oh, ow), {ix}, [ix, c, h, w, oh, ow](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(ix)) return;
    const auto col_plan = detail::cubic_plan(h, oh);
    const auto row_plan = detail::cubic_plan(w, ow);
    const auto& g = t.grad(self);
    Tensor<Scalar> gmid({c, oh, w});
    for (Eigen::Index ch = 0; ch < c; ++ch)
      for (Eigen::Index y = 0; y < oh; ++y)
        for (Eigen::Index x2 = 0; x2 < ow; ++x2) {
          const Scalar go = g(ch, y, x2);
          for (Eigen::Index tap = 0; tap < row_plan.taps; ++tap)
            gmid(ch, y, row_plan.index[x2 * row_plan.taps + tap]) +=
                static_cast<Scalar>(row_plan.weight[x2 * row_plan.taps + tap]) * go;
        }
    auto& gi = t.grad(ix);
    for (Eigen::Index ch = 0; ch < c; ++ch)
      for (Eigen::Index y = 0; y < oh; ++y)
        for (Eigen::Index x2 = 0; x2 < w; ++x2) {
          const Scalar gm = gmid(ch, y, x2);
          for (Eigen::Index tap = 0; tap < col_plan.taps; ++tap)
            gi(ch, col_plan.index[y * col_plan.taps + tap], x2) +=
                static_cast<Scalar>(col_plan.weight[y * col_plan.taps + tap]) * gm;
        }
  });
}

/// In-graph Eq.-style degradation: blur with a (possibly learned) kernel,
/// then downsample.
template <class Scalar>
Var<Scalar> degrade(Var<Scalar> img, Var<Scalar> kernel, int s, DownMode mode) {
  return downsample(blur_same(img, kernel), s, mode);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Scalar sum of all entries.
template <class Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tape<Scalar>& t = *x.tape;
  Tensor<Scalar> out({1});
  out[0] = x.value().array().sum();
  const int ix = x.id;
  return t.make(std::move(out), {ix}, [ix](Tape<Scalar>& t, int self) {
    if (t.needs_grad(ix)) t.grad(ix).array() += t.grad(self)[0];
  });
}

template <class Scalar>
Var<Scalar> mse_loss(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "mse_loss");
  Tape<Scalar>& t = *a.tape;
  const Eigen::Index n = a.value().size();
  Tensor<Scalar> out({1});
  out[0] = (a.value().array() - b.value().array()).square().sum() / static_cast<Scalar>(n);
  const int ia = a.id, ib = b.id;
  return t.make(std::move(out), {ia, ib}, [ia, ib, n](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)[0] * Scalar(2) / static_cast<Scalar>(n);
    const auto diff = (t.value(ia).array() - t.value(ib).array()).eval();
    if (t.needs_grad(ia)) t.grad(ia).array() += g * diff;
    if (t.needs_grad(ib)) t.grad(ib).array() -= g * diff;
  });
}

/// Mean absolute difference; the subgradient at exact zeros is 0.
template <class Scalar>
Var<Scalar> l1_loss(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "l1_loss");
  Tape<Scalar>& t = *a.tape;
  const Eigen::Index n = a.value().size();
  Tensor<Scalar> out({1});
  out[0] = (a.value().array() - b.value().array()).abs().sum() / static_cast<Scalar>(n);
  const int ia = a.id, ib = b.id;
  return t.make(std::move(out), {ia, ib}, [ia, ib, n](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)[0] / static_cast<Scalar>(n);
    const auto sgn = (t.value(ia).array() - t.value(ib).array()).sign().eval();
    if (t.needs_grad(ia)) t.grad(ia).array() += g * sgn;
    if (t.needs_grad(ib)) t.grad(ib).array() -= g * sgn;
  });
}

}  // namespace kbsr
