#pragma once

#include <stdexcept>

#include "kbsr/autograd/ops.hpp"
#include "kbsr/networks/config.hpp"

namespace kbsr {

struct LossWeights {
  double w_sr = 1.0;
  double w_kernel = 5.0;
  double w_lr = 0.1;
};

/// Unweighted component values of one objective evaluation; `total` carries
/// the weighted sum that training actually minimizes.
struct LossBreakdown {
  double sr = 0.0;
  double kernel = 0.0;
  double lr = 0.0;
  double total = 0.0;
};

/// Mean squared error over all C*H*W entries of the SR estimate.
template <class Scalar>
Var<Scalar> sr_loss(Var<Scalar> sr, Var<Scalar> hr) {
  if (sr.shape() != hr.shape())
    throw std::invalid_argument("sr_loss: shape mismatch " + shape_str(sr.shape()) + " vs " +
                                shape_str(hr.shape()));
  return mse_loss(sr, hr);
}

/// Mean absolute difference over the a entries of a kernel code.
template <class Scalar>
Var<Scalar> kernel_code_loss(Var<Scalar> code, Var<Scalar> code_gt) {
  if (code.value().rank() != 1 || code.shape() != code_gt.shape())
    throw std::invalid_argument("kernel_code_loss: codes must be rank-1 of equal length");
  return l1_loss(code, code_gt);
}

/// Mean absolute difference over the k*k entries of a blur kernel.
template <class Scalar>
Var<Scalar> kernel_loss(Var<Scalar> k, Var<Scalar> k_gt) {
  if (k.value().rank() != 2 || k.shape() != k_gt.shape())
    throw std::invalid_argument("kernel_loss: kernels must be rank-2 of equal shape");
  return l1_loss(k, k_gt);
}

/// Re-degrades the SR estimate with the estimated kernel and compares it to
/// the observed LR image; the mean runs over the LR grid, which equals the
/// conventional s^2/(C*H*W) prefactor over the HR pixel count.
template <class Scalar>
Var<Scalar> lr_loss(Var<Scalar> sr, Var<Scalar> kernel, Var<Scalar> lr, int s, DownMode mode) {
  if (sr.value().rank() != 3 || lr.value().rank() != 3 ||
      lr.value().dim(0) != sr.value().dim(0) || lr.value().dim(1) * s != sr.value().dim(1) ||
      lr.value().dim(2) * s != sr.value().dim(2))
    throw std::invalid_argument("lr_loss: lr shape must be the s-fold reduction of sr");
  return mse_loss(degrade(sr, kernel, s, mode), lr);
}

/// Weighted objective of one variant. `kernel` and the targets it needs may
/// be left as default Vars for variants that do not use them; the kernel
/// losses always read the final stage's estimate.
template <class Scalar>
Var<Scalar> total_loss(Variant variant, Var<Scalar> sr, Var<Scalar> kernel, Var<Scalar> hr,
                       Var<Scalar> kernel_gt, Var<Scalar> lr, int s, DownMode mode,
                       const LossWeights& w, LossBreakdown* breakdown = nullptr) {
  auto l_sr = sr_loss(sr, hr);
  auto total = scale(l_sr, static_cast<Scalar>(w.w_sr));
  double kernel_val = 0.0, lr_val = 0.0;
  if (variant == Variant::kKcbpn) {
    if (!kernel || !kernel_gt)
      throw std::invalid_argument("total_loss: kcbpn needs a predicted and target kernel code");
    auto l_kc = kernel_code_loss(kernel, kernel_gt);
    kernel_val = l_kc.value()[0];
    total = add(total, scale(l_kc, static_cast<Scalar>(w.w_kernel)));
  } else if (variant == Variant::kKbpn) {
    if (!kernel || !kernel_gt || !lr)
      throw std::invalid_argument("total_loss: kbpn needs kernel, kernel target, and lr image");
    auto l_k = kernel_loss(kernel, kernel_gt);
    auto l_lr = lr_loss(sr, kernel, lr, s, mode);
    kernel_val = l_k.value()[0];
    lr_val = l_lr.value()[0];
    total = add(add(total, scale(l_k, static_cast<Scalar>(w.w_kernel))),
                scale(l_lr, static_cast<Scalar>(w.w_lr)));
  }
  if (breakdown) {
    breakdown->sr = l_sr.value()[0];
    breakdown->kernel = kernel_val;
    breakdown->lr = lr_val;
    breakdown->total = total.value()[0];
  }
  return total;
}

}  // namespace kbsr
