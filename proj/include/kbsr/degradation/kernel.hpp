#pragma once

#include <cmath>
#include <stdexcept>

#include "kbsr/core/tensor.hpp"

namespace kbsr {

/// Blur kernels are rank-2 (k,k) float64 tensors: entries >= 0, sum 1, k odd.
using Kernel = Tensor<double>;

struct GaussianSpec {
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;  // radians, rotation of the sigma_x axis
};

inline bool kernel_valid(const Kernel& k, double sum_tol = 1e-9) {
  if (k.rank() != 2 || k.dim(0) != k.dim(1) || k.dim(0) % 2 == 0) return false;
  if ((k.array() < 0.0).any()) return false;
  return std::abs(k.array().sum() - 1.0) <= sum_tol;
}

inline void require_kernel(const Kernel& k, const char* what) {
  if (!kernel_valid(k))
    throw std::invalid_argument(std::string(what) + ": invalid blur kernel " +
                                shape_str(k.shape()));
}

/// Identity-under-convolution kernel: single 1 at the center.
inline Kernel delta_kernel(int k) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("delta_kernel: k must be odd");
  Kernel out({k, k});
  out(k / 2, k / 2) = 1.0;
  return out;
}

/// Sample the rotated 2-D Gaussian density exp(-u' Sigma^-1 u / 2) at integer
/// offsets from the center and normalize to sum 1.
/// Sigma = R(theta) diag(sx^2, sy^2) R(theta)', expanded here in closed form:
/// with A = Sigma = [[a,b],[b,c]], the quadratic form is
/// (c dx^2 - 2 b dx dy + a dy^2) / det(Sigma), det = sx^2 sy^2.
inline Kernel gaussian_kernel(const GaussianSpec& spec, int k = 21) {
  if (spec.sigma_x <= 0.0 || spec.sigma_y <= 0.0)
    throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("gaussian_kernel: k must be odd");

  const double sx2 = spec.sigma_x * spec.sigma_x, sy2 = spec.sigma_y * spec.sigma_y;
  const double ct = std::cos(spec.theta), st = std::sin(spec.theta);
  const double a = sx2 * ct * ct + sy2 * st * st;
  const double b = (sx2 - sy2) * st * ct;
  const double c = sx2 * st * st + sy2 * ct * ct;
  const double det = sx2 * sy2;

  Kernel out({k, k});
  const int r = k / 2;
  for (int y = 0; y < k; ++y) {
    const double dy = y - r;
    for (int x = 0; x < k; ++x) {
      const double dx = x - r;
      out(y, x) = std::exp(-0.5 * (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det);
    }
  }
  out.array() /= out.array().sum();
  return out;
}

/// Kernel of a blur spec, with the all-zero spec denoting "no blur" (delta).
inline Kernel kernel_from_spec(const GaussianSpec& spec, int k) {
  if (spec.sigma_x == 0.0 && spec.sigma_y == 0.0) return delta_kernel(k);
  return gaussian_kernel(spec, k);
}

/// Broadcast a d-vector to a (d,h,w) map of constant planes.
template <class Scalar>
Tensor<Scalar> stretch(const Tensor<Scalar>& vec, Eigen::Index h, Eigen::Index w) {
  if (vec.rank() != 1 || vec.size() < 1)
    throw std::invalid_argument("stretch: expected a nonempty rank-1 tensor");
  Tensor<Scalar> out({vec.size(), h, w});
  auto planes = as_plane_matrix(out);
  for (Eigen::Index d = 0; d < vec.size(); ++d) planes.col(d).setConstant(vec[d]);
  return out;
}

}  // namespace kbsr
