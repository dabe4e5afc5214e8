#pragma once

#include <cmath>
#include <stdexcept>

#include "kbsr/imaging/image.hpp"

namespace kbsr {

/// Reference-metric conventions, fixed once for the whole artifact: metrics
/// run on the full-swing luma plane (when the inputs are color and luma_only
/// is set) after shaving crop_border pixels from every side. PSNR of an
/// exact match reports the 100 dB cap instead of infinity so tables and CSVs
/// stay finite.
inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline Image metric_plane(const Image& img, int crop_border, bool luma_only) {
  if (img.rank() != 3) throw std::invalid_argument("metrics: expected rank-3 raster");
  Image plane = (luma_only && img.dim(0) == 3) ? rgb_to_y(img, LumaMode::full_swing) : img;
  if (crop_border < 0) throw std::invalid_argument("metrics: negative crop");
  if (crop_border > 0) {
    const Eigen::Index h = plane.dim(1) - 2 * crop_border, w = plane.dim(2) - 2 * crop_border;
    if (h < 1 || w < 1) throw std::invalid_argument("metrics: crop leaves no pixels");
    plane = crop(plane, crop_border, crop_border, h, w);
  }
  return plane;
}

/// Weighted valid-window correlation of one plane with a (k,k) window,
/// written as k^2 shifted-block accumulations.
inline Eigen::MatrixXd window_corr(const Eigen::MatrixXd& plane, const Eigen::MatrixXd& win) {
  const Eigen::Index k = win.rows();
  const Eigen::Index oh = plane.rows() - k + 1, ow = plane.cols() - k + 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(oh, ow);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out.noalias() += win(i, j) * plane.block(i, j, oh, ow);
  return out;
}

inline Eigen::MatrixXd plane_matrix(const Image& img, Eigen::Index c) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      img.data() + c * img.dim(1) * img.dim(2), img.dim(1), img.dim(2));
}

}  // namespace detail

/// Peak signal-to-noise ratio on the [0,1] range: 10*log10(1 / MSE), capped
/// at 100 dB (the sentinel for an exact match).
inline double psnr(const Image& a, const Image& b, int crop_border = 0, bool luma_only = false) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  const Image pa = detail::metric_plane(a, crop_border, luma_only);
  const Image pb = detail::metric_plane(b, crop_border, luma_only);
  const double mse = (pa.array() - pb.array()).square().mean();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(10.0 * std::log10(1.0 / mse), kPsnrCap);
}

/// The 11x11, sigma 1.5 Gaussian SSIM window, normalized to sum 1.
inline Eigen::MatrixXd ssim_window(int k = 11, double sigma = 1.5) {
  Eigen::MatrixXd win(k, k);
  const int r = k / 2;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      win(i, j) = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * sigma * sigma));
  win /= win.sum();
  return win;
}

/// Single-scale SSIM, mean over valid window positions (no padding) and, for
/// multi-channel comparisons, over channels. Stabilizers k1=0.01, k2=0.03 on
/// the unit dynamic range.
inline double ssim(const Image& a, const Image& b, int crop_border = 0, bool luma_only = false,
                   double k1 = 0.01, double k2 = 0.03) {
  if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
  const Image pa = detail::metric_plane(a, crop_border, luma_only);
  const Image pb = detail::metric_plane(b, crop_border, luma_only);
  const Eigen::MatrixXd win = ssim_window();
  if (pa.dim(1) < win.rows() || pa.dim(2) < win.cols())
    throw std::invalid_argument("ssim: image smaller than the 11x11 window after crop");
  const double c1 = k1 * k1, c2 = k2 * k2;

  double total = 0.0;
  for (Eigen::Index c = 0; c < pa.dim(0); ++c) {
    const Eigen::MatrixXd ma = detail::plane_matrix(pa, c), mb = detail::plane_matrix(pb, c);
    const Eigen::MatrixXd mu_a = detail::window_corr(ma, win);
    const Eigen::MatrixXd mu_b = detail::window_corr(mb, win);
    const Eigen::MatrixXd var_a =
        detail::window_corr(ma.cwiseProduct(ma), win) - mu_a.cwiseProduct(mu_a);
    const Eigen::MatrixXd var_b =
        detail::window_corr(mb.cwiseProduct(mb), win) - mu_b.cwiseProduct(mu_b);
    const Eigen::MatrixXd cov =
        detail::window_corr(ma.cwiseProduct(mb), win) - mu_a.cwiseProduct(mu_b);

    const auto num = (2.0 * mu_a.cwiseProduct(mu_b).array() + c1) * (2.0 * cov.array() + c2);
    const auto den = (mu_a.array().square() + mu_b.array().square() + c1) *
                     (var_a.array() + var_b.array() + c2);
    total += (num / den).mean();
  }
  return total / static_cast<double>(pa.dim(0));
}

}  // namespace kbsr
