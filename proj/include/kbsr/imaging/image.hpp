#pragma once

#include <cstdint>
#include <filesystem>

#include "kbsr/core/rng.hpp"
#include "kbsr/core/tensor.hpp"

namespace kbsr {

/// Canonical raster: channel-major (C,H,W), C in {1,3}, values in [0,1].
using Image = Tensor<double>;

/// Read an 8- or 16-bit PNG into [0,1]. Grayscale loads as 1 channel,
/// color as 3 (R,G,B); palette images are expanded, alpha is stripped.
/// Other bit depths are rejected.
Image load_image(const std::filesystem::path& path);

/// Write as PNG after clamping to [0,1] and rounding to the code range.
void save_image(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

enum class LumaMode {
  studio_swing,  // BT.601 Y' in [16/255, 235/255]
  full_swing,    // offset-free 0.299 R + 0.587 G + 0.114 B (used for metrics)
};

template <class Scalar>
Tensor<Scalar> rgb_to_y(const Tensor<Scalar>& img, LumaMode mode = LumaMode::studio_swing) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("rgb_to_y: expected a 3-channel raster, got " +
                                shape_str(img.shape()));
  const Eigen::Index h = img.dim(1), w = img.dim(2);
  Tensor<Scalar> y({1, h, w});
  auto planes = as_plane_matrix(img);
  // Studio swing folds the 219-code excursion and +16 offset of 8-bit BT.601
  // into the [0,1] scale; full swing uses the bare luma weights.
  const auto r = planes.col(0).array(), g = planes.col(1).array(), b = planes.col(2).array();
  if (mode == LumaMode::studio_swing) {
    y.array() = (r * Scalar(65.481) + g * Scalar(128.553) + b * Scalar(24.966)) / Scalar(255) +
                Scalar(16.0 / 255.0);
  } else {
    y.array() = r * Scalar(0.299) + g * Scalar(0.587) + b * Scalar(0.114);
  }
  return y;
}

template <class Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& img, Eigen::Index y0, Eigen::Index x0, Eigen::Index h,
                    Eigen::Index w) {
  if (img.rank() != 3) throw std::invalid_argument("crop: expected rank-3 tensor");
  if (y0 < 0 || x0 < 0 || y0 + h > img.dim(1) || x0 + w > img.dim(2))
    throw std::invalid_argument("crop: window out of bounds");
  Tensor<Scalar> out({img.dim(0), h, w});
  for (Eigen::Index c = 0; c < img.dim(0); ++c)
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) out(c, y, x) = img(c, y0 + y, x0 + x);
  return out;
}

template <class Scalar>
Tensor<Scalar> flip_horizontal(const Tensor<Scalar>& img) {
  Tensor<Scalar> out(img.shape());
  const Eigen::Index w = img.dim(2);
  for (Eigen::Index c = 0; c < img.dim(0); ++c)
    for (Eigen::Index y = 0; y < img.dim(1); ++y)
      for (Eigen::Index x = 0; x < w; ++x) out(c, y, x) = img(c, y, w - 1 - x);
  return out;
}

template <class Scalar>
Tensor<Scalar> flip_vertical(const Tensor<Scalar>& img) {
  Tensor<Scalar> out(img.shape());
  const Eigen::Index h = img.dim(1);
  for (Eigen::Index c = 0; c < img.dim(0); ++c)
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < img.dim(2); ++x) out(c, y, x) = img(c, h - 1 - y, x);
  return out;
}

struct PatchSpec {
  Eigen::Index lr_patch_size = 32;
  int scale = 4;
  bool flip_horizontal = true;
  bool flip_vertical = true;

  Eigen::Index hr_patch_size() const { return lr_patch_size * scale; }
};

struct PatchRecord {
  Eigen::Index y0 = 0, x0 = 0;
  bool flipped_h = false, flipped_v = false;
};

/// Uniformly sample an HR patch of side lr_patch_size*scale and apply the
/// enabled flips. Pure function of (hr, spec, seed); the draw order is
/// fixed (y, x, flip_h, flip_v) so records can be replayed exactly.
template <class Scalar>
Tensor<Scalar> random_patch_pair(const Tensor<Scalar>& hr, const PatchSpec& spec, uint64_t seed,
                                 PatchRecord* record = nullptr) {
  const Eigen::Index ps = spec.hr_patch_size();
  if (ps > hr.dim(1) || ps > hr.dim(2))
    throw std::invalid_argument("random_patch_pair: image smaller than requested patch");
  Rng rng(seed);
  PatchRecord rec;
  rec.y0 = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(hr.dim(1) - ps + 1)));
  rec.x0 = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(hr.dim(2) - ps + 1)));
  rec.flipped_h = spec.flip_horizontal && rng.uniform() < 0.5;
  rec.flipped_v = spec.flip_vertical && rng.uniform() < 0.5;
  Tensor<Scalar> patch = crop(hr, rec.y0, rec.x0, ps, ps);
  if (rec.flipped_h) patch = flip_horizontal(patch);
  if (rec.flipped_v) patch = flip_vertical(patch);
  if (record) *record = rec;
  return patch;
}

}  // namespace kbsr
