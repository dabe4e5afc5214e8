#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "kbsr/blocks/layers.hpp"

namespace kbsr {

/// Hyperparameters shared by every block of a model.
struct BlockConfig {
  int base_channels = 64;
  int scale = 4;
  int kernel_size = 21;
  double slope = 0.1;  // rectifier slope; 1 turns every activation into identity
};

/// Deconv/conv tap geometry of the projection units, one triple per scale.
struct ProjectionTaps {
  int k;
  int stride;
  int pad;
};

inline ProjectionTaps projection_taps(int scale) {
  switch (scale) {
    case 2:
      return {6, 2, 2};
    case 4:
      return {8, 4, 2};
    case 8:
      return {12, 8, 2};
    default:
      throw std::invalid_argument("scale must be one of {2,4,8}");
  }
}

inline void require_block_config(const BlockConfig& cfg) {
  projection_taps(cfg.scale);
  if (cfg.base_channels < 8) throw std::invalid_argument("base_channels must be >= 8");
  if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0)
    throw std::invalid_argument("kernel_size must be odd and positive");
}

/// Four 3x3 conv layers at constant width, no pooling: the initial LR
/// feature stack. `bias=false` together with slope=1 yields a purely linear
/// map, which the tests exploit as an oracle harness.
template <class Scalar>
struct FeatureExtract {
  Conv2d<Scalar> c1, c2, c3, c4;
  double slope = 0.1;

  FeatureExtract() = default;
  FeatureExtract(ParamStore<Scalar>& store, const std::string& prefix, Eigen::Index in_ch,
                 const BlockConfig& cfg, bool bias = true)
      : slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    c1 = {store, prefix + ".conv1", in_ch, b, 3, 1, 1, cfg.slope, bias};
    c2 = {store, prefix + ".conv2", b, b, 3, 1, 1, cfg.slope, bias};
    c3 = {store, prefix + ".conv3", b, b, 3, 1, 1, cfg.slope, bias};
    c4 = {store, prefix + ".conv4", b, b, 3, 1, 1, cfg.slope, bias};
  }

  Var<Scalar> operator()(Var<Scalar> lr) const {
    auto h = leaky_relu(c1(lr), slope);
    h = leaky_relu(c2(h), slope);
    h = leaky_relu(c3(h), slope);
    return leaky_relu(c4(h), slope);
  }
};

/// Back-projection up unit: tentative upsample, project back down, upsample
/// the projection error, and add the correction.
template <class Scalar>
struct UpProjection {
  Deconv2d<Scalar> up1, up2;
  Conv2d<Scalar> back;
  double slope = 0.1;

  UpProjection() = default;
  UpProjection(ParamStore<Scalar>& store, const std::string& prefix, const BlockConfig& cfg)
      : slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    const ProjectionTaps t = projection_taps(cfg.scale);
    up1 = {store, prefix + ".up1", b, b, t.k, t.stride, t.pad, cfg.slope};
    back = {store, prefix + ".back", b, b, t.k, t.stride, t.pad, cfg.slope};
    up2 = {store, prefix + ".up2", b, b, t.k, t.stride, t.pad, cfg.slope};
  }

  Var<Scalar> operator()(Var<Scalar> f_lr) const {
    auto h0 = leaky_relu(up1(f_lr), slope);
    auto l0 = leaky_relu(back(h0), slope);
    auto e = sub(l0, f_lr);
    auto h1 = leaky_relu(up2(e), slope);
    return add(h0, h1);
  }
};

/// Mirror of the up unit. `bank_size` is the number of base-width maps in
/// the concatenated input; a 1x1 squeeze folds the bank down first whenever
/// it holds more than one map (the dense variant).
template <class Scalar>
struct DownProjection {
  Conv2d<Scalar> squeeze, down1, down2;
  Deconv2d<Scalar> lift;
  bool has_squeeze = false;
  double slope = 0.1;

  DownProjection() = default;
  DownProjection(ParamStore<Scalar>& store, const std::string& prefix, int bank_size,
                 const BlockConfig& cfg)
      : has_squeeze(bank_size > 1), slope(cfg.slope) {
    if (bank_size < 1) throw std::invalid_argument("bank_size must be >= 1");
    const Eigen::Index b = cfg.base_channels;
    const ProjectionTaps t = projection_taps(cfg.scale);
    if (has_squeeze)
      squeeze = {store, prefix + ".squeeze", b * bank_size, b, 1, 1, 0, cfg.slope};
    down1 = {store, prefix + ".down1", b, b, t.k, t.stride, t.pad, cfg.slope};
    lift = {store, prefix + ".lift", b, b, t.k, t.stride, t.pad, cfg.slope};
    down2 = {store, prefix + ".down2", b, b, t.k, t.stride, t.pad, cfg.slope};
  }

  Var<Scalar> operator()(Var<Scalar> f_bank) const {
    auto h = has_squeeze ? leaky_relu(squeeze(f_bank), slope) : f_bank;
    auto l0 = leaky_relu(down1(h), slope);
    auto h0 = leaky_relu(lift(l0), slope);
    auto e = sub(h0, h);
    auto l1 = leaky_relu(down2(e), slope);
    return add(l0, l1);
  }
};

/// Spatial feature transform: the degradation map is concatenated onto the
/// features and two parallel two-layer conv paths emit a gate and a shift;
/// out = F .* sigmoid(path1) + path2.
template <class Scalar>
struct Sft {
  Conv2d<Scalar> gamma1, gamma2, beta1, beta2;
  double slope = 0.1;

  Sft() = default;
  Sft(ParamStore<Scalar>& store, const std::string& prefix, Eigen::Index f_ch, Eigen::Index d_ch,
      const BlockConfig& cfg)
      : slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    gamma1 = {store, prefix + ".gamma1", f_ch + d_ch, b, 3, 1, 1, cfg.slope};
    gamma2 = {store, prefix + ".gamma2", b, f_ch, 3, 1, 1, cfg.slope};
    beta1 = {store, prefix + ".beta1", f_ch + d_ch, b, 3, 1, 1, cfg.slope};
    beta2 = {store, prefix + ".beta2", b, f_ch, 3, 1, 1, cfg.slope};
  }

  Var<Scalar> operator()(Var<Scalar> f, Var<Scalar> d) const {
    if (f.value().dim(1) != d.value().dim(1) || f.value().dim(2) != d.value().dim(2))
      throw std::invalid_argument("sft: feature and degradation map spatial dims differ");
    auto x = concat_ch<Scalar>({f, d});
    auto gamma = sigmoid(gamma2(leaky_relu(gamma1(x), slope)));
    auto beta = beta2(leaky_relu(beta1(x), slope));
    return add(hadamard(f, gamma), beta);
  }
};

/// Kernel predictor: four stride-2 convs shrink the image while widening
/// channels, global average pooling collapses space, and (for kernel-shaped
/// outputs) a softmax turns the logits into a valid blur kernel.
template <class Scalar>
struct KernelPredict {
  Conv2d<Scalar> c1, c2, c3, c4;
  Eigen::Index out_dim = 0;
  bool normalize = false;
  double slope = 0.1;

  KernelPredict() = default;
  KernelPredict(ParamStore<Scalar>& store, const std::string& prefix, Eigen::Index in_ch,
                Eigen::Index out_dim_, bool normalize_, const BlockConfig& cfg)
      : out_dim(out_dim_), normalize(normalize_), slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    c1 = {store, prefix + ".conv1", in_ch, b, 3, 2, 1, cfg.slope};
    c2 = {store, prefix + ".conv2", b, 2 * b, 3, 2, 1, cfg.slope};
    c3 = {store, prefix + ".conv3", 2 * b, 4 * b, 3, 2, 1, cfg.slope};
    c4 = {store, prefix + ".conv4", 4 * b, out_dim_, 3, 2, 1, cfg.slope};
  }

  Var<Scalar> operator()(Var<Scalar> lr) const {
    if (lr.value().dim(1) < 16 || lr.value().dim(2) < 16)
      throw std::invalid_argument("kernel_predict: input smaller than 16x16");
    auto h = leaky_relu(c1(lr), slope);
    h = leaky_relu(c2(h), slope);
    h = leaky_relu(c3(h), slope);
    h = leaky_relu(c4(h), slope);
    auto v = global_avg_pool(h);
    return normalize ? softmax_flat(v) : v;
  }
};

/// Blur updater: encodes the current SR estimate into a per-entry logit
/// delta and applies it to the previous kernel in log space, so a softmax
/// re-normalization always lands on a valid kernel. With the head zeroed
/// the update is the identity.
template <class Scalar>
struct BlurUpdate {
  Conv2d<Scalar> c1, c2;
  Dense<Scalar> head;
  Eigen::Index k = 0;
  double slope = 0.1;

  BlurUpdate() = default;
  BlurUpdate(ParamStore<Scalar>& store, const std::string& prefix, Eigen::Index in_ch,
             const BlockConfig& cfg)
      : k(cfg.kernel_size), slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    c1 = {store, prefix + ".conv1", in_ch, b, 3, 1, 1, cfg.slope};
    c2 = {store, prefix + ".conv2", b, b, 3, 1, 1, cfg.slope};
    head = {store, prefix + ".head", b, k * k, cfg.slope, /*zero_weights=*/true};
  }

  Var<Scalar> operator()(Var<Scalar> sr, Var<Scalar> k_prev) const {
    if (k_prev.value().rank() != 2 || k_prev.value().dim(0) != k || k_prev.value().dim(1) != k)
      throw std::invalid_argument("blur_update: kernel shape mismatch");
    auto h = leaky_relu(c1(sr), slope);
    h = leaky_relu(c2(h), slope);
    auto delta = head(global_avg_pool(h));
    auto logits = add(log_clamped(flatten(k_prev)), delta);
    return reshape(softmax_flat(logits), {k, k});
  }
};

/// Maps an LR-grid residual to an HR-resolution feature correction:
/// 3x3 conv, 1x1 conv, then a stride-s deconv. The deconv starts at zero
/// so a fresh model ignores the feedback path.
template <class Scalar>
struct ResidualFeedback {
  Conv2d<Scalar> c1, c2;
  Deconv2d<Scalar> up;
  double slope = 0.1;

  ResidualFeedback() = default;
  ResidualFeedback(ParamStore<Scalar>& store, const std::string& prefix, Eigen::Index in_ch,
                   const BlockConfig& cfg, bool zero_output = true)
      : slope(cfg.slope) {
    const Eigen::Index b = cfg.base_channels;
    const ProjectionTaps t = projection_taps(cfg.scale);
    c1 = {store, prefix + ".conv1", in_ch, b, 3, 1, 1, cfg.slope};
    c2 = {store, prefix + ".conv2", b, b, 1, 1, 0, cfg.slope};
    up = {store, prefix + ".up", b, b, t.k, t.stride, t.pad, cfg.slope, /*bias=*/true,
          zero_output};
  }

  Var<Scalar> operator()(Var<Scalar> r) const {
    auto h = leaky_relu(c1(r), slope);
    h = leaky_relu(c2(h), slope);
    return up(h);
  }
};

/// Reconstruction head: one 3x3 conv, no activation. Outputs live on the
/// real line; clamping to [0,1] happens only at image export.
template <class Scalar>
struct Reconstruct {
  Conv2d<Scalar> conv;

  Reconstruct() = default;
  Reconstruct(ParamStore<Scalar>& store, const std::string& name, Eigen::Index in_ch,
              Eigen::Index out_ch, const BlockConfig& cfg) {
    conv = {store, name, in_ch, out_ch, 3, 1, 1, cfg.slope};
  }

  Var<Scalar> operator()(Var<Scalar> f_bank) const { return conv(f_bank); }
};

}  // namespace kbsr
