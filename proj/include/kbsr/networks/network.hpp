#pragma once

#include <string>
#include <vector>

#include "kbsr/blocks/blocks.hpp"
#include "kbsr/degradation/pca.hpp"
#include "kbsr/networks/config.hpp"

namespace kbsr {

/// Graph-side handles produced by one forward pass; invalid Vars mark
/// quantities a variant does not produce.
template <class Scalar>
struct StageGraph {
  int t = 0;
  Var<Scalar> i_sr;  // per-stage SR estimate (kbpn)
  Var<Scalar> k;     // per-stage kernel (kbpn)
  Var<Scalar> r_lr;  // LR-grid residual (kbpn)
  Var<Scalar> f_sr;  // HR feature map of the stage
};

template <class Scalar>
struct ForwardGraph {
  Var<Scalar> lr;
  Var<Scalar> sr;
  Var<Scalar> kernel;  // kbpn: (k,k) kernel; kcbpn: (a) code; dbpn_bl: invalid
  std::vector<StageGraph<Scalar>> stages;
};

/// Value-side snapshot of a forward pass, for inference and visualization.
template <class Scalar>
struct StageTrace {
  int t = 0;
  Tensor<Scalar> i_sr;
  Tensor<Scalar> k;
  Tensor<Scalar> r_lr;
  Tensor<Scalar> f_sr;
};

template <class Scalar>
struct ForwardResult {
  Tensor<Scalar> sr;
  Tensor<Scalar> kernel;
  std::vector<StageTrace<Scalar>> traces;
};

/// One of the three super-resolvers. All variants share the extractor, the
/// per-stage projection pair, and the final dense reconstruction; the
/// conditioned variants add their kernel machinery per stage. Parameters
/// live in an owned store under stable hierarchical names, so identically
/// named sub-blocks start from identical weights across variants built with
/// the same master seed.
template <class Scalar>
class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t master_seed,
          KernelCodeContext code_ctx = KernelCodeContext{})
      : cfg_(cfg), store_(master_seed), code_ctx_(std::move(code_ctx)) {
    require_network_config(cfg_);
    const BlockConfig bc = cfg_.block();
    const int T = cfg_.stages;
    const Eigen::Index c = cfg_.channels;
    const Eigen::Index kk =
        static_cast<Eigen::Index>(cfg_.kernel_size) * cfg_.kernel_size;

    if (cfg_.variant == Variant::kKcbpn) {
      if (code_ctx_.basis.size() == 0)
        throw std::invalid_argument("kcbpn requires a fitted kernel-code basis");
      if (code_ctx_.a != cfg_.code_dim || code_ctx_.k != cfg_.kernel_size)
        throw std::invalid_argument("kernel-code basis does not match the network config");
    }

    features_ = {store_, "features", c, bc};
    for (int t = 1; t <= T; ++t) {
      const std::string s = "stage" + std::to_string(t);
      ups_.emplace_back(store_, s + ".up", bc);
      if (cfg_.variant == Variant::kKbpn) {
        stage_recs_.emplace_back(store_, s + ".reconstruct", bc.base_channels * t, c, bc);
        updaters_.emplace_back(store_, s + ".updater", c, bc);
        if (cfg_.enhance) feedbacks_.emplace_back(store_, s + ".feedback", c, bc);
      }
      // The down-projection (and its conditioning) exists to hand LR
      // features to the next stage; the last stage has no successor.
      if (t == T) break;
      downs_.emplace_back(store_, s + ".down", t, bc);
      if (cfg_.variant == Variant::kKcbpn)
        sfts_.emplace_back(store_, s + ".sft", bc.base_channels, cfg_.code_dim, bc);
      else if (cfg_.variant == Variant::kKbpn)
        sfts_.emplace_back(store_, s + ".sft", bc.base_channels, kk, bc);
    }
    if (cfg_.variant == Variant::kKcbpn)
      predictor_ = {store_, "predictor", c, cfg_.code_dim, /*normalize=*/false, bc};
    else if (cfg_.variant == Variant::kKbpn)
      predictor_ = {store_, "predictor", c, kk, /*normalize=*/true, bc};
    reconstruct_ = {store_, "reconstruct", bc.base_channels * T, c, bc};
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }
  const KernelCodeContext& code_context() const { return code_ctx_; }

  ForwardGraph<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& lr_img) const {
    switch (cfg_.variant) {
      case Variant::kDbpnBl:
        return forward_projection(tape, lr_img, /*conditioned=*/false);
      case Variant::kKcbpn:
        return forward_projection(tape, lr_img, /*conditioned=*/true);
      case Variant::kKbpn:
        return forward_kbpn(tape, lr_img);
    }
    throw std::logic_error("unknown variant");
  }

  /// Grad-free forward returning plain tensors.
  ForwardResult<Scalar> infer(const Tensor<Scalar>& lr_img) const {
    Tape<Scalar> tape(false);
    const ForwardGraph<Scalar> g = forward(tape, lr_img);
    ForwardResult<Scalar> out;
    out.sr = g.sr.value();
    if (g.kernel) out.kernel = g.kernel.value();
    for (const auto& s : g.stages) {
      StageTrace<Scalar> tr;
      tr.t = s.t;
      if (s.i_sr) tr.i_sr = s.i_sr.value();
      if (s.k) tr.k = s.k.value();
      if (s.r_lr) tr.r_lr = s.r_lr.value();
      if (s.f_sr) tr.f_sr = s.f_sr.value();
      out.traces.push_back(std::move(tr));
    }
    return out;
  }

  /// Block components, exposed for tests and visualization tooling.
  FeatureExtract<Scalar> features_;
  std::vector<UpProjection<Scalar>> ups_;
  std::vector<DownProjection<Scalar>> downs_;
  std::vector<Sft<Scalar>> sfts_;
  std::vector<Reconstruct<Scalar>> stage_recs_;
  std::vector<BlurUpdate<Scalar>> updaters_;
  std::vector<ResidualFeedback<Scalar>> feedbacks_;
  KernelPredict<Scalar> predictor_;
  Reconstruct<Scalar> reconstruct_;

 private:
  /// Shared skeleton of DBPN-Bl and KCBPN: iterative up/down projections
  /// over a growing dense bank; KCBPN additionally gates each stage's LR
  /// features on the predicted kernel code.
  ForwardGraph<Scalar> forward_projection(Tape<Scalar>& tape, const Tensor<Scalar>& lr_img,
                                          bool conditioned) const {
    ForwardGraph<Scalar> out;
    out.lr = tape.input(lr_img);
    Var<Scalar> d_map;
    if (conditioned) {
      out.kernel = predictor_(out.lr);
      d_map = stretch_to_map(out.kernel, lr_img.dim(1), lr_img.dim(2));
    }
    auto f_lr = features_(out.lr);
    std::vector<Var<Scalar>> bank;
    for (int t = 1; t <= cfg_.stages; ++t) {
      const size_t i = static_cast<size_t>(t - 1);
      auto f_sr = ups_[i](f_lr);
      bank.push_back(f_sr);
      out.stages.push_back({t, {}, {}, {}, f_sr});
      if (t == cfg_.stages) break;
      auto f_down = downs_[i](concat_ch(bank));
      f_lr = conditioned ? sfts_[i](f_down, d_map) : f_down;
    }
    out.sr = reconstruct_(concat_ch(bank));
    return out;
  }

  ForwardGraph<Scalar> forward_kbpn(Tape<Scalar>& tape, const Tensor<Scalar>& lr_img) const {
    const Eigen::Index k = cfg_.kernel_size;
    ForwardGraph<Scalar> out;
    out.lr = tape.input(lr_img);
    auto kernel = reshape(predictor_(out.lr), {k, k});  // K_0
    auto f_lr = features_(out.lr);
    std::vector<Var<Scalar>> bank;
    for (int t = 1; t <= cfg_.stages; ++t) {
      const size_t i = static_cast<size_t>(t - 1);
      // (1) tentative HR features joined onto the bank of earlier stages
      auto f_sr_hat = ups_[i](f_lr);
      std::vector<Var<Scalar>> tentative = bank;
      tentative.push_back(f_sr_hat);
      // (2) intermediate SR image, kernel update, and re-degradation
      auto i_sr = stage_recs_[i](concat_ch(tentative));
      kernel = updaters_[i](i_sr, kernel);
      auto lr_hat = degrade(i_sr, kernel, cfg_.scale, cfg_.down_mode);
      // (3) LR residual feeds back into the stage's HR features (unless the
      // enhancement path is ablated away)
      auto r_lr = sub(lr_hat, out.lr);
      auto f_sr = cfg_.enhance ? add(f_sr_hat, feedbacks_[i](r_lr)) : f_sr_hat;
      bank.push_back(f_sr);
      out.stages.push_back({t, i_sr, kernel, r_lr, f_sr});
      if (t == cfg_.stages) break;
      auto f_down = downs_[i](concat_ch(bank));
      // (4) condition the LR features on the current kernel estimate
      auto d_map = stretch_to_map(flatten(kernel), lr_img.dim(1), lr_img.dim(2));
      f_lr = sfts_[i](f_down, d_map);
    }
    out.sr = reconstruct_(concat_ch(bank));
    out.kernel = kernel;  // K_T
    return out;
  }

  NetworkConfig cfg_;
  ParamStore<Scalar> store_;
  KernelCodeContext code_ctx_;
};

/// Closed-form trainable-scalar count of a configuration, derived from the
/// block definitions alone. Tests cross-check it against the sizes of the
/// actually allocated parameter tensors.
inline Eigen::Index count_parameters(const NetworkConfig& cfg) {
  require_network_config(cfg);
  const Eigen::Index b = cfg.base_channels, c = cfg.channels;
  const Eigen::Index kk = static_cast<Eigen::Index>(cfg.kernel_size) * cfg.kernel_size;
  const Eigen::Index kp = projection_taps(cfg.scale).k;
  const Eigen::Index a = cfg.code_dim;
  const auto conv = [](Eigen::Index out, Eigen::Index in, Eigen::Index k) {
    return out * in * k * k + out;
  };

  Eigen::Index n = conv(b, c, 3) + 3 * conv(b, b, 3);  // extractor
  for (Eigen::Index t = 1; t <= cfg.stages; ++t) {
    n += 3 * conv(b, b, kp);  // up unit
    if (cfg.variant == Variant::kKbpn) {
      n += conv(c, b * t, 3);                              // stage reconstruct
      n += conv(b, c, 3) + conv(b, b, 3) + (kk * b + kk);  // updater
      if (cfg.enhance)
        n += conv(b, c, 3) + conv(b, b, 1) + conv(b, b, kp);  // feedback
    }
    if (t == cfg.stages) break;  // no hand-off to a next stage
    n += 3 * conv(b, b, kp);            // down unit
    if (t > 1) n += conv(b, b * t, 1);  // dense squeeze
    if (cfg.variant == Variant::kKcbpn)
      n += 2 * conv(b, b + a, 3) + 2 * conv(b, b, 3);  // sft paths
    if (cfg.variant == Variant::kKbpn)
      n += 2 * conv(b, b + kk, 3) + 2 * conv(b, b, 3);  // sft paths
  }
  if (cfg.variant == Variant::kKcbpn)
    n += conv(b, c, 3) + conv(2 * b, b, 3) + conv(4 * b, 2 * b, 3) + conv(a, 4 * b, 3);
  if (cfg.variant == Variant::kKbpn)
    n += conv(b, c, 3) + conv(2 * b, b, 3) + conv(4 * b, 2 * b, 3) + conv(kk, 4 * b, 3);
  n += conv(c, b * cfg.stages, 3);  // final reconstruct
  return n;
}

}  // namespace kbsr
