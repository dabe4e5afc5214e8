#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "kbsr/degradation/degrade.hpp"
#include "kbsr/degradation/kernel.hpp"
#include "kbsr/degradation/kernel_io.hpp"
#include "kbsr/degradation/pca.hpp"
#include "kbsr/eval/metrics.hpp"
#include "kbsr/imaging/image.hpp"
#include "kbsr/losses/losses.hpp"
#include "kbsr/networks/checkpoint.hpp"
#include "kbsr/networks/network.hpp"

namespace kbsr {

/// Training blur distribution. `none` degrades with the delta kernel only,
/// which is how a no-blur ("bicubic-style") baseline is trained.
enum class BlurFamily { isotropic, anisotropic, none };

inline std::string to_string(BlurFamily f) {
  switch (f) {
    case BlurFamily::isotropic: return "isotropic";
    case BlurFamily::anisotropic: return "anisotropic";
    case BlurFamily::none: return "none";
  }
  return "?";
}

inline BlurFamily parse_blur_family(const std::string& s) {
  if (s == "isotropic") return BlurFamily::isotropic;
  if (s == "anisotropic") return BlurFamily::anisotropic;
  if (s == "none") return BlurFamily::none;
  throw std::invalid_argument("unknown blur_family '" + s + "'");
}

struct TrainConfig {
  NetworkConfig net;

  int batch_size = 8;
  long long total_steps = 2000;
  double lr_initial = 1e-4;
  double lr_drop_to = 1e-5;
  long long drop_step = -1;  // -1: drop at 75% of total_steps

  double sigma_min = 0.2;
  double sigma_max = 4.0;
  BlurFamily blur_family = BlurFamily::isotropic;
  Eigen::Index lr_patch = 32;
  int pca_samples = 10000;  // kernel pool for fitting the kcbpn code basis

  uint64_t seed = 0;
  std::string dtype = "float32";  // compute precision: float32 | float64
  std::string dataset_dir;
  std::string val_dir;  // optional; must be disjoint from dataset_dir
  std::string checkpoint_dir;
  long long eval_every = 0;        // 0: no periodic eval
  long long checkpoint_every = 0;  // 0: final checkpoint only

  long long resolved_drop_step() const {
    return drop_step >= 0 ? drop_step : (total_steps * 3) / 4;
  }
};

inline void require_train_config(const TrainConfig& cfg) {
  require_network_config(cfg.net);
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
  if (!(cfg.sigma_min > 0.0 && cfg.sigma_min <= cfg.sigma_max && cfg.sigma_max <= 10.0))
    throw std::invalid_argument("train: sigma range must lie within (0, 10]");
  if (cfg.lr_patch < 1) throw std::invalid_argument("train: lr_patch must be >= 1");
  if (cfg.lr_initial <= 0.0 || cfg.lr_drop_to <= 0.0)
    throw std::invalid_argument("train: learning rates must be positive");
  if (cfg.dtype != "float32" && cfg.dtype != "float64")
    throw std::invalid_argument("train: dtype must be float32 or float64");
}

/// Step-decayed learning rate: exactly one drop, at resolved_drop_step().
inline double lr_schedule(const TrainConfig& cfg, long long step) {
  return step < cfg.resolved_drop_step() ? cfg.lr_initial : cfg.lr_drop_to;
}

// ---------------------------------------------------------------------------
// Data synthesis
// ---------------------------------------------------------------------------

template <class Scalar>
struct Sample {
  Tensor<Scalar> hr;
  Tensor<Scalar> lr;
  Kernel k_gt;
  Eigen::VectorXd code_gt;  // empty unless a code basis was supplied
  GaussianSpec spec;        // sigmas are 0 for the delta (no-blur) family
};

/// One blur draw. Order is fixed so streams replay exactly:
/// isotropic consumes one uniform (shared sigma); anisotropic consumes
/// sigma_x, sigma_y, then theta in [0, pi).
inline GaussianSpec draw_gaussian_spec(Rng& rng, const TrainConfig& cfg) {
  GaussianSpec spec;
  if (cfg.blur_family == BlurFamily::none) {
    spec.sigma_x = spec.sigma_y = spec.theta = 0.0;
    return spec;
  }
  spec.sigma_x = rng.uniform(cfg.sigma_min, cfg.sigma_max);
  if (cfg.blur_family == BlurFamily::isotropic) {
    spec.sigma_y = spec.sigma_x;
    spec.theta = 0.0;
  } else {
    spec.sigma_y = rng.uniform(cfg.sigma_min, cfg.sigma_max);
    spec.theta = rng.uniform(0.0, std::numbers::pi);
  }
  return spec;
}

/// Expected kernel of the configured family, estimated deterministically by
/// averaging `draws` samples; the no-blur family's mean is the delta itself.
inline Kernel family_mean_kernel(const TrainConfig& cfg, int draws = 256) {
  if (cfg.blur_family == BlurFamily::none) return delta_kernel(cfg.net.kernel_size);
  Rng rng(Rng::hash_str(cfg.seed, "mean-kernel"));
  Kernel mean({cfg.net.kernel_size, cfg.net.kernel_size});
  for (int i = 0; i < draws; ++i)
    mean.array() += kernel_from_spec(draw_gaussian_spec(rng, cfg), cfg.net.kernel_size).array();
  mean.array() /= static_cast<double>(draws);
  return mean;
}

/// The kcbpn code basis, fitted once per run on a seeded pool of family draws.
inline KernelCodeContext make_code_context(const TrainConfig& cfg) {
  const uint64_t seed = Rng::hash_str(cfg.seed, "code-basis");
  Rng rng(seed);
  std::vector<Kernel> pool;
  pool.reserve(static_cast<size_t>(cfg.pca_samples));
  for (int i = 0; i < cfg.pca_samples; ++i)
    pool.push_back(kernel_from_spec(draw_gaussian_spec(rng, cfg), cfg.net.kernel_size));
  KernelCodeContext ctx = fit_kernel_pca(pool, cfg.net.code_dim);
  ctx.seed = seed;
  return ctx;
}

/// One training batch, a pure function of (seed, step). Per-sample stream:
/// image index, patch seed, then the blur draw.
template <class Scalar>
std::vector<Sample<Scalar>> synth_batch(const TrainConfig& cfg, long long step,
                                        const std::vector<Tensor<Scalar>>& hr_pool,
                                        const KernelCodeContext* code_ctx = nullptr) {
  if (hr_pool.empty()) throw std::invalid_argument("synth_batch: empty image pool");
  PatchSpec patch_spec;
  patch_spec.lr_patch_size = cfg.lr_patch;
  patch_spec.scale = cfg.net.scale;

  std::vector<Sample<Scalar>> batch;
  batch.reserve(static_cast<size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    Rng rng(Rng::derive(cfg.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
    Sample<Scalar> s;
    const auto& img = hr_pool[rng.below(hr_pool.size())];
    s.hr = random_patch_pair(img, patch_spec, rng.next_u64());
    s.spec = draw_gaussian_spec(rng, cfg);
    s.k_gt = kernel_from_spec(s.spec, cfg.net.kernel_size);
    s.lr = degrade(s.hr, s.k_gt, cfg.net.scale, cfg.net.down_mode);
    if (code_ctx) s.code_gt = encode_kernel(s.k_gt, *code_ctx);
    batch.push_back(std::move(s));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Image pools
// ---------------------------------------------------------------------------

template <class Scalar>
struct Dataset {
  std::vector<std::string> paths;  // canonical, sorted
  std::vector<Tensor<Scalar>> images;
};

template <class Scalar>
Dataset<Scalar> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::invalid_argument("load_dataset: no directory " + dir);
  Dataset<Scalar> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.paths.push_back(fs::canonical(e.path()).string());
  std::sort(out.paths.begin(), out.paths.end());
  if (out.paths.empty()) throw std::invalid_argument("load_dataset: no .png files in " + dir);
  out.images.reserve(out.paths.size());
  for (const auto& p : out.paths) out.images.push_back(load_image(p).template cast<Scalar>());
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with the standard defaults and bias correction. Moments are keyed by
/// parameter name so optimizer state survives a checkpoint round trip.
template <class Scalar>
class Adam {
 public:
  explicit Adam(ParamStore<Scalar>& store, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store.all()) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(double lr) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar corr1 = static_cast<Scalar>(1.0 - std::pow(beta1_, t_));
    const Scalar corr2 = static_cast<Scalar>(1.0 - std::pow(beta2_, t_));
    const auto& params = store_->all();
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      m_[i].array() = b1 * m_[i].array() + (Scalar(1) - b1) * p.grad.array();
      v_[i].array() = b2 * v_[i].array() + (Scalar(1) - b2) * p.grad.array().square();
      p.value.array() -= static_cast<Scalar>(lr) * (m_[i].array() / corr1) /
                         ((v_[i].array() / corr2).sqrt() + static_cast<Scalar>(eps_));
    }
  }

  long long steps_done() const { return t_; }

  void save(const std::string& path) const {
    const auto& params = store_->all();
    std::vector<Tensor<double>> owned;
    owned.reserve(2 * params.size() + 1);
    std::vector<std::pair<std::string, const Tensor<double>*>> items;
    Tensor<double> t({1});
    t[0] = static_cast<double>(t_);
    owned.push_back(std::move(t));
    items.emplace_back("t", &owned.back());
    for (size_t i = 0; i < params.size(); ++i) {
      owned.push_back(m_[i].template cast<double>());
      items.emplace_back("m." + params[i]->name, &owned.back());
      owned.push_back(v_[i].template cast<double>());
      items.emplace_back("v." + params[i]->name, &owned.back());
    }
    save_tensors(path, items);
  }

  void load(const std::string& path) {
    auto loaded = load_tensors(path);
    const auto& params = store_->all();
    if (loaded.size() != 2 * params.size() + 1)
      throw std::runtime_error("adam load: state does not match the parameter store");
    t_ = static_cast<long long>(loaded.at("t")[0]);
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = loaded.at("m." + params[i]->name).template cast<Scalar>();
      v_[i] = loaded.at("v." + params[i]->name).template cast<Scalar>();
      if (m_[i].shape() != params[i]->value.shape())
        throw std::runtime_error("adam load: moment shape mismatch for " + params[i]->name);
    }
  }

 private:
  ParamStore<Scalar>* store_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Tensor<Scalar>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoint plumbing for any compute precision (archives are float64)
// ---------------------------------------------------------------------------

template <class Scalar>
void save_store(const ParamStore<Scalar>& store, const std::string& path) {
  const auto& params = store.all();
  std::vector<Tensor<double>> owned;
  owned.reserve(params.size());
  std::vector<std::pair<std::string, const Tensor<double>*>> items;
  for (const auto& p : params) {
    owned.push_back(p->value.template cast<double>());
    items.emplace_back(p->name, &owned.back());
  }
  save_tensors(path, items);
}

template <class Scalar>
void load_store(ParamStore<Scalar>& store, const std::string& path) {
  auto loaded = load_tensors(path);
  for (const auto& p : store.all()) {
    auto it = loaded.find(p->name);
    if (it == loaded.end())
      throw std::runtime_error("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for '" + p->name + "'");
    p->value = it->second.template cast<Scalar>();
    loaded.erase(it);
  }
  if (!loaded.empty())
    throw std::runtime_error("checkpoint has unknown parameter '" + loaded.begin()->first + "'");
}

// ---------------------------------------------------------------------------
// Config serialization: JSON for the checkpoint snapshot, plain hierarchical
// key-value text ("net.stages = 3", '#' comments) for user-facing files.
// ---------------------------------------------------------------------------

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

std::string train_config_to_text(const TrainConfig& cfg);

/// Set one field by dotted key from its text form; throws on unknown keys or
/// unparsable values. This is the single authority used by both config files
/// and command-line overrides.
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Parse key-value text on top of `base` (file settings override defaults).
TrainConfig train_config_from_text(const std::string& text, const TrainConfig& base = {});

// ---------------------------------------------------------------------------
// Evaluation hook
// ---------------------------------------------------------------------------

struct EvalRow {
  long long step = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double kernel_l1 = std::numeric_limits<double>::quiet_NaN();  // NaN: variant estimates none
  double baseline_kernel_l1 = 0.0;

  static const char* csv_header() { return "step,psnr,ssim,kernel_l1,baseline_kernel_l1"; }
};

/// Mean metrics of a super-resolver over samples, gradient-free. The callback
/// returns the SR image and the kernel estimate (empty tensor when the model
/// does not produce one). The baseline column scores the family mean kernel
/// against the same ground truths.
template <class Scalar, class Fn>
EvalRow eval_over(Fn&& infer, const std::vector<Sample<Scalar>>& samples, const TrainConfig& cfg,
                  const Kernel& mean_kernel) {
  if (samples.empty()) throw std::invalid_argument("eval: no samples");
  EvalRow row;
  row.kernel_l1 = 0.0;
  int kernel_rows = 0;
  for (const auto& s : samples) {
    auto [sr, k_est] = infer(s);
    const Image sr_d = sr.template cast<double>();
    const Image hr_d = s.hr.template cast<double>();
    row.psnr += psnr(sr_d, hr_d, cfg.net.scale, /*luma_only=*/true);
    row.ssim += ssim(sr_d, hr_d, cfg.net.scale, /*luma_only=*/true);
    if (!k_est.empty()) {
      row.kernel_l1 += (k_est.array() - s.k_gt.array()).abs().mean();
      ++kernel_rows;
    }
    row.baseline_kernel_l1 += (mean_kernel.array() - s.k_gt.array()).abs().mean();
  }
  const double n = static_cast<double>(samples.size());
  row.psnr /= n;
  row.ssim /= n;
  row.baseline_kernel_l1 /= n;
  row.kernel_l1 = kernel_rows ? row.kernel_l1 / kernel_rows
                              : std::numeric_limits<double>::quiet_NaN();
  return row;
}

/// Kernel-space estimate of a forward pass: direct for the kernel-refining
/// variant, decoded through the fitted basis for the code-predicting one,
/// empty for the unconditioned baseline.
template <class Scalar>
Kernel kernel_estimate(const Network<Scalar>& net, const ForwardResult<Scalar>& res) {
  if (net.config().variant == Variant::kKbpn) return res.kernel.template cast<double>();
  if (net.config().variant == Variant::kKcbpn) {
    const Tensor<double> code = res.kernel.template cast<double>();
    return decode_kernel(Eigen::Map<const Eigen::VectorXd>(code.data(), code.size()),
                         net.code_context());
  }
  return {};
}

/// Network adapter: kbpn reports its estimated kernel directly; kcbpn decodes
/// its code through the fitted basis back to kernel space; dbpn_bl reports
/// none.
template <class Scalar>
EvalRow eval_hook(const Network<Scalar>& net, const std::vector<Sample<Scalar>>& samples,
                  const TrainConfig& cfg, const Kernel& mean_kernel) {
  return eval_over(
      [&](const Sample<Scalar>& s) -> std::pair<Tensor<Scalar>, Kernel> {
        auto res = net.infer(s.lr);
        Kernel k_est = kernel_estimate(net, res);
        return {std::move(res.sr), std::move(k_est)};
      },
      samples, cfg, mean_kernel);
}

/// Whole-image validation samples (one per pool image, dims cropped to a
/// multiple of the scale), drawn from a stream independent of training steps.
template <class Scalar>
std::vector<Sample<Scalar>> make_val_set(const TrainConfig& cfg,
                                         const std::vector<Tensor<Scalar>>& pool,
                                         const KernelCodeContext* code_ctx = nullptr) {
  std::vector<Sample<Scalar>> out;
  out.reserve(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    Rng rng(Rng::derive(Rng::hash_str(cfg.seed, "val"), static_cast<uint64_t>(i)));
    Sample<Scalar> s;
    const Eigen::Index h = pool[i].dim(1) - pool[i].dim(1) % cfg.net.scale;
    const Eigen::Index w = pool[i].dim(2) - pool[i].dim(2) % cfg.net.scale;
    s.hr = crop(pool[i], 0, 0, h, w);
    s.spec = draw_gaussian_spec(rng, cfg);
    s.k_gt = kernel_from_spec(s.spec, cfg.net.kernel_size);
    s.lr = degrade(s.hr, s.k_gt, cfg.net.scale, cfg.net.down_mode);
    if (code_ctx) s.code_gt = encode_kernel(s.k_gt, *code_ctx);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string checkpoint_dir;
  std::string final_step_dir;
  std::string metrics_csv;
  std::string eval_csv;  // empty when no validation ran
  long long steps = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Raised when the loss stops being finite; the offending batch and traces
/// are dumped under checkpoint_dir/nan-dump before throwing.
struct NanAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Scalar>
TrainResult train(const TrainConfig& cfg, const std::string& resume_dir = "");

/// Dispatch on cfg.dtype.
TrainResult train_any(const TrainConfig& cfg, const std::string& resume_dir = "");

/// Rebuild a network from one step-NNNNNN checkpoint directory. The kcbpn
/// code basis is read from the run's saved copy when present, otherwise
/// re-fitted deterministically from the config.
template <class Scalar>
std::pair<TrainConfig, std::unique_ptr<Network<Scalar>>> load_model(const std::string& step_dir);

extern template TrainResult train<float>(const TrainConfig&, const std::string&);
extern template TrainResult train<double>(const TrainConfig&, const std::string&);
extern template std::pair<TrainConfig, std::unique_ptr<Network<float>>> load_model<float>(
    const std::string&);
extern template std::pair<TrainConfig, std::unique_ptr<Network<double>>> load_model<double>(
    const std::string&);

}  // namespace kbsr
