// kbsr command-line front end: thin dispatch over the library. Every
// subcommand prints its resolved configuration before doing work, so a run
// is reproducible from its log alone. Exit codes: 0 success, 1 usage error,
// 2 runtime failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "kbsr/autograd/ops.hpp"
#include "kbsr/blocks/layers.hpp"
#include "kbsr/degradation/degrade.hpp"
#include "kbsr/degradation/kernel.hpp"
#include "kbsr/degradation/kernel_io.hpp"
#include "kbsr/eval/bench.hpp"
#include "kbsr/eval/metrics.hpp"
#include "kbsr/eval/plot.hpp"
#include "kbsr/eval/viz.hpp"
#include "kbsr/imaging/image.hpp"
#include "kbsr/networks/network.hpp"
#include "kbsr/training/train.hpp"

namespace {

using namespace kbsr;
namespace fs = std::filesystem;

/// Flag/argument mistakes detected after CLI11 parsing; mapped to exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Relative data paths resolve under $KBSR_DATA_ROOT when it is set, so a
/// corpus can move without editing configs.
std::string resolve_data_path(const std::string& p) {
  if (p.empty()) return p;
  const char* root = std::getenv("KBSR_DATA_ROOT");
  if (!root || !*root) return p;
  const fs::path fp(p);
  if (fp.is_absolute()) return p;
  return (fs::path(root) / fp).string();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("expected a number, got '" + s + "'");
  }
}

int to_int(const std::string& s) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("expected an integer, got '" + s + "'");
  }
}

std::string fmt_f(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

/// "resolved config:" block; each line is a `key = value` pair in the same
/// shape the config-file parser accepts.
void echo_config(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::puts("resolved config:");
  for (const auto& [k, v] : kv) std::printf("%s = %s\n", k.c_str(), v.c_str());
}

std::uint64_t draw_random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Tensor<double> random_tensor(Shape dims, std::uint64_t seed, double lo, double hi) {
  Tensor<double> t(std::move(dims));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// synth-kernel

int cmd_synth_kernel(double sx, double sy, double theta, int k, const std::string& out) {
  if (sy < 0.0) sy = sx;  // default: isotropic
  if (k < 1 || k % 2 == 0) throw UsageError("--k must be odd and positive");
  const GaussianSpec spec{sx, sy, theta};
  const bool is_delta = sx == 0.0 && sy == 0.0 && theta == 0.0;
  if (!is_delta && (sx <= 0.0 || sy <= 0.0))
    throw UsageError("--sigma-x/--sigma-y must both be positive (or all zero for a delta kernel)");
  echo_config({{"command", "synth-kernel"},
               {"sigma_x", fmt_f(sx)},
               {"sigma_y", fmt_f(sy)},
               {"theta", fmt_f(theta)},
               {"k", std::to_string(k)},
               {"out", out}});
  const Kernel kernel = kernel_from_spec(spec, k);
  KernelSidecar side;
  side.k = k;
  if (!is_delta) side.spec = spec;
  save_kernel(out, kernel, side);
  std::printf("wrote %s and %s.json (%s)\n", out.c_str(), out.c_str(),
              is_delta ? "delta kernel" : "gaussian kernel");
  return 0;
}

// ---------------------------------------------------------------------------
// degrade

int cmd_degrade(const std::string& hr, const std::string& kernel_path, int scale,
                const std::string& mode_str, const std::string& out) {
  if (scale < 1) throw UsageError("--scale must be >= 1");
  DownMode mode;
  try {
    mode = parse_down_mode(mode_str);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const std::string hr_res = resolve_data_path(hr);
  echo_config({{"command", "degrade"},
               {"hr", hr_res},
               {"kernel", kernel_path},
               {"scale", std::to_string(scale)},
               {"mode", mode_str},
               {"out", out}});
  const Image img = load_image(hr_res);
  const Kernel kernel = load_kernel(kernel_path);
  const Image lr = degrade(img, kernel, scale, mode);
  save_image(out, lr);
  std::printf("wrote %s (%lldx%lld -> %lldx%lld)\n", out.c_str(),
              static_cast<long long>(img.dim(1)), static_cast<long long>(img.dim(2)),
              static_cast<long long>(lr.dim(1)), static_cast<long long>(lr.dim(2)));
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_file, const std::vector<std::string>& sets,
              const std::string& resume, bool seed_given, std::uint64_t seed_flag) {
  TrainConfig cfg;
  bool seed_explicit = seed_given;
  if (!config_file.empty()) {
    const std::string text = slurp(config_file);
    for (const std::string& raw : split(text, '\n')) {
      std::string line = raw.substr(0, raw.find('#'));
      std::istringstream ss(line);
      std::string key;
      if (ss >> key && key == "seed") seed_explicit = true;
    }
    try {
      cfg = train_config_from_text(text);
    } catch (const std::exception& e) {
      throw UsageError(config_file + ": " + e.what());
    }
  }
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "seed") seed_explicit = true;
    try {
      apply_config_kv(cfg, key, value);
    } catch (const std::exception& e) {
      throw UsageError(std::string("--set ") + kv + ": " + e.what());
    }
  }
  if (seed_given) cfg.seed = seed_flag;
  if (!seed_explicit) {
    cfg.seed = draw_random_seed();
    std::printf("seed not specified; drew %llu\n", static_cast<unsigned long long>(cfg.seed));
  }
  cfg.dataset_dir = resolve_data_path(cfg.dataset_dir);
  cfg.val_dir = resolve_data_path(cfg.val_dir);

  std::puts("resolved config:");
  std::fputs(train_config_to_text(cfg).c_str(), stdout);
  if (!resume.empty()) std::printf("resume %s\n", resume.c_str());

  const TrainResult res = train_any(cfg, resume);
  std::printf("trained %lld steps, final loss %.6f\n", static_cast<long long>(res.steps),
              res.final_loss);
  std::printf("final checkpoint: %s\n", res.final_step_dir.c_str());
  std::printf("metrics: %s\n", res.metrics_csv.c_str());
  if (!res.eval_csv.empty()) std::printf("eval: %s\n", res.eval_csv.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

std::vector<GaussianSpec> parse_conditions(const std::string& sigmas, const std::string& aniso,
                                           bool with_delta) {
  std::vector<GaussianSpec> blurs;
  if (with_delta) blurs.push_back({0.0, 0.0, 0.0});
  for (const std::string& tok : split(sigmas, ',')) {
    if (tok.empty()) continue;
    const double s = to_double(tok);
    blurs.push_back({s, s, 0.0});
  }
  if (!aniso.empty()) {
    for (const std::string& grp : split(aniso, ';')) {
      if (grp.empty()) continue;
      const auto parts = split(grp, ':');
      if (parts.size() != 3)
        throw UsageError("--aniso expects sx:sy:theta triplets, got '" + grp + "'");
      blurs.push_back({to_double(parts[0]), to_double(parts[1]), to_double(parts[2])});
    }
  }
  if (blurs.empty()) throw UsageError("no blur conditions: give --sigmas, --aniso, or --delta");
  return blurs;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& sigmas,
             const std::string& aniso, bool with_delta, bool rgb, int crop,
             const std::string& csv_out, const std::string& table_out) {
  auto [tcfg, net] = load_model<double>(ckpt);
  BenchSpec spec;
  spec.dataset_dir = resolve_data_path(data);
  spec.blurs = parse_conditions(sigmas, aniso, with_delta);
  spec.scale = tcfg.net.scale;
  spec.kernel_size = tcfg.net.kernel_size;
  spec.down_mode = tcfg.net.down_mode;
  spec.crop_border = crop < 0 ? tcfg.net.scale : crop;
  spec.luma_only = !rgb;
  echo_config({{"command", "eval"},
               {"ckpt", ckpt},
               {"data", spec.dataset_dir},
               {"variant", to_string(tcfg.net.variant)},
               {"scale", std::to_string(spec.scale)},
               {"kernel_size", std::to_string(spec.kernel_size)},
               {"down_mode", to_string(spec.down_mode)},
               {"crop_border", std::to_string(spec.crop_border)},
               {"luma_only", spec.luma_only ? "true" : "false"},
               {"conditions", std::to_string(spec.blurs.size())}});

  Network<double>* raw = net.get();
  const BenchModel model = [raw](const Image& lr) -> std::pair<Image, Kernel> {
    auto res = raw->infer(lr);
    Kernel k = kernel_estimate(*raw, res);
    return {std::move(res.sr), std::move(k)};
  };
  const BenchTable table = run_benchmark(model, spec);
  std::fputs(table.text.c_str(), stdout);
  if (!csv_out.empty()) {
    std::ofstream(csv_out, std::ios::binary) << table.csv;
    std::printf("wrote %s\n", csv_out.c_str());
  }
  if (!table_out.empty()) {
    std::ofstream(table_out, std::ios::binary) << table.text;
    std::printf("wrote %s\n", table_out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer / viz-traces

void write_kernel_outputs(const Kernel& k_est, const fs::path& bin_path, DownMode mode) {
  KernelSidecar side;
  side.k = static_cast<int>(k_est.dim(0));
  side.down_mode = mode;  // estimated kernel: no sigma/theta in the sidecar
  save_kernel(bin_path, k_est, side);
  Image render({1, k_est.dim(0), k_est.dim(1)});
  double peak = 0.0;
  for (Eigen::Index i = 0; i < k_est.size(); ++i) peak = std::max(peak, k_est[i]);
  for (Eigen::Index i = 0; i < k_est.size(); ++i)
    render[i] = peak > 0.0 ? k_est[i] / peak : 0.0;
  fs::path png = bin_path;
  png.replace_extension(".png");
  save_image(png, render);
  std::printf("wrote %s, %s.json, %s\n", bin_path.string().c_str(), bin_path.string().c_str(),
              png.string().c_str());
}

int cmd_infer(const std::string& ckpt, const std::string& lr_path, const std::string& out,
              const std::string& kernel_out, const std::string& dump_traces) {
  auto [tcfg, net] = load_model<double>(ckpt);
  const std::string lr_res = resolve_data_path(lr_path);
  echo_config({{"command", "infer"},
               {"ckpt", ckpt},
               {"lr", lr_res},
               {"out", out},
               {"variant", to_string(tcfg.net.variant)},
               {"scale", std::to_string(tcfg.net.scale)}});
  if (!dump_traces.empty() && tcfg.net.variant != Variant::kKbpn)
    throw UsageError("--dump-traces requires a checkpoint of the kernel-refining variant (kbpn)");

  const Image lr = load_image(lr_res);
  const auto res = net->infer(lr);
  save_image(out, res.sr);
  std::printf("wrote %s (%lldx%lld)\n", out.c_str(), static_cast<long long>(res.sr.dim(1)),
              static_cast<long long>(res.sr.dim(2)));

  const Kernel k_est = kernel_estimate(*net, res);
  if (!k_est.empty()) {
    fs::path kbin;
    if (!kernel_out.empty()) {
      kbin = kernel_out;
    } else {
      kbin = out;
      kbin.replace_extension();
      kbin += "-kernel.bin";
    }
    write_kernel_outputs(k_est, kbin, tcfg.net.down_mode);
  }
  if (!dump_traces.empty()) {
    const TraceVizPaths paths =
        visualize_traces(res, lr, tcfg.net.scale, tcfg.net.down_mode, dump_traces);
    std::printf("wrote %zu stage renders under %s (residual scale max %.6g)\n",
                paths.feature_pngs.size() + paths.residual_pngs.size() + 1, dump_traces.c_str(),
                paths.residual_max);
  }
  return 0;
}

int cmd_viz_traces(const std::string& ckpt, const std::string& lr_path, const std::string& out) {
  auto [tcfg, net] = load_model<double>(ckpt);
  if (tcfg.net.variant != Variant::kKbpn)
    throw UsageError("viz-traces requires a checkpoint of the kernel-refining variant (kbpn)");
  const std::string lr_res = resolve_data_path(lr_path);
  echo_config(
      {{"command", "viz-traces"}, {"ckpt", ckpt}, {"lr", lr_res}, {"out", out}});
  const Image lr = load_image(lr_res);
  const auto res = net->infer(lr);
  const TraceVizPaths paths =
      visualize_traces(res, lr, tcfg.net.scale, tcfg.net.down_mode, out);
  for (const auto& p : paths.feature_pngs) std::printf("wrote %s\n", p.c_str());
  for (const auto& p : paths.residual_pngs) std::printf("wrote %s\n", p.c_str());
  std::printf("wrote %s (residual scale max %.6g)\n", paths.final_residual_png.c_str(),
              paths.residual_max);
  return 0;
}

// ---------------------------------------------------------------------------
// viz-kernel

int cmd_viz_kernel(const std::string& est, const std::string& gt, const std::string& out) {
  echo_config({{"command", "viz-kernel"}, {"est", est}, {"gt", gt}, {"out", out}});
  const Kernel k_est = load_kernel(est);
  const Kernel k_gt = load_kernel(gt);
  const KernelVizPaths paths = visualize_kernel(k_est, k_gt, out);
  std::printf("wrote %s, %s, %s, %s\n", paths.est_png.c_str(), paths.gt_png.c_str(),
              paths.pair_png.c_str(), paths.sidecar_json.c_str());
  std::printf("kernel L1: %.6g\n", paths.l1);
  return 0;
}

// ---------------------------------------------------------------------------
// plot-params

int cmd_plot_params(const std::string& from_csv, const std::string& variant,
                    const std::string& stages, int base_channels, int k, int scale, int code_dim,
                    int channels, const std::string& psnr, const std::string& csv_out,
                    const std::string& svg_out) {
  if (svg_out.empty()) throw UsageError("--svg is required");
  if (!from_csv.empty()) {
    echo_config({{"command", "plot-params"}, {"from_csv", from_csv}, {"svg", svg_out}});
    plot_from_csv(from_csv, svg_out);
    std::printf("wrote %s\n", svg_out.c_str());
    return 0;
  }
  if (csv_out.empty()) throw UsageError("--csv is required (or use --from-csv)");
  NetworkConfig base;
  try {
    base.variant = parse_variant(variant);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  base.base_channels = base_channels;
  base.kernel_size = k;
  base.scale = scale;
  base.code_dim = code_dim;
  base.channels = channels;
  std::vector<int> counts;
  for (const std::string& tok : split(stages, ','))
    if (!tok.empty()) counts.push_back(to_int(tok));
  if (counts.empty()) throw UsageError("--stages expects a comma-separated list, e.g. 1,3,4,7");
  std::map<int, double> psnr_map;
  if (!psnr.empty()) {
    for (const std::string& kv : split(psnr, ',')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw UsageError("--psnr expects stages=value pairs, got '" + kv + "'");
      psnr_map[to_int(kv.substr(0, eq))] = to_double(kv.substr(eq + 1));
    }
  }
  echo_config({{"command", "plot-params"},
               {"variant", variant},
               {"stages", stages},
               {"base_channels", std::to_string(base_channels)},
               {"kernel_size", std::to_string(k)},
               {"scale", std::to_string(scale)},
               {"code_dim", std::to_string(code_dim)},
               {"channels", std::to_string(channels)},
               {"csv", csv_out},
               {"svg", svg_out}});
  plot_params_vs_stages(base, counts, psnr_map, csv_out, svg_out);
  std::printf("wrote %s and %s\n", csv_out.c_str(), svg_out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// selfcheck: in-process oracle suites. Each check re-derives the expected
// answer from first principles (direct convolution, finite differences)
// rather than calling the code path under test twice.

int cmd_selfcheck() {
  echo_config({{"command", "selfcheck"}});
  int failures = 0;
  auto check = [&](const char* name, bool ok, const std::string& detail) {
    if (ok) {
      std::printf("ok   %s\n", name);
    } else {
      std::printf("FAIL %s: %s\n", name, detail.c_str());
      ++failures;
    }
  };

  {  // Gaussian kernels: unit mass, nonnegative, point-symmetric.
    double worst_sum = 0.0, worst_sym = 0.0;
    bool nonneg = true;
    for (double s : {0.2, 1.3, 2.6, 4.0}) {
      for (double th : {0.0, 0.785, 1.57}) {
        const Kernel kk = gaussian_kernel({s, 0.5 * s + 0.1, th}, 21);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < kk.size(); ++i) {
          sum += kk[i];
          nonneg = nonneg && kk[i] >= 0.0;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        const Eigen::Index n = kk.dim(0);
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < n; ++j)
            worst_sym = std::max(worst_sym, std::abs(kk(i, j) - kk(n - 1 - i, n - 1 - j)));
      }
    }
    check("gaussian kernel mass/symmetry", worst_sum < 1e-12 && nonneg && worst_sym < 1e-15,
          "sum err " + fmt_f(worst_sum) + ", sym err " + fmt_f(worst_sym));
  }

  {  // Delta kernel at scale 1 is the identity, bit for bit.
    const Image img = random_tensor({3, 8, 8}, 7, 0.0, 1.0);
    const Kernel d = delta_kernel(5);
    const double e1 = max_abs_diff(degrade(img, d, 1, DownMode::area), img);
    const double e2 = max_abs_diff(degrade(img, d, 1, DownMode::decimate), img);
    check("delta kernel identity", e1 == 0.0 && e2 == 0.0, "diff " + fmt_f(std::max(e1, e2)));
  }

  {  // Degradation equivalence against a direct-convolution oracle.
    const Image hr = random_tensor({3, 16, 16}, 11, 0.0, 1.0);
    const Kernel kk = gaussian_kernel({1.7, 0.9, 0.5}, 7);
    const Eigen::Index n = 16, kn = 7, r = kn / 2;
    const auto refl = [](Eigen::Index i, Eigen::Index len) {
      if (i < 0) return -i;
      if (i >= len) return 2 * len - 2 - i;
      return i;
    };
    Tensor<double> blurred({3, n, n});
    for (Eigen::Index c = 0; c < 3; ++c)
      for (Eigen::Index y = 0; y < n; ++y)
        for (Eigen::Index x = 0; x < n; ++x) {
          double acc = 0.0;
          for (Eigen::Index i = 0; i < kn; ++i)
            for (Eigen::Index j = 0; j < kn; ++j)
              acc += kk(i, j) * hr(c, refl(y + r - i, n), refl(x + r - j, n));
          blurred(c, y, x) = acc;
        }
    Tensor<double> want_area({3, n / 2, n / 2}), want_dec({3, n / 2, n / 2});
    for (Eigen::Index c = 0; c < 3; ++c)
      for (Eigen::Index y = 0; y < n / 2; ++y)
        for (Eigen::Index x = 0; x < n / 2; ++x) {
          want_area(c, y, x) = 0.25 * (blurred(c, 2 * y, 2 * x) + blurred(c, 2 * y, 2 * x + 1) +
                                       blurred(c, 2 * y + 1, 2 * x) +
                                       blurred(c, 2 * y + 1, 2 * x + 1));
          want_dec(c, y, x) = blurred(c, 2 * y, 2 * x);
        }
    const double e_area = max_abs_diff(degrade(hr, kk, 2, DownMode::area), want_area);
    const double e_dec = max_abs_diff(degrade(hr, kk, 2, DownMode::decimate), want_dec);
    check("degradation equivalence (direct convolution)", e_area < 1e-12 && e_dec < 1e-12,
          "area err " + fmt_f(e_area) + ", decimate err " + fmt_f(e_dec));
  }

  {  // Blur adjoint identity <Bx, y> = <x, B'y>.
    const Tensor<double> x = random_tensor({3, 12, 12}, 21, -1.0, 1.0);
    const Tensor<double> y = random_tensor({3, 12, 12}, 22, -1.0, 1.0);
    const Kernel kk = gaussian_kernel({1.2, 2.0, 0.3}, 5);
    const Tensor<double> bx = blur_reflect(x, kk);
    const Tensor<double> bty = blur_backward_image(y, kk);
    double lhs = 0.0, rhs = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      lhs += bx[i] * y[i];
      rhs += x[i] * bty[i];
    }
    const double rel = std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
    check("blur adjoint identity", rel < 1e-10, "rel err " + fmt_f(rel));
  }

  // Finite-difference verification of reverse-mode gradients: every entry of
  // each leaf against a central difference.
  const auto fd_worst = [](auto&& build, const std::vector<Parameter<double>*>& leaves) {
    for (auto* p : leaves) p->zero_grad();
    {
      Tape<double> tape;
      auto root = build(tape);
      tape.backward(root);
    }
    const auto eval = [&] {
      Tape<double> tape(false);
      return build(tape).value()[0];
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (auto* p : leaves) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double orig = p->value[i];
        p->value[i] = orig + h;
        const double fp = eval();
        p->value[i] = orig - h;
        const double fm = eval();
        p->value[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = p->grad[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
      }
    }
    return worst;
  };

  {  // Convolution + loss gradients.
    ParamStore<double> store(2024);
    Conv2d<double> conv(store, "probe", 2, 3, 3, 1, 1, 0.1);
    const Tensor<double> x = random_tensor({2, 6, 6}, 31, -1.0, 1.0);
    const Tensor<double> tgt = random_tensor({3, 6, 6}, 32, -1.0, 1.0);
    std::vector<Parameter<double>*> leaves;
    for (const auto& p : store.all()) leaves.push_back(p.get());
    const double worst = fd_worst(
        [&](Tape<double>& t) { return mse_loss(leaky_relu(conv(t.input(x)), 0.1), t.input(tgt)); },
        leaves);
    check("convolution gradients (finite differences)", worst < 1e-5, "rel err " + fmt_f(worst));
  }

  {  // Degradation-operator gradients in both image and kernel.
    Parameter<double> img_p{"img", random_tensor({1, 8, 8}, 41, 0.0, 1.0)};
    Parameter<double> kern_p{"kern", gaussian_kernel({1.1, 0.8, 0.4}, 5)};
    const Tensor<double> tgt = random_tensor({1, 4, 4}, 42, 0.0, 1.0);
    double worst = 0.0;
    for (DownMode mode : {DownMode::area, DownMode::decimate, DownMode::bicubic}) {
      worst = std::max(worst, fd_worst(
                                  [&](Tape<double>& t) {
                                    auto d = degrade(t.use(img_p), t.use(kern_p), 2, mode);
                                    return mse_loss(d, t.input(tgt));
                                  },
                                  {&img_p, &kern_p}));
    }
    check("degradation-operator gradients (finite differences)", worst < 1e-5,
          "rel err " + fmt_f(worst));
  }

  {  // Metric identities: perfect reconstruction and an exact 20 dB gap.
    const Image a = random_tensor({3, 16, 16}, 51, 0.0, 1.0);
    const bool id_ok = psnr(a, a) == kPsnrCap && ssim(a, a) == 1.0;
    Image u({3, 16, 16}), v({3, 16, 16});
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      u[i] = 0.2;
      v[i] = 0.3;
    }
    const double p = psnr(u, v, 0, false);
    const bool db_ok = std::abs(p - 20.0) < 1e-9;
    check("metric identities (PSNR cap, SSIM self, 20 dB)", id_ok && db_ok,
          "psnr(a,a)=" + fmt_f(psnr(a, a)) + ", ssim(a,a)=" + fmt_f(ssim(a, a)) +
              ", 20dB=" + fmt_f(p));
  }

  std::printf("%s\n", failures == 0 ? "selfcheck: all checks passed"
                                    : "selfcheck: FAILURES detected");
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kbsr: blind super-resolution with blur-kernel estimation"};
  app.require_subcommand(1);

  // synth-kernel
  double sk_sx = 0.0, sk_sy = -1.0, sk_theta = 0.0;
  int sk_k = 21;
  std::string sk_out;
  auto* c_sk = app.add_subcommand("synth-kernel",
                                  "Write a Gaussian (or delta) blur kernel with JSON sidecar");
  c_sk->add_option("--sigma-x", sk_sx, "Gaussian sigma along x; 0 gives a delta kernel");
  c_sk->add_option("--sigma-y", sk_sy, "Gaussian sigma along y (defaults to --sigma-x)");
  c_sk->add_option("--theta", sk_theta, "rotation in radians");
  c_sk->add_option("--k", sk_k, "kernel side length, odd");
  c_sk->add_option("--out", sk_out, "output path for the binary kernel")->required();

  // degrade
  std::string dg_hr, dg_kernel, dg_mode = "area", dg_out;
  int dg_scale = 4;
  auto* c_dg = app.add_subcommand("degrade", "Blur an HR image with a kernel and downsample it");
  c_dg->add_option("--hr", dg_hr, "HR input image (PNG)")->required();
  c_dg->add_option("--kernel", dg_kernel, "blur kernel file")->required();
  c_dg->add_option("--scale", dg_scale, "downsampling factor");
  c_dg->add_option("--mode", dg_mode, "downsampling mode: decimate|area|bicubic");
  c_dg->add_option("--out", dg_out, "LR output image (PNG)")->required();

  // train
  std::string tr_config, tr_resume;
  std::vector<std::string> tr_sets;
  std::uint64_t tr_seed = 0;
  auto* c_tr = app.add_subcommand("train", "Train a model on synthesized degradations");
  c_tr->add_option("--config", tr_config, "key-value config file");
  c_tr->add_option("--set", tr_sets, "override a config key, e.g. --set total_steps=100");
  c_tr->add_option("--resume", tr_resume, "checkpoint step directory to resume from");
  auto* tr_seed_opt = c_tr->add_option("--seed", tr_seed, "master seed for every stochastic path");

  // eval
  std::string ev_ckpt, ev_data, ev_sigmas = "0.2,1.3,2.6,4.0", ev_aniso, ev_csv, ev_table;
  bool ev_delta = false, ev_rgb = false;
  int ev_crop = -1;
  auto* c_ev = app.add_subcommand("eval", "Benchmark a checkpoint over a blur-condition grid");
  c_ev->add_option("--ckpt", ev_ckpt, "checkpoint step directory")->required();
  c_ev->add_option("--data", ev_data, "directory of HR PNG images")->required();
  c_ev->add_option("--sigmas", ev_sigmas, "comma-separated isotropic sigmas");
  c_ev->add_option("--aniso", ev_aniso, "semicolon-separated sx:sy:theta triplets");
  c_ev->add_flag("--delta", ev_delta, "include the delta (blur-free) condition");
  c_ev->add_flag("--rgb", ev_rgb, "score on RGB instead of luma");
  c_ev->add_option("--crop", ev_crop, "border crop in pixels (default: the scale factor)");
  c_ev->add_option("--csv", ev_csv, "also write the CSV here");
  c_ev->add_option("--table", ev_table, "also write the text table here");

  // infer
  std::string in_ckpt, in_lr, in_out, in_kernel_out, in_traces;
  auto* c_in = app.add_subcommand("infer", "Super-resolve one LR image with a checkpoint");
  c_in->add_option("--ckpt", in_ckpt, "checkpoint step directory")->required();
  c_in->add_option("--lr", in_lr, "LR input image (PNG)")->required();
  c_in->add_option("--out", in_out, "SR output image (PNG)")->required();
  c_in->add_option("--kernel-out", in_kernel_out,
                   "where to write the estimated kernel (default: <out>-kernel.bin)");
  c_in->add_option("--dump-traces", in_traces, "directory for per-stage renders (kbpn only)");

  // viz-kernel
  std::string vk_est, vk_gt, vk_out;
  auto* c_vk = app.add_subcommand("viz-kernel", "Render an estimated kernel next to ground truth");
  c_vk->add_option("--est", vk_est, "estimated kernel file")->required();
  c_vk->add_option("--gt", vk_gt, "ground-truth kernel file")->required();
  c_vk->add_option("--out", vk_out, "output directory")->required();

  // viz-traces
  std::string vt_ckpt, vt_lr, vt_out;
  auto* c_vt = app.add_subcommand("viz-traces",
                                  "Render per-stage features and LR residuals of a forward pass");
  c_vt->add_option("--ckpt", vt_ckpt, "checkpoint step directory")->required();
  c_vt->add_option("--lr", vt_lr, "LR input image (PNG)")->required();
  c_vt->add_option("--out", vt_out, "output directory")->required();

  // plot-params
  std::string pp_from_csv, pp_variant = "kbpn", pp_stages = "1,3,4,7", pp_psnr, pp_csv, pp_svg;
  int pp_base = 64, pp_k = 21, pp_scale = 4, pp_code = 9, pp_channels = 3;
  auto* c_pp = app.add_subcommand("plot-params",
                                  "Plot parameter count (and optional PSNR) against stage count");
  c_pp->add_option("--from-csv", pp_from_csv, "re-render the SVG from an existing CSV");
  c_pp->add_option("--variant", pp_variant, "dbpn_bl|kcbpn|kbpn");
  c_pp->add_option("--stages", pp_stages, "comma-separated stage counts");
  c_pp->add_option("--base-channels", pp_base, "base channel width");
  c_pp->add_option("--k", pp_k, "kernel side length");
  c_pp->add_option("--scale", pp_scale, "upscaling factor");
  c_pp->add_option("--code-dim", pp_code, "kernel-code width (kcbpn)");
  c_pp->add_option("--channels", pp_channels, "image channels");
  c_pp->add_option("--psnr", pp_psnr, "measured PSNR per stage count, e.g. 1=26.5,3=27.2");
  c_pp->add_option("--csv", pp_csv, "output CSV path");
  c_pp->add_option("--svg", pp_svg, "output SVG path");

  // selfcheck
  auto* c_sc = app.add_subcommand("selfcheck",
                                  "Run the built-in oracle suites and print pass/fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_sk->parsed()) return cmd_synth_kernel(sk_sx, sk_sy, sk_theta, sk_k, sk_out);
    if (c_dg->parsed()) return cmd_degrade(dg_hr, dg_kernel, dg_scale, dg_mode, dg_out);
    if (c_tr->parsed())
      return cmd_train(tr_config, tr_sets, tr_resume, tr_seed_opt->count() > 0, tr_seed);
    if (c_ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_sigmas, ev_aniso, ev_delta, ev_rgb, ev_crop, ev_csv,
                      ev_table);
    if (c_in->parsed()) return cmd_infer(in_ckpt, in_lr, in_out, in_kernel_out, in_traces);
    if (c_vk->parsed()) return cmd_viz_kernel(vk_est, vk_gt, vk_out);
    if (c_vt->parsed()) return cmd_viz_traces(vt_ckpt, vt_lr, vt_out);
    if (c_pp->parsed())
      return cmd_plot_params(pp_from_csv, pp_variant, pp_stages, pp_base, pp_k, pp_scale, pp_code,
                             pp_channels, pp_psnr, pp_csv, pp_svg);
    if (c_sc->parsed()) return cmd_selfcheck();
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
