#include "kbsr/eval/viz.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace kbsr {

namespace {

/// Rank-2 map rendered as a 1-channel raster scaled by its own max.
Image max_normalized(const Kernel& k) {
  Image img({1, k.dim(0), k.dim(1)});
  const double m = k.array().maxCoeff();
  for (Eigen::Index y = 0; y < k.dim(0); ++y)
    for (Eigen::Index x = 0; x < k.dim(1); ++x) img(0, y, x) = m > 0.0 ? k(y, x) / m : 0.0;
  return img;
}

Image channel_mean(const Image& t) {
  Image out({1, t.dim(1), t.dim(2)});
  as_plane_matrix(out).col(0) = as_plane_matrix(t).rowwise().mean();
  return out;
}

Image min_max_normalized(Image img) {
  const double lo = img.array().minCoeff(), hi = img.array().maxCoeff();
  if (hi > lo)
    img.array() = (img.array() - lo) / (hi - lo);
  else
    img.array().setZero();
  return img;
}

Image abs_mean_map(const Image& t) {
  Image a = t;
  a.array() = a.array().abs();
  return channel_mean(a);
}

}  // namespace

KernelVizPaths visualize_kernel(const Kernel& k_est, const Kernel& k_gt,
                                const std::filesystem::path& out_dir) {
  if (k_est.rank() != 2 || k_est.shape() != k_gt.shape())
    throw std::invalid_argument("visualize_kernel: kernels must be rank-2 of equal shape, got " +
                                shape_str(k_est.shape()) + " vs " + shape_str(k_gt.shape()));
  std::filesystem::create_directories(out_dir);
  KernelVizPaths out;
  out.l1 = (k_est.array() - k_gt.array()).abs().mean();

  const Image est = max_normalized(k_est), gt = max_normalized(k_gt);
  const Eigen::Index k = k_est.dim(0), gap = 2;
  Image pair({1, k, 2 * k + gap});
  for (Eigen::Index y = 0; y < k; ++y) {
    for (Eigen::Index x = 0; x < k; ++x) {
      pair(0, y, x) = est(0, y, x);
      pair(0, y, k + gap + x) = gt(0, y, x);
    }
  }

  out.est_png = (out_dir / "kernel-est.png").string();
  out.gt_png = (out_dir / "kernel-gt.png").string();
  out.pair_png = (out_dir / "kernel-pair.png").string();
  out.sidecar_json = (out_dir / "kernel.json").string();
  save_image(out.est_png, est);
  save_image(out.gt_png, gt);
  save_image(out.pair_png, pair);

  nlohmann::json j;
  j["k"] = k;
  j["l1"] = out.l1;
  j["max_est"] = k_est.array().maxCoeff();
  j["max_gt"] = k_gt.array().maxCoeff();
  std::ofstream(out.sidecar_json) << j.dump(2) << "\n";
  return out;
}

TraceVizPaths visualize_traces(const ForwardResult<double>& result, const Image& lr, int scale,
                               DownMode down_mode, const std::filesystem::path& out_dir) {
  if (result.traces.empty() || result.kernel.rank() != 2)
    throw std::invalid_argument("visualize_traces: needs a kernel-estimating forward result");
  for (const auto& tr : result.traces)
    if (tr.r_lr.empty() || tr.f_sr.empty())
      throw std::invalid_argument("visualize_traces: stage " + std::to_string(tr.t) +
                                  " carries no residual trace");
  std::filesystem::create_directories(out_dir);

  std::vector<Image> residuals;
  for (const auto& tr : result.traces) residuals.push_back(abs_mean_map(tr.r_lr));
  Image final_r = degrade(result.sr, result.kernel, scale, down_mode);
  final_r.array() -= lr.array();
  residuals.push_back(abs_mean_map(final_r));

  TraceVizPaths out;
  for (const Image& r : residuals) out.residual_max = std::max(out.residual_max, r.array().maxCoeff());

  char name[48];
  for (size_t i = 0; i < result.traces.size(); ++i) {
    const int t = result.traces[i].t;
    std::snprintf(name, sizeof name, "stage-%02d-fsr.png", t);
    const auto fpath = (out_dir / name).string();
    save_image(fpath, min_max_normalized(channel_mean(result.traces[i].f_sr)));
    out.feature_pngs.push_back(fpath);

    std::snprintf(name, sizeof name, "stage-%02d-rlr.png", t);
    const auto rpath = (out_dir / name).string();
    Image render = residuals[i];
    if (out.residual_max > 0.0) render.array() /= out.residual_max;
    save_image(rpath, render);
    out.residual_pngs.push_back(rpath);
  }
  Image render = residuals.back();
  if (out.residual_max > 0.0) render.array() /= out.residual_max;
  out.final_residual_png = (out_dir / "final-rlr.png").string();
  save_image(out.final_residual_png, render);
  return out;
}

}  // namespace kbsr
