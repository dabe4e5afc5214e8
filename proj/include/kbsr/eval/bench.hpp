#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kbsr/degradation/degrade.hpp"
#include "kbsr/degradation/kernel.hpp"
#include "kbsr/eval/metrics.hpp"

namespace kbsr {

/// One benchmark protocol: a folder of HR images degraded by each condition
/// in `blurs` (the all-zero spec denotes the delta kernel) and re-scored.
struct BenchSpec {
  std::string dataset_dir;
  std::vector<GaussianSpec> blurs;
  int scale = 4;
  int kernel_size = 21;
  DownMode down_mode = DownMode::area;
  Eigen::Index crop_border = 4;  // convention: s pixels
  bool luma_only = true;
};

/// Super-resolver under test: LR image in, SR image plus kernel estimate out
/// (empty kernel when the model does not estimate one).
using BenchModel = std::function<std::pair<Image, Kernel>(const Image& lr)>;

struct BenchRow {
  GaussianSpec spec;
  double psnr = 0.0;
  double ssim = 0.0;
  double kernel_l1 = 0.0;  // NaN when the model offered no kernels
  int images = 0;
};

/// Frozen CSV columns: sigma_x,sigma_y,theta,psnr,ssim,kernel_l1,images.
struct BenchTable {
  std::vector<BenchRow> rows;
  std::string csv;
  std::string text;  // fixed-width table, one condition per row
};

BenchTable run_benchmark(const BenchModel& model, const BenchSpec& spec);

}  // namespace kbsr
