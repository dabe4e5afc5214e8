#include "kbsr/eval/bench.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "kbsr/training/train.hpp"

namespace kbsr {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return nlohmann::json(v).dump();
}

std::string condition_label(const GaussianSpec& s) {
  char buf[64];
  if (s.sigma_x == 0.0 && s.sigma_y == 0.0) return "delta";
  if (s.sigma_x == s.sigma_y && s.theta == 0.0) {
    std::snprintf(buf, sizeof buf, "sigma=%.2f", s.sigma_x);
  } else {
    std::snprintf(buf, sizeof buf, "sx=%.2f sy=%.2f theta=%.2f", s.sigma_x, s.sigma_y, s.theta);
  }
  return buf;
}

}  // namespace

BenchTable run_benchmark(const BenchModel& model, const BenchSpec& spec) {
  if (spec.blurs.empty()) throw std::invalid_argument("run_benchmark: blur list is empty");
  if (spec.scale < 1) throw std::invalid_argument("run_benchmark: scale must be >= 1");
  const Dataset<double> ds = load_dataset<double>(spec.dataset_dir);

  BenchTable table;
  std::ostringstream csv;
  csv << "sigma_x,sigma_y,theta,psnr,ssim,kernel_l1,images\n";
  for (const GaussianSpec& cond : spec.blurs) {
    const Kernel k_gt = kernel_from_spec(cond, spec.kernel_size);
    BenchRow row;
    row.spec = cond;
    int kernel_rows = 0;
    for (const auto& hr_full : ds.images) {
      const Eigen::Index h = hr_full.dim(1) - hr_full.dim(1) % spec.scale;
      const Eigen::Index w = hr_full.dim(2) - hr_full.dim(2) % spec.scale;
      const Image hr = crop(hr_full, 0, 0, h, w);
      const Image lr = degrade(hr, k_gt, spec.scale, spec.down_mode);
      auto [sr, k_est] = model(lr);
      row.psnr += psnr(sr, hr, spec.crop_border, spec.luma_only);
      row.ssim += ssim(sr, hr, spec.crop_border, spec.luma_only);
      if (!k_est.empty()) {
        if (k_est.shape() != k_gt.shape())
          throw std::invalid_argument("run_benchmark: model kernel shape " +
                                      shape_str(k_est.shape()) + " does not match condition " +
                                      shape_str(k_gt.shape()));
        row.kernel_l1 += (k_est.array() - k_gt.array()).abs().mean();
        ++kernel_rows;
      }
      ++row.images;
    }
    row.psnr /= row.images;
    row.ssim /= row.images;
    row.kernel_l1 = kernel_rows ? row.kernel_l1 / kernel_rows
                                : std::numeric_limits<double>::quiet_NaN();
    csv << num(cond.sigma_x) << ',' << num(cond.sigma_y) << ',' << num(cond.theta) << ','
        << num(row.psnr) << ',' << num(row.ssim) << ',' << num(row.kernel_l1) << ','
        << row.images << '\n';
    table.rows.push_back(row);
  }

  std::ostringstream text;
  char line[128];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %10s\n", "condition", "PSNR", "SSIM",
                "kernel L1");
  text << line;
  for (const BenchRow& row : table.rows) {
    std::snprintf(line, sizeof line, "%-28s %8.2f %8.4f %10.4f\n",
                  condition_label(row.spec).c_str(), row.psnr, row.ssim, row.kernel_l1);
    text << line;
  }
  table.csv = csv.str();
  table.text = text.str();
  return table;
}

}  // namespace kbsr
