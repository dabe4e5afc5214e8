#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <vector>

#include "kbsr/networks/network.hpp"

namespace kbsr {

struct StageCountRow {
  int stages = 0;
  Eigen::Index params = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();  // NaN: not measured
};

/// Closed-form parameter counts of `base` swept over stage counts, with an
/// optional measured-PSNR column.
std::vector<StageCountRow> stage_param_rows(const NetworkConfig& base,
                                            const std::vector<int>& stage_counts,
                                            const std::map<int, double>& psnr_by_stages = {});

/// Frozen CSV columns: stages,params,psnr (psnr written as "nan" when absent).
void write_stage_params_csv(const std::filesystem::path& csv,
                            const std::vector<StageCountRow>& rows);
std::vector<StageCountRow> read_stage_params_csv(const std::filesystem::path& csv);

/// Deterministic SVG line plot of a stage-sweep CSV: parameter count against
/// stage count, with a second dashed series for PSNR when any row has one.
/// Rendering depends only on the CSV contents, so regenerating from the CSV
/// reproduces the SVG byte for byte.
void plot_from_csv(const std::filesystem::path& csv, const std::filesystem::path& svg);

/// Sweep, write the CSV, and render the plot from that CSV.
void plot_params_vs_stages(const NetworkConfig& base, const std::vector<int>& stage_counts,
                           const std::map<int, double>& psnr_by_stages,
                           const std::filesystem::path& csv, const std::filesystem::path& svg);

}  // namespace kbsr
