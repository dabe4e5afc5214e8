#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kbsr/degradation/degrade.hpp"
#include "kbsr/imaging/image.hpp"
#include "kbsr/networks/network.hpp"

namespace kbsr {

struct KernelVizPaths {
  std::string est_png;      // estimate, max-normalized
  std::string gt_png;       // ground truth, max-normalized
  std::string pair_png;     // side-by-side composite (estimate left)
  std::string sidecar_json; // {"k", "l1", "max_est", "max_gt"}
  double l1 = 0.0;          // mean absolute difference
};

/// Grayscale renders of an estimated kernel next to its ground truth, each
/// normalized by its own max entry, plus a JSON sidecar with the L1 error.
KernelVizPaths visualize_kernel(const Kernel& k_est, const Kernel& k_gt,
                                const std::filesystem::path& out_dir);

struct TraceVizPaths {
  std::vector<std::string> feature_pngs;   // per stage: channel-mean of F^SR
  std::vector<std::string> residual_pngs;  // per stage: |LR residual|
  std::string final_residual_png;          // |re-degraded final SR - LR|
  double residual_max = 0.0;               // value mapped to white in residuals
};

/// Per-stage renders of an iterative forward pass: each stage's HR feature
/// map (min-max normalized individually) and the magnitude of its LR
/// residual, all residuals sharing one scale so they are comparable, plus
/// the residual of the final output. Requires a kernel-estimating result
/// (per-stage residuals present).
TraceVizPaths visualize_traces(const ForwardResult<double>& result, const Image& lr, int scale,
                               DownMode down_mode, const std::filesystem::path& out_dir);

/// Widen a forward snapshot for the double-based tooling above.
template <class Scalar>
ForwardResult<double> result_to_double(const ForwardResult<Scalar>& r) {
  ForwardResult<double> out;
  out.sr = r.sr.template cast<double>();
  if (!r.kernel.empty()) out.kernel = r.kernel.template cast<double>();
  for (const auto& t : r.traces) {
    StageTrace<double> tr;
    tr.t = t.t;
    if (!t.i_sr.empty()) tr.i_sr = t.i_sr.template cast<double>();
    if (!t.k.empty()) tr.k = t.k.template cast<double>();
    if (!t.r_lr.empty()) tr.r_lr = t.r_lr.template cast<double>();
    if (!t.f_sr.empty()) tr.f_sr = t.f_sr.template cast<double>();
    out.traces.push_back(std::move(tr));
  }
  return out;
}

}  // namespace kbsr
