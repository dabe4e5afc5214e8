#pragma once

#include <filesystem>
#include <optional>

#include "kbsr/degradation/degrade.hpp"
#include "kbsr/degradation/pca.hpp"

namespace kbsr {

/// On-disk kernel format: little-endian float64 flat binary of k^2 values at
/// `path` plus a JSON sidecar at `path + ".json"` carrying
/// {k, sigma_x, sigma_y, theta, down_mode}. sigma/theta are null for kernels
/// that were estimated rather than synthesized.
struct KernelSidecar {
  int k = 21;
  std::optional<GaussianSpec> spec;
  DownMode down_mode = DownMode::area;
};

void save_kernel(const std::filesystem::path& path, const Kernel& kernel,
                 const KernelSidecar& sidecar);
Kernel load_kernel(const std::filesystem::path& path, KernelSidecar* sidecar = nullptr);

/// PCA basis persisted the same way: binary = a rows of k^2 doubles (basis)
/// followed by k^2 doubles (mean); sidecar carries {a, k, seed}.
void save_code_context(const std::filesystem::path& path, const KernelCodeContext& ctx);
KernelCodeContext load_code_context(const std::filesystem::path& path);

}  // namespace kbsr
