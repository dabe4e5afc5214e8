#pragma once

#include <Eigen/Eigenvalues>

#include <vector>

#include "kbsr/degradation/kernel.hpp"

namespace kbsr {

/// Fitted low-rank kernel representation: code = basis * (flatten(K) - mean).
struct KernelCodeContext {
  int a = 9;
  int k = 21;
  uint64_t seed = 0;             // seed of the fitting sample, for provenance
  Eigen::MatrixXd basis;         // a x k^2, rows orthonormal
  Eigen::VectorXd mean;          // k^2
  Eigen::VectorXd eigenvalues;   // top-a covariance eigenvalues, descending
  double total_variance = 0.0;   // trace of the sample covariance

  double explained_variance_ratio() const {
    return total_variance > 0.0 ? eigenvalues.sum() / total_variance : 1.0;
  }
};

/// PCA over flattened kernels: top-a eigenvectors of the sample covariance,
/// deterministic sign (largest-magnitude component made positive).
inline KernelCodeContext fit_kernel_pca(const std::vector<Kernel>& samples, int a) {
  if (samples.empty() || static_cast<int>(samples.size()) < a)
    throw std::invalid_argument("fit_kernel_pca: need at least a samples");
  const Eigen::Index k = samples.front().dim(0);
  const Eigen::Index d = k * k;
  if (a < 1 || a > d) throw std::invalid_argument("fit_kernel_pca: a out of range");

  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    require_kernel(samples[i], "fit_kernel_pca");
    if (samples[i].dim(0) != k) throw std::invalid_argument("fit_kernel_pca: mixed kernel sizes");
    x.row(i) = Eigen::Map<const Eigen::VectorXd>(samples[i].data(), d);
  }

  KernelCodeContext ctx;
  ctx.a = a;
  ctx.k = static_cast<int>(k);
  ctx.mean = x.colwise().mean();
  x.rowwise() -= ctx.mean.transpose();
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
  ctx.total_variance = cov.trace();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("fit_kernel_pca: eigensolver failed");

  // Eigen returns eigenvalues ascending; take the top a, largest first.
  ctx.basis.resize(a, d);
  ctx.eigenvalues.resize(a);
  for (int i = 0; i < a; ++i) {
    const Eigen::Index col = d - 1 - i;
    Eigen::VectorXd v = es.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    ctx.basis.row(i) = v.transpose();
    ctx.eigenvalues[i] = es.eigenvalues()[col];
  }
  return ctx;
}

inline Eigen::VectorXd encode_kernel(const Kernel& kernel, const KernelCodeContext& ctx) {
  if (kernel.size() != ctx.mean.size())
    throw std::invalid_argument("encode_kernel: kernel size does not match fitted basis");
  const Eigen::Map<const Eigen::VectorXd> flat(kernel.data(), kernel.size());
  return ctx.basis * (flat - ctx.mean);
}

/// Inverse map back to a valid kernel: reconstruct, clamp negatives to zero,
/// renormalize to sum 1.
inline Kernel decode_kernel(const Eigen::VectorXd& code, const KernelCodeContext& ctx) {
  if (code.size() != ctx.a)
    throw std::invalid_argument("decode_kernel: code length does not match fitted basis");
  Eigen::VectorXd flat = (ctx.mean + ctx.basis.transpose() * code).cwiseMax(0.0);
  const double sum = flat.sum();
  if (sum <= 0.0) throw std::runtime_error("decode_kernel: reconstruction collapsed to zero");
  flat /= sum;
  Kernel out({ctx.k, ctx.k});
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) = flat;
  return out;
}

}  // namespace kbsr
