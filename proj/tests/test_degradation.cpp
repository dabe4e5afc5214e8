#include <Eigen/Dense>
#include <Eigen/SVD>

#include "doctest.h"
#include "kbsr/degradation/degrade.hpp"
#include "kbsr/degradation/kernel.hpp"
#include "kbsr/degradation/kernel_io.hpp"
#include "kbsr/degradation/pca.hpp"
#include "kbsr/imaging/image.hpp"
#include "testutil.hpp"

using namespace kbsr;

namespace {

Kernel random_kernel(int k, uint64_t seed) {
  auto t = testutil::random_tensor<double>({k, k}, seed, 0.0, 1.0);
  t.array() /= t.array().sum();
  return t;
}

/// Definitional degrade: double-loop true convolution with explicit reflect
/// indexing, then keep every s-th sample. Independent of the library path.
Image degrade_oracle(const Image& hr, const Kernel& kernel, int s) {
  const Eigen::Index c = hr.dim(0), h = hr.dim(1), w = hr.dim(2);
  const Eigen::Index k = kernel.dim(0), r = k / 2;
  auto reflect = [](Eigen::Index i, Eigen::Index n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image out({c, h / s, w / s});
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (Eigen::Index y = 0; y < h / s; ++y)
      for (Eigen::Index x = 0; x < w / s; ++x) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < k; ++i)
          for (Eigen::Index j = 0; j < k; ++j)
            acc += kernel(i, j) *
                   hr(ch, reflect(y * s + r - i, h), reflect(x * s + r - j, w));
        out(ch, y, x) = acc;
      }
  return out;
}

/// Analytic Gaussian density evaluated through an explicit matrix inverse —
/// a second algebraic route vs the closed-form expansion in gaussian_kernel.
Kernel gaussian_oracle(const GaussianSpec& spec, int k) {
  Eigen::Matrix2d rot, diag;
  rot << std::cos(spec.theta), -std::sin(spec.theta), std::sin(spec.theta), std::cos(spec.theta);
  diag << spec.sigma_x * spec.sigma_x, 0, 0, spec.sigma_y * spec.sigma_y;
  const Eigen::Matrix2d sigma_inv = (rot * diag * rot.transpose()).inverse();
  Kernel out({k, k});
  const int r = k / 2;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      Eigen::Vector2d u(x - r, y - r);
      out(y, x) = std::exp(-0.5 * u.dot(sigma_inv * u));
    }
  out.array() /= out.array().sum();
  return out;
}

}  // namespace

TEST_CASE("gaussian kernel matches the analytic density oracle") {
  for (double sx : {0.2, 1.3, 2.6, 4.0})
    for (double sy : {0.2, 1.3, 2.6, 4.0})
      for (double th : {0.0, std::numbers::pi / 4, std::numbers::pi / 2}) {
        GaussianSpec spec{sx, sy, th};
        auto k = gaussian_kernel(spec, 21);
        CHECK(kernel_valid(k));
        CHECK(testutil::max_abs_diff(k, gaussian_oracle(spec, 21)) < 1e-12);
      }
}

TEST_CASE("gaussian kernel symmetries") {
  // Isotropic kernels ignore theta.
  for (double s : {0.2, 1.3, 2.6, 4.0}) {
    auto base = gaussian_kernel({s, s, 0.0}, 21);
    for (double th : {0.3, std::numbers::pi / 4, 1.2})
      CHECK(testutil::max_abs_diff(base, gaussian_kernel({s, s, th}, 21)) < 1e-12);
  }
  // Swapping the sigmas is the same as rotating a quarter turn.
  auto a = gaussian_kernel({1.3, 2.6, 0.4}, 21);
  auto b = gaussian_kernel({2.6, 1.3, 0.4 + std::numbers::pi / 2}, 21);
  CHECK(testutil::max_abs_diff(a, b) < 1e-12);

  // sigma = 0.2 is a near-delta.
  auto nd = gaussian_kernel({0.2, 0.2, 0.0}, 21);
  CHECK(nd(10, 10) > 0.99);

  CHECK_THROWS_AS(gaussian_kernel({0.0, 1.0, 0.0}, 21), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_kernel({1.0, 1.0, 0.0}, 20), std::invalid_argument);
}

TEST_CASE("kernel validity over a sigma sweep") {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    GaussianSpec spec{rng.uniform(1e-3, 10.0), rng.uniform(1e-3, 10.0),
                      rng.uniform(0.0, std::numbers::pi)};
    CHECK(kernel_valid(gaussian_kernel(spec, 21)));
    CHECK(kernel_valid(gaussian_kernel(spec, 13)));
  }
  CHECK(kernel_valid(delta_kernel(21)));
  CHECK(delta_kernel(5)(2, 2) == 1.0);
}

TEST_CASE("degrade equals the brute-force oracle (decimate)") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto hr = testutil::random_tensor<double>({3, 16, 16}, 100 + trial);
    auto k = random_kernel(21, 200 + trial);
    auto got = degrade(hr, k, 4, DownMode::decimate);
    CHECK(got.shape() == Shape{3, 4, 4});
    CHECK(testutil::max_abs_diff(got, degrade_oracle(hr, k, 4)) < 1e-6);
  }
}

TEST_CASE("degrade preserves constants and identities") {
  auto flat = Image::constant({3, 16, 16}, 0.37);
  for (auto mode : {DownMode::decimate, DownMode::area, DownMode::bicubic}) {
    auto lr = degrade(flat, gaussian_kernel({2.6, 2.6, 0.0}, 21), 4, mode);
    CHECK(lr.shape() == Shape{3, 4, 4});
    CHECK(std::abs(lr.array().maxCoeff() - 0.37) < 1e-9);
    CHECK(std::abs(lr.array().minCoeff() - 0.37) < 1e-9);
  }

  // Delta kernel at s = 1 is the identity.
  auto img = testutil::random_tensor<double>({3, 12, 12}, 5);
  auto same = degrade(img, delta_kernel(21), 1, DownMode::decimate);
  CHECK(testutil::max_abs_diff(img, same) < 1e-9);

  CHECK_THROWS_AS(degrade(img, delta_kernel(21), 5, DownMode::area), std::invalid_argument);
}

TEST_CASE("degrade is linear in the image and commutes with channel permutation") {
  auto a = testutil::random_tensor<double>({3, 16, 16}, 7);
  auto b = testutil::random_tensor<double>({3, 16, 16}, 8);
  auto k = gaussian_kernel({1.3, 2.6, 0.7}, 21);

  Image mix(a.shape(), (0.3 * a.array() + 0.6 * b.array()).eval());
  auto lhs = degrade(mix, k, 4, DownMode::decimate);
  auto da = degrade(a, k, 4, DownMode::decimate);
  auto db = degrade(b, k, 4, DownMode::decimate);
  Image rhs(da.shape(), (0.3 * da.array() + 0.6 * db.array()).eval());
  CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-9);

  // Swap channels 0 and 2 before vs after.
  Image perm(a.shape());
  for (Eigen::Index y = 0; y < 16; ++y)
    for (Eigen::Index x = 0; x < 16; ++x) {
      perm(0, y, x) = a(2, y, x);
      perm(1, y, x) = a(1, y, x);
      perm(2, y, x) = a(0, y, x);
    }
  auto dp = degrade(perm, k, 4, DownMode::area);
  auto dd = degrade(a, k, 4, DownMode::area);
  for (Eigen::Index y = 0; y < 4; ++y)
    for (Eigen::Index x = 0; x < 4; ++x) {
      CHECK(dp(0, y, x) == doctest::Approx(dd(2, y, x)).epsilon(1e-12));
      CHECK(dp(2, y, x) == doctest::Approx(dd(0, y, x)).epsilon(1e-12));
    }
}

TEST_CASE("area downsampling equals the block-mean oracle") {
  auto img = testutil::random_tensor<double>({2, 12, 8}, 9);
  auto got = downsample_area(img, 4);
  for (Eigen::Index c = 0; c < 2; ++c)
    for (Eigen::Index y = 0; y < 3; ++y)
      for (Eigen::Index x = 0; x < 2; ++x) {
        double mean = 0;
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx) mean += img(c, y * 4 + dy, x * 4 + dx);
        CHECK(got(c, y, x) == doctest::Approx(mean / 16.0).epsilon(1e-12));
      }
}

TEST_CASE("cubic resize: identity, constants, and ramp preservation") {
  auto img = testutil::random_tensor<double>({3, 10, 14}, 11);
  CHECK(testutil::max_abs_diff(img, bicubic_resize(img, 10, 14)) < 1e-12);

  auto flat = Image::constant({1, 16, 16}, 0.42);
  auto small = bicubic_resize(flat, 4, 4);
  CHECK(std::abs(small.array().maxCoeff() - 0.42) < 1e-12);
  auto big = bicubic_resize(flat, 32, 48);
  CHECK(std::abs(big.array().minCoeff() - 0.42) < 1e-12);

  // A linear ramp stays linear away from the borders: the antialiased cubic
  // kernel is symmetric (zero first moment) and normalized to sum 1.
  Image ramp({1, 8, 64});
  for (Eigen::Index y = 0; y < 8; ++y)
    for (Eigen::Index x = 0; x < 64; ++x) ramp(0, y, x) = static_cast<double>(x);
  auto down = bicubic_resize(ramp, 8, 16);  // 4x shrink along x
  for (Eigen::Index x = 4; x < 12; ++x) {
    // Output center x maps to input coordinate (x + 0.5) * 4 - 0.5.
    const double expect = (x + 0.5) * 4.0 - 0.5;
    CHECK(down(0, 4, x) == doctest::Approx(expect).epsilon(1e-9));
  }

  auto up = bicubic_resize(ramp, 16, 128);
  CHECK(up.shape() == Shape{1, 16, 128});
  for (Eigen::Index x = 8; x < 120; ++x) {
    const double expect = (x + 0.5) / 2.0 - 0.5;
    CHECK(up(0, 8, x) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("stretch broadcasts a vector to constant planes") {
  Tensor<double> vec({3});
  vec[0] = 0.1;
  vec[1] = -2.0;
  vec[2] = 5.0;
  auto map = stretch(vec, 4, 6);
  CHECK(map.shape() == Shape{3, 4, 6});
  for (Eigen::Index d = 0; d < 3; ++d) {
    double mean = 0;
    for (Eigen::Index y = 0; y < 4; ++y)
      for (Eigen::Index x = 0; x < 6; ++x) {
        CHECK(map(d, y, x) == vec[d]);
        mean += map(d, y, x);
      }
    CHECK(mean / 24.0 == doctest::Approx(vec[d]).epsilon(1e-15));
  }

  Tensor<double> zero({1});
  auto zmap = stretch(zero, 3, 3);
  CHECK(zmap.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("kernel pca: oracle eigendecomposition and projection properties") {
  // Fitting set: Gaussian kernels over the training sigma distribution.
  Rng rng(42);
  std::vector<Kernel> kernels;
  for (int i = 0; i < 500; ++i)
    kernels.push_back(gaussian_kernel(
        {rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), rng.uniform(0.0, std::numbers::pi)}, 13));

  const int a = 9;
  auto ctx = fit_kernel_pca(kernels, a);
  CHECK(ctx.k == 13);

  // Rows orthonormal.
  const Eigen::MatrixXd gram = ctx.basis * ctx.basis.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(a, a)).cwiseAbs().maxCoeff() < 1e-8);

  // Independent route: singular values of the centered sample matrix.
  const Eigen::Index n = 500, d = 169;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = Eigen::Map<const Eigen::VectorXd>(kernels[i].data(), d);
  x.rowwise() -= x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x);
  const Eigen::VectorXd sv = svd.singularValues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) total += sv[i] * sv[i] / n;
  double top = 0.0;
  for (int i = 0; i < a; ++i) {
    top += sv[i] * sv[i] / n;
    CHECK(ctx.eigenvalues[i] == doctest::Approx(sv[i] * sv[i] / n).epsilon(1e-6));
  }
  CHECK(ctx.total_variance == doctest::Approx(total).epsilon(1e-9));
  CHECK(ctx.explained_variance_ratio() == doctest::Approx(top / total).epsilon(1e-6));

  // encode(mean kernel) = 0 when the mean itself is in the fitting set's span.
  Kernel mean_kernel({13, 13});
  Eigen::Map<Eigen::VectorXd>(mean_kernel.data(), d) = ctx.mean;
  CHECK(encode_kernel(mean_kernel, ctx).cwiseAbs().maxCoeff() < 1e-12);

  // encode-decode is a projection when clamping stays inactive.
  auto held_out = gaussian_kernel({1.7, 3.1, 0.9}, 13);
  auto code = encode_kernel(held_out, ctx);
  auto once = decode_kernel(code, ctx);
  auto code2 = encode_kernel(once, ctx);
  CHECK((code - code2).cwiseAbs().maxCoeff() < 1e-8);

  // Low-rank reconstruction beats the mean-kernel baseline.
  const double err = (once.array() - held_out.array()).abs().sum();
  const double base = (mean_kernel.array() - held_out.array()).abs().sum();
  CHECK(err < base);
}

TEST_CASE("kernel pca: degenerate and complete cases") {
  auto k0 = gaussian_kernel({2.0, 2.0, 0.0}, 5);
  std::vector<Kernel> same(10, k0);
  auto ctx = fit_kernel_pca(same, 3);
  CHECK(testutil::max_abs_diff(Kernel({5, 5}, Eigen::ArrayXd(ctx.mean.array())), k0) < 1e-15);
  CHECK(encode_kernel(k0, ctx).cwiseAbs().maxCoeff() < 1e-12);

  // Complete basis on k=5 reconstructs exactly.
  Rng rng(1);
  std::vector<Kernel> rich;
  for (int i = 0; i < 60; ++i)
    rich.push_back(gaussian_kernel(
        {rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), rng.uniform(0.0, std::numbers::pi)}, 5));
  auto full = fit_kernel_pca(rich, 25);
  for (int i = 0; i < 5; ++i) {
    auto rec = decode_kernel(encode_kernel(rich[i], full), full);
    CHECK(testutil::max_abs_diff(rec, rich[i]) < 1e-8);
  }

  CHECK_THROWS_AS(fit_kernel_pca(std::vector<Kernel>(3, k0), 9), std::invalid_argument);
}

TEST_CASE("kernel and pca files round-trip") {
  auto dir = testutil::scratch_dir("kernel-io");

  GaussianSpec spec{1.3, 2.6, 0.7};
  auto k = gaussian_kernel(spec, 21);
  save_kernel(dir / "K.bin", k, {.k = 21, .spec = spec, .down_mode = DownMode::area});
  KernelSidecar sc;
  auto back = load_kernel(dir / "K.bin", &sc);
  CHECK(testutil::max_abs_diff(k, back) == 0.0);  // float64 round trip is exact
  CHECK(sc.k == 21);
  REQUIRE(sc.spec.has_value());
  CHECK(sc.spec->sigma_x == 1.3);
  CHECK(sc.spec->sigma_y == 2.6);
  CHECK(sc.spec->theta == 0.7);
  CHECK(sc.down_mode == DownMode::area);

  // Estimated kernels have no synthesis spec.
  save_kernel(dir / "Kest.bin", k, {.k = 21, .spec = std::nullopt, .down_mode = DownMode::decimate});
  KernelSidecar sce;
  load_kernel(dir / "Kest.bin", &sce);
  CHECK_FALSE(sce.spec.has_value());

  Rng rng(2);
  std::vector<Kernel> kernels;
  for (int i = 0; i < 40; ++i)
    kernels.push_back(gaussian_kernel({rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), 0.0}, 9));
  auto ctx = fit_kernel_pca(kernels, 6);
  ctx.seed = 777;
  save_code_context(dir / "pca.bin", ctx);
  auto loaded = load_code_context(dir / "pca.bin");
  CHECK(loaded.a == 6);
  CHECK(loaded.k == 9);
  CHECK(loaded.seed == 777);
  CHECK((loaded.basis - ctx.basis).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.mean - ctx.mean).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS(load_kernel(dir / "missing.bin"));
}
