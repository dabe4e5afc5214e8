#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "kbsr/eval/bench.hpp"
#include "kbsr/eval/plot.hpp"
#include "kbsr/eval/viz.hpp"
#include "kbsr/training/train.hpp"
#include "testutil.hpp"

using namespace kbsr;
using namespace kbsr::testutil;

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Definitional oracles, written as literal formula transcriptions so they
// share no code with the library implementations.
// ---------------------------------------------------------------------------

Image oracle_prep(const Image& img, int crop_border, bool luma_only) {
  Image p = img;
  if (luma_only && img.dim(0) == 3) {
    Image y({1, img.dim(1), img.dim(2)});
    for (Eigen::Index r = 0; r < img.dim(1); ++r)
      for (Eigen::Index c = 0; c < img.dim(2); ++c)
        y(0, r, c) = 0.299 * img(0, r, c) + 0.587 * img(1, r, c) + 0.114 * img(2, r, c);
    p = y;
  }
  if (crop_border > 0)
    p = crop(p, crop_border, crop_border, p.dim(1) - 2 * crop_border,
             p.dim(2) - 2 * crop_border);
  return p;
}

double oracle_psnr(const Image& a, const Image& b, int crop_border, bool luma_only) {
  const Image pa = oracle_prep(a, crop_border, luma_only);
  const Image pb = oracle_prep(b, crop_border, luma_only);
  double se = 0.0;
  for (Eigen::Index i = 0; i < pa.size(); ++i) se += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  const double mse = se / static_cast<double>(pa.size());
  if (mse <= 0.0) return 100.0;
  return std::min(10.0 * std::log10(1.0 / mse), 100.0);
}

/// Brute-force SSIM: every valid 11x11 window visited explicitly; weighted
/// moments accumulated scalar by scalar.
double oracle_ssim(const Image& a, const Image& b, int crop_border, bool luma_only) {
  const Image pa = oracle_prep(a, crop_border, luma_only);
  const Image pb = oracle_prep(b, crop_border, luma_only);
  const int k = 11;
  double win[11][11], wsum = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) win[i][j] /= wsum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0.0;
  long long windows = 0;
  for (Eigen::Index c = 0; c < pa.dim(0); ++c)
    for (Eigen::Index y = 0; y + k <= pa.dim(1); ++y)
      for (Eigen::Index x = 0; x + k <= pa.dim(2); ++x) {
        double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const double va = pa(c, y + i, x + j), vb = pb(c, y + i, x + j);
            mu_a += win[i][j] * va;
            mu_b += win[i][j] * vb;
            saa += win[i][j] * va * va;
            sbb += win[i][j] * vb * vb;
            sab += win[i][j] * va * vb;
          }
        const double var_a = saa - mu_a * mu_a, var_b = sbb - mu_b * mu_b;
        const double cov = sab - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++windows;
      }
  // mean over windows and channels: window count is identical per channel
  return total / static_cast<double>(windows);
}

Image smooth_image(Eigen::Index h, Eigen::Index w, uint64_t seed, double lo = 0.0,
                   double hi = 1.0) {
  Rng rng(seed);
  Image img({3, h, w});
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double fx = rng.uniform(0.15, 0.7), fy = rng.uniform(0.15, 0.7);
    const double ph = rng.uniform(0.0, 6.28);
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x)
        img(c, y, x) =
            lo + (hi - lo) * (0.5 + 0.5 * std::sin(fx * x + fy * y + ph + 0.4 * c));
  }
  return img;
}

}  // namespace

TEST_CASE("psnr: caps, exact dB values, and the definitional oracle") {
  const Image a = smooth_image(24, 20, 1);

  SUBCASE("identical images hit the 100 dB sentinel") {
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(psnr(a, a, 2, true) == kPsnrCap);
  }
  SUBCASE("uniform 0.1 offset lands at 20 dB") {
    Image b = a;
    Image base = a;
    base.array() = 0.2;
    b.array() = 0.3;
    CHECK(psnr(base, b) == doctest::Approx(20.0).epsilon(1e-12));
  }
  SUBCASE("random pairs match the direct formula within 1e-9") {
    for (int trial = 0; trial < 50; ++trial) {
      const Image x = random_tensor<double>({3, 21, 23}, 100 + trial);
      const Image y = random_tensor<double>({3, 21, 23}, 200 + trial);
      CHECK(psnr(x, y) == doctest::Approx(oracle_psnr(x, y, 0, false)).epsilon(1e-9));
      CHECK(psnr(x, y, 3, true) == doctest::Approx(oracle_psnr(x, y, 3, true)).epsilon(1e-9));
    }
  }
  SUBCASE("symmetry and channel-permutation invariance") {
    const Image b = smooth_image(24, 20, 2);
    CHECK(psnr(a, b) == psnr(b, a));
    Image ap({3, 24, 20}), bp({3, 24, 20});
    const int perm[3] = {2, 0, 1};
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index y = 0; y < 24; ++y)
        for (Eigen::Index x = 0; x < 20; ++x) {
          ap(c, y, x) = a(perm[c], y, x);
          bp(c, y, x) = b(perm[c], y, x);
        }
    CHECK(psnr(ap, bp) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS_AS(psnr(a, smooth_image(20, 24, 1)), std::invalid_argument);
  }
}

TEST_CASE("ssim: unit self-similarity, anticorrelation, and the brute-force oracle") {
  const Image a = smooth_image(26, 22, 3);

  SUBCASE("ssim(a, a) is exactly one") {
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(a, a, 2, true) == 1.0);
  }
  SUBCASE("inverted binary pattern is anticorrelated") {
    Image bin({1, 22, 22});
    for (Eigen::Index y = 0; y < 22; ++y)
      for (Eigen::Index x = 0; x < 22; ++x) bin(0, y, x) = ((x / 4 + y / 4) % 2 == 0) ? 1.0 : 0.0;
    Image inv = bin;
    inv.array() = 1.0 - inv.array();
    CHECK(ssim(bin, inv) < 0.0);
  }
  SUBCASE("random pairs match the sliding-window oracle within 1e-6") {
    for (int trial = 0; trial < 5; ++trial) {
      const Image x = random_tensor<double>({1, 19, 17}, 300 + trial);
      const Image y = random_tensor<double>({1, 19, 17}, 400 + trial);
      CHECK(ssim(x, y) == doctest::Approx(oracle_ssim(x, y, 0, false)).epsilon(1e-6));
    }
    const Image xc = random_tensor<double>({3, 18, 16}, 7);
    const Image yc = random_tensor<double>({3, 18, 16}, 8);
    CHECK(ssim(xc, yc, 2, true) == doctest::Approx(oracle_ssim(xc, yc, 2, true)).epsilon(1e-6));
  }
  SUBCASE("adding one constant to both nearby images moves ssim less than 1e-6") {
    const Image base = smooth_image(24, 24, 9, 0.3, 0.6);
    Image noisy = base;
    Rng rng(10);
    for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += rng.uniform(-0.005, 0.005);
    Image base_c = base, noisy_c = noisy;
    base_c.array() += 0.1;
    noisy_c.array() += 0.1;
    CHECK(std::abs(ssim(base_c, noisy_c) - ssim(base, noisy)) < 1e-6);
  }
  SUBCASE("images smaller than the window after crop are rejected") {
    const Image tiny = smooth_image(12, 12, 4);
    CHECK_NOTHROW(ssim(tiny, tiny));
    CHECK_THROWS_AS(ssim(tiny, tiny, 1, false), std::invalid_argument);
  }
}

TEST_CASE("benchmark: identity stub, frozen columns, determinism") {
  const auto dir = scratch_dir("eval-bench");
  save_image(dir / "one.png", smooth_image(24, 24, 20));
  save_image(dir / "two.png", smooth_image(24, 24, 21));

  BenchSpec spec;
  spec.dataset_dir = dir.string();
  spec.scale = 1;
  spec.kernel_size = 9;
  spec.crop_border = 1;
  spec.blurs = {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  const BenchModel identity = [](const Image& lr) { return std::pair<Image, Kernel>{lr, {}}; };

  const BenchTable t = run_benchmark(identity, spec);
  REQUIRE(t.rows.size() == 3);
  for (const auto& row : t.rows) {
    CHECK(row.psnr == kPsnrCap);
    CHECK(row.ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isnan(row.kernel_l1));
    CHECK(row.images == 2);
  }
  const auto lines = [](const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
  };
  CHECK(lines(t.csv) == 4);  // header + one row per condition
  CHECK(t.csv.substr(0, t.csv.find('\n')) == "sigma_x,sigma_y,theta,psnr,ssim,kernel_l1,images");
  CHECK(lines(t.text) == 4);

  SUBCASE("two runs agree bit-exactly") {
    const BenchTable u = run_benchmark(identity, spec);
    CHECK(u.csv == t.csv);
    CHECK(u.text == t.text);
  }
  SUBCASE("a kernel-reporting model populates the kernel column") {
    BenchSpec one = spec;
    one.scale = 2;
    one.crop_border = 2;
    one.blurs = {{1.3, 1.3, 0.0}};
    const Kernel known = gaussian_kernel({1.3, 1.3, 0.0}, one.kernel_size);
    const BenchModel oracle_model = [&](const Image& lr) {
      return std::pair<Image, Kernel>{bicubic_resize(lr, lr.dim(1) * 2, lr.dim(2) * 2), known};
    };
    const BenchTable v = run_benchmark(oracle_model, one);
    REQUIRE(v.rows.size() == 1);
    CHECK(v.rows[0].kernel_l1 == 0.0);
    CHECK(v.rows[0].psnr > 10.0);
    CHECK(v.rows[0].psnr < kPsnrCap);
    CHECK(v.rows[0].ssim > 0.0);
  }
  SUBCASE("empty blur list and empty dataset are rejected") {
    BenchSpec bad = spec;
    bad.blurs.clear();
    CHECK_THROWS_AS(run_benchmark(identity, bad), std::invalid_argument);
    BenchSpec nodir = spec;
    nodir.dataset_dir = (dir / "missing").string();
    CHECK_THROWS_AS(run_benchmark(identity, nodir), std::invalid_argument);
  }
}

TEST_CASE("kernel visualization: normalization, sidecar, symmetry") {
  const auto dir = scratch_dir("eval-kviz");

  SUBCASE("delta kernel renders as a single bright center pixel") {
    const auto viz = visualize_kernel(delta_kernel(21), delta_kernel(21), dir);
    const Image img = load_image(viz.est_png);
    REQUIRE(img.dim(1) == 21);
    CHECK(img(0, 10, 10) == 1.0);
    CHECK(img.array().sum() == 1.0);  // everything else black
    CHECK(viz.l1 == 0.0);
    const auto sidecar = nlohmann::json::parse(std::ifstream(viz.sidecar_json));
    CHECK(sidecar.at("l1").get<double>() == 0.0);
    CHECK(sidecar.at("k").get<int>() == 21);
  }
  SUBCASE("isotropic render is point-symmetric and the composite pairs up") {
    const Kernel k = gaussian_kernel({2.6, 2.6, 0.0}, 21);
    const auto viz = visualize_kernel(k, delta_kernel(21), dir);
    const Image img = load_image(viz.est_png);
    for (Eigen::Index y = 0; y < 21; ++y)
      for (Eigen::Index x = 0; x < 21; ++x) CHECK(img(0, y, x) == img(0, 20 - y, 20 - x));
    CHECK(img.array().maxCoeff() == 1.0);  // max-normalized
    const Image pair = load_image(viz.pair_png);
    CHECK(pair.dim(2) == 2 * 21 + 2);
    const auto sidecar = nlohmann::json::parse(std::ifstream(viz.sidecar_json));
    CHECK(sidecar.at("l1").get<double>() ==
          doctest::Approx((k.array() - delta_kernel(21).array()).abs().mean()).epsilon(1e-12));
  }
  SUBCASE("mismatched shapes are rejected") {
    CHECK_THROWS_AS(visualize_kernel(delta_kernel(5), delta_kernel(7), dir),
                    std::invalid_argument);
  }
}

TEST_CASE("trace visualization: counts, shared scale, kbpn-only") {
  const auto dir = scratch_dir("eval-tviz");

  SUBCASE("a real iterative forward yields T feature, T residual, one final render") {
    NetworkConfig cfg;
    cfg.variant = Variant::kKbpn;
    cfg.stages = 3;
    cfg.scale = 2;
    cfg.base_channels = 8;
    cfg.kernel_size = 5;
    cfg.channels = 3;
    const Network<double> net(cfg, 42);
    const Image lr = smooth_image(16, 16, 30);
    const auto res = net.infer(lr);
    const auto viz = visualize_traces(result_to_double(res), lr, cfg.scale, cfg.down_mode, dir);
    CHECK(viz.feature_pngs.size() == 3);
    CHECK(viz.residual_pngs.size() == 3);
    for (const auto& p : viz.feature_pngs) CHECK(fs::exists(p));
    for (const auto& p : viz.residual_pngs) CHECK(fs::exists(p));
    CHECK(fs::exists(viz.final_residual_png));
  }
  SUBCASE("residual renders share one scale: the global max maps to white") {
    ForwardResult<double> r;
    r.sr = Image({1, 8, 8});
    r.kernel = delta_kernel(3);
    StageTrace<double> s1, s2;
    s1.t = 1;
    s1.f_sr = random_tensor<double>({2, 8, 8}, 1);
    s1.r_lr = Image({1, 4, 4});
    s1.r_lr.array() = 0.001;  // faint residual
    s2.t = 2;
    s2.f_sr = random_tensor<double>({2, 8, 8}, 2);
    s2.r_lr = Image({1, 4, 4});
    s2.r_lr.array() = 0.1;
    s2.r_lr(0, 2, 2) = 1.0;  // the global max
    r.traces = {s1, s2};
    const Image lr({1, 4, 4});  // sr is zero, so the final residual is zero too
    const auto viz = visualize_traces(r, lr, 2, DownMode::area, dir);
    CHECK(viz.residual_max == 1.0);
    const Image faint = load_image(viz.residual_pngs[0]);
    CHECK(faint.array().maxCoeff() == 0.0);  // near black under the shared scale
    const Image strong = load_image(viz.residual_pngs[1]);
    CHECK(strong.array().maxCoeff() == 1.0);  // max maps to white
    CHECK(load_image(viz.final_residual_png).array().maxCoeff() == 0.0);
  }
  SUBCASE("results without per-stage residuals are rejected") {
    NetworkConfig cfg;
    cfg.variant = Variant::kDbpnBl;
    cfg.stages = 2;
    cfg.scale = 2;
    cfg.base_channels = 8;
    cfg.kernel_size = 5;
    cfg.channels = 3;
    const Network<double> net(cfg, 42);
    const Image lr = smooth_image(12, 12, 31);
    CHECK_THROWS_AS(
        visualize_traces(result_to_double(net.infer(lr)), lr, cfg.scale, cfg.down_mode, dir),
        std::invalid_argument);
  }
}

TEST_CASE("stage sweep: monotone counts, manifest agreement, reproducible plot") {
  const auto dir = scratch_dir("eval-plot");
  NetworkConfig base;
  base.variant = Variant::kKbpn;
  base.scale = 2;
  base.base_channels = 8;
  base.kernel_size = 5;
  base.channels = 3;

  const auto rows = stage_param_rows(base, {1, 3, 4, 7}, {{3, 27.5}, {4, 28.1}});
  REQUIRE(rows.size() == 4);
  for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].params > rows[i - 1].params);
  CHECK(std::isnan(rows[0].psnr));
  CHECK(rows[1].psnr == 27.5);

  SUBCASE("counts match the allocated parameter manifests") {
    for (int t : {1, 3}) {
      NetworkConfig cfg = base;
      cfg.stages = t;
      const Network<double> net(cfg, 5);
      CHECK(net.params().total_size() ==
            rows[t == 1 ? 0 : 1].params);
    }
  }
  SUBCASE("CSV round trip and byte-identical plot regeneration") {
    const auto csv = dir / "sweep.csv";
    const auto svg1 = dir / "sweep.svg";
    plot_params_vs_stages(base, {1, 3, 4, 7}, {{3, 27.5}, {4, 28.1}}, csv, svg1);
    const auto back = read_stage_params_csv(csv);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].stages == rows[i].stages);
      CHECK(back[i].params == rows[i].params);
      if (!std::isnan(rows[i].psnr)) CHECK(back[i].psnr == rows[i].psnr);
    }
    const auto svg2 = dir / "again.svg";
    plot_from_csv(csv, svg2);
    std::ifstream f1(svg1, std::ios::binary), f2(svg2, std::ios::binary);
    std::ostringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(s1.str().find("<svg") == 0);
  }
}
