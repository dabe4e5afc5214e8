#include "doctest.h"
#include "kbsr/imaging/image.hpp"
#include "testutil.hpp"

using namespace kbsr;

TEST_CASE("png round trip bounded by quantization") {
  auto dir = testutil::scratch_dir("png");

  // Flat extremes map to the code-range extremes.
  for (double v : {0.0, 1.0}) {
    Image flat = Image::constant({3, 2, 2}, v);
    save_image(dir / "flat.png", flat);
    Image back = load_image(dir / "flat.png");
    CHECK(testutil::max_abs_diff(flat, back) == 0.0);
  }

  auto rnd = testutil::random_tensor<double>({3, 13, 17}, 5);
  save_image(dir / "rnd8.png", rnd, 8);
  Image back8 = load_image(dir / "rnd8.png");
  CHECK(back8.shape() == rnd.shape());
  CHECK(testutil::max_abs_diff(rnd, back8) <= 0.5 / 255.0 + 1e-12);

  save_image(dir / "rnd16.png", rnd, 16);
  Image back16 = load_image(dir / "rnd16.png");
  CHECK(testutil::max_abs_diff(rnd, back16) <= 0.5 / 65535.0 + 1e-12);

  // Grayscale path.
  auto gray = testutil::random_tensor<double>({1, 9, 9}, 6);
  save_image(dir / "gray.png", gray);
  Image backg = load_image(dir / "gray.png");
  CHECK(backg.dim(0) == 1);
  CHECK(testutil::max_abs_diff(gray, backg) <= 0.5 / 255.0 + 1e-12);

  CHECK_THROWS(load_image(dir / "missing.png"));
  save_image(dir / "second-load.png", gray);  // exercised below as a non-PNG rejection control
  std::filesystem::copy_file(dir / "second-load.png", dir / "ok.png");
  CHECK_NOTHROW(load_image(dir / "ok.png"));
}

TEST_CASE("luma conversion matches published coefficients") {
  Image white = Image::constant({3, 1, 1}, 1.0);
  auto y_full = rgb_to_y(white, LumaMode::full_swing);
  CHECK(y_full(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  auto y_studio = rgb_to_y(white);  // studio swing is the default
  CHECK(y_studio(0, 0, 0) == doctest::Approx((16.0 + 219.0) / 255.0).epsilon(1e-9));

  Image black = Image::zeros({3, 1, 1});
  CHECK(rgb_to_y(black, LumaMode::full_swing)(0, 0, 0) == 0.0);
  CHECK(rgb_to_y(black)(0, 0, 0) == doctest::Approx(16.0 / 255.0));

  Image red = Image::zeros({3, 1, 1});
  red(0, 0, 0) = 1.0;
  CHECK(rgb_to_y(red, LumaMode::full_swing)(0, 0, 0) == doctest::Approx(0.299).epsilon(1e-12));
  CHECK(rgb_to_y(red)(0, 0, 0) == doctest::Approx(16.0 / 255.0 + 65.481 / 255.0).epsilon(1e-9));

  // Full-swing luma is linear: rgb_to_y(a*img) = a*rgb_to_y(img).
  auto img = testutil::random_tensor<double>({3, 4, 4}, 8);
  Image scaled(img.shape(), (img.array() * 0.37).eval());
  auto lhs = rgb_to_y(scaled, LumaMode::full_swing);
  Image rhs_base = rgb_to_y(img, LumaMode::full_swing);
  Image rhs(rhs_base.shape(), (rhs_base.array() * 0.37).eval());
  CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-12);

  CHECK_THROWS_AS(rgb_to_y(Image::zeros({1, 2, 2})), std::invalid_argument);
}

TEST_CASE("random patch sampling is deterministic and matches direct slicing") {
  // Gradient image so every patch mean identifies its location.
  Image hr({1, 40, 40});
  for (Eigen::Index y = 0; y < 40; ++y)
    for (Eigen::Index x = 0; x < 40; ++x) hr(0, y, x) = (y * 40.0 + x) / 1600.0;

  PatchSpec spec{.lr_patch_size = 4, .scale = 2, .flip_horizontal = true, .flip_vertical = true};

  auto a = random_patch_pair(hr, spec, 123);
  auto b = random_patch_pair(hr, spec, 123);
  CHECK(testutil::max_abs_diff(a, b) == 0.0);

  for (uint64_t seed = 0; seed < 100; ++seed) {
    PatchRecord rec;
    auto patch = random_patch_pair(hr, spec, seed, &rec);
    auto oracle = crop(hr, rec.y0, rec.x0, 8, 8);
    if (rec.flipped_h) oracle = flip_horizontal(oracle);
    if (rec.flipped_v) oracle = flip_vertical(oracle);
    CHECK(testutil::max_abs_diff(patch, oracle) == 0.0);
    // Flips do not change the patch mean; it must match the slice directly.
    CHECK(patch.array().mean() ==
          doctest::Approx(crop(hr, rec.y0, rec.x0, 8, 8).array().mean()).epsilon(1e-12));
  }

  // Flips disabled on an exactly-fitting image returns the image itself.
  PatchSpec full{.lr_patch_size = 20, .scale = 2, .flip_horizontal = false, .flip_vertical = false};
  auto whole = random_patch_pair(hr, full, 9);
  CHECK(testutil::max_abs_diff(whole, hr) == 0.0);

  PatchSpec toobig{.lr_patch_size = 21, .scale = 2};
  CHECK_THROWS_AS(random_patch_pair(hr, toobig, 0), std::invalid_argument);
}
