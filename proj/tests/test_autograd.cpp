#include "doctest.h"
#include "gradcheck.hpp"
#include "kbsr/autograd/ops.hpp"

using namespace kbsr;
using testutil::grad_check;
using testutil::random_param;

TEST_CASE("tape mechanics: leaves, reuse, seeds, grad-disabled mode") {
  auto p = random_param("p", {4}, 1);
  {
    Tape<double> tape;
    auto v = tape.use(p);
    auto doubled = add(v, v);  // same parameter twice accumulates
    auto loss = mse_loss(doubled, tape.input(Tensor<double>::zeros({4})));
    tape.backward(loss);
  }
  // d/dp mean((2p)^2) = 8p/4 = 2p.
  for (int i = 0; i < 4; ++i) CHECK(p.grad[i] == doctest::Approx(2.0 * p.value[i]).epsilon(1e-12));

  // Seed scaling: backward with seed 0.25 quarters the gradient.
  auto q = random_param("q", {4}, 2);
  {
    Tape<double> tape;
    auto loss = mse_loss(tape.use(q), tape.input(Tensor<double>::zeros({4})));
    tape.backward(loss, 0.25);
  }
  for (int i = 0; i < 4; ++i)
    CHECK(q.grad[i] == doctest::Approx(0.125 * q.value[i]).epsilon(1e-12));

  // Grad-disabled tapes refuse backward.
  Tape<double> frozen(false);
  auto v = frozen.use(p);
  auto y = sigmoid(v);
  CHECK(y.value().all_finite());
  CHECK_THROWS_AS(frozen.backward(y), std::logic_error);
}

TEST_CASE("conv2d forward matches a direct loop oracle") {
  auto x = testutil::random_tensor<double>({2, 5, 5}, 10);
  auto w = testutil::random_tensor<double>({3, 2, 3, 3}, 11, -1.0, 1.0);
  auto b = testutil::random_tensor<double>({3}, 12, -1.0, 1.0);

  Tape<double> tape(false);
  auto out = conv2d(tape.input(x), tape.input(w), tape.input(b), 2, 1).value();
  CHECK(out.shape() == Shape{3, 3, 3});

  for (Eigen::Index o = 0; o < 3; ++o)
    for (Eigen::Index y = 0; y < 3; ++y)
      for (Eigen::Index xx = 0; xx < 3; ++xx) {
        double acc = b[o];
        for (Eigen::Index c = 0; c < 2; ++c)
          for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 3; ++j) {
              const Eigen::Index sy = y * 2 + i - 1, sx = xx * 2 + j - 1;
              if (sy >= 0 && sy < 5 && sx >= 0 && sx < 5)
                acc += w[((o * 2 + c) * 3 + i) * 3 + j] * x(c, sy, sx);
            }
        CHECK(out(o, y, xx) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
  // <g, conv(x)> == <conv_transpose(g), x> for shared weights.
  auto w = testutil::random_tensor<double>({4, 3, 8, 8}, 20, -0.5, 0.5);
  auto x = testutil::random_tensor<double>({3, 12, 12}, 21);
  auto g = testutil::random_tensor<double>({4, 3, 3}, 22);

  Tape<double> tape(false);
  auto cx = conv2d(tape.input(x), tape.input(w), Var<double>{}, 4, 2).value();
  CHECK(cx.shape() == Shape{4, 3, 3});

  // Transposed weights live in (c_in, c_out, kh, kw) layout: same storage here
  // because the conv maps 3->4 and the deconv maps 4->3 with w[o][c] = w'[o][c].
  auto tg = conv_transpose2d(tape.input(g), tape.input(w), Var<double>{}, 4, 2).value();
  CHECK(tg.shape() == Shape{3, 12, 12});

  const double lhs = (cx.array() * g.array()).sum();
  const double rhs = (tg.array() * x.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  // DBPN-style shape: stride 4, 8x8 kernel, pad 2 exactly quadruples.
  auto up = conv_transpose2d(tape.input(x), tape.input(testutil::random_tensor<double>(
                                                {3, 5, 8, 8}, 23, -0.1, 0.1)),
                             Var<double>{}, 4, 2)
                .value();
  CHECK(up.shape() == Shape{5, 48, 48});
}

TEST_CASE("finite differences: elementwise and shape ops") {
  auto a = random_param("a", {3, 4, 4}, 30, -1.0, 1.0);
  auto b = random_param("b", {3, 4, 4}, 31, -1.0, 1.0);
  auto target = testutil::random_tensor<double>({3, 4, 4}, 32, 2.0, 3.0);

  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(add(t.use(a), t.use(b)), t.input(target));
            },
            {&a, &b}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(sub(t.use(a), t.use(b)), t.input(target));
            },
            {&a, &b}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(hadamard(t.use(a), t.use(b)), t.input(target));
            },
            {&a, &b}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(scale(t.use(a), 1.7), t.input(target));
            },
            {&a}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(reshape(t.use(a), {4, 12}), t.input(target.reshaped({4, 12})));
            },
            {&a}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(concat_ch<double>({t.use(a), t.use(b)}),
                              t.input(testutil::random_tensor<double>({6, 4, 4}, 33)));
            },
            {&a, &b}) < 1e-7);
}

TEST_CASE("finite differences: activations") {
  // Inputs kept away from the relu kink at 0.
  auto x = random_param("x", {2, 3, 3}, 40, 0.1, 1.0);
  auto y = random_param("y", {2, 3, 3}, 41, -1.0, -0.1);
  auto target = testutil::random_tensor<double>({2, 3, 3}, 42, 2.0, 3.0);

  for (double slope : {0.0, 0.1, 1.0}) {
    CHECK(grad_check(
              [&](Tape<double>& t) {
                return mse_loss(leaky_relu(t.use(x), slope), t.input(target));
              },
              {&x}) < 1e-7);
    CHECK(grad_check(
              [&](Tape<double>& t) {
                return mse_loss(leaky_relu(t.use(y), slope), t.input(target));
              },
              {&y}) < 1e-7);
  }

  CHECK(grad_check(
            [&](Tape<double>& t) { return mse_loss(sigmoid(t.use(y)), t.input(target)); },
            {&y}) < 1e-7);

  // log over strictly positive inputs, far above the clamp.
  CHECK(grad_check(
            [&](Tape<double>& t) { return mse_loss(log_clamped(t.use(x)), t.input(target)); },
            {&x}) < 1e-7);

  auto logits = random_param("logits", {9}, 43, -2.0, 2.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(softmax_flat(t.use(logits)),
                              t.input(testutil::random_tensor<double>({9}, 44)));
            },
            {&logits}) < 1e-7);

  Tape<double> tape(false);
  auto p = softmax_flat(tape.use(logits)).value();
  CHECK(p.array().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.array().minCoeff() > 0.0);
  auto mid = sigmoid(tape.input(Tensor<double>::zeros({1}))).value();
  CHECK(mid[0] == doctest::Approx(0.5));
}

TEST_CASE("finite differences: dense layers and pooling") {
  auto x = random_param("x", {6}, 50, -1.0, 1.0);
  auto w = random_param("w", {4, 6}, 51, -0.5, 0.5);
  auto b = random_param("b", {4}, 52, -0.5, 0.5);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(linear(t.use(x), t.use(w), t.use(b)),
                              t.input(testutil::random_tensor<double>({4}, 53, 2.0, 3.0)));
            },
            {&x, &w, &b}) < 1e-7);

  auto f = random_param("f", {3, 4, 4}, 54, -1.0, 1.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(global_avg_pool(t.use(f)),
                              t.input(testutil::random_tensor<double>({3}, 55, 2.0, 3.0)));
            },
            {&f}) < 1e-7);

  auto v = random_param("v", {5}, 56, -1.0, 1.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(stretch_to_map(t.use(v), 3, 4),
                              t.input(testutil::random_tensor<double>({5, 3, 4}, 57, 2.0, 3.0)));
            },
            {&v}) < 1e-7);

  // GAP of spatially constant planes equals the plane value.
  Tape<double> tape(false);
  auto cmap = stretch_to_map(tape.input(testutil::random_tensor<double>({5}, 58)), 6, 7);
  auto pooled = global_avg_pool(cmap).value();
  for (int i = 0; i < 5; ++i)
    CHECK(pooled[i] == doctest::Approx(cmap.value()(i, 3, 2)).epsilon(1e-12));
}

TEST_CASE("finite differences: convolutions") {
  auto x = random_param("x", {2, 6, 6}, 60, -1.0, 1.0);
  auto w = random_param("w", {3, 2, 3, 3}, 61, -0.5, 0.5);
  auto b = random_param("b", {3}, 62, -0.5, 0.5);
  auto target = testutil::random_tensor<double>({3, 6, 6}, 63, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(conv2d(t.use(x), t.use(w), t.use(b), 1, 1), t.input(target));
            },
            {&x, &w, &b}) < 1e-7);

  auto target2 = testutil::random_tensor<double>({3, 3, 3}, 64, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(conv2d(t.use(x), t.use(w), t.use(b), 2, 1), t.input(target2));
            },
            {&x, &w, &b}) < 1e-7);

  auto wt = random_param("wt", {2, 3, 6, 6}, 65, -0.3, 0.3);
  auto bt = random_param("bt", {3}, 66, -0.5, 0.5);
  auto target3 = testutil::random_tensor<double>({3, 12, 12}, 67, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(conv_transpose2d(t.use(x), t.use(wt), t.use(bt), 2, 2),
                              t.input(target3));
            },
            {&x, &wt, &bt}) < 1e-7);
}

TEST_CASE("finite differences: degradation operators in the graph") {
  auto img = random_param("img", {2, 8, 8}, 70, 0.0, 1.0);
  auto ker = random_param("ker", {5, 5}, 71, 0.0, 0.2);
  auto target = testutil::random_tensor<double>({2, 8, 8}, 72, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(blur_same(t.use(img), t.use(ker)), t.input(target));
            },
            {&img, &ker}) < 1e-7);

  // Adjoint identity: <g, A x> = <A'g, x> where A'g arrives via backward.
  {
    auto g = testutil::random_tensor<double>({2, 8, 8}, 73, -1.0, 1.0);
    Tape<double> tf(false);
    auto ax = blur_same(tf.input(img.value), tf.input(ker.value)).value();
    const double lhs = (ax.array() * g.array()).sum();

    Parameter<double> xp("xp", img.value);
    Tape<double> tb;
    tb.backward(sum(hadamard(blur_same(tb.use(xp), tb.input(ker.value)), tb.input(g))));
    const double rhs = (xp.grad.array() * img.value.array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }

  for (auto mode : {DownMode::decimate, DownMode::area, DownMode::bicubic}) {
    auto t8 = testutil::random_tensor<double>({2, 4, 4}, 74, 2.0, 3.0);
    CHECK(grad_check(
              [&](Tape<double>& t) {
                return mse_loss(downsample(t.use(img), 2, mode), t.input(t8));
              },
              {&img}) < 1e-7);
  }

  auto lr = testutil::random_tensor<double>({2, 4, 4}, 75, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) {
              return mse_loss(degrade(t.use(img), t.use(ker), 2, DownMode::area), t.input(lr));
            },
            {&img, &ker}) < 1e-7);
}

TEST_CASE("finite differences: losses, away from L1 kinks") {
  auto a = random_param("a", {3, 4, 4}, 80, 0.0, 1.0);
  auto b = random_param("b", {3, 4, 4}, 81, 2.0, 3.0);
  CHECK(grad_check(
            [&](Tape<double>& t) { return mse_loss(t.use(a), t.use(b)); }, {&a, &b}) < 1e-7);
  CHECK(grad_check(
            [&](Tape<double>& t) { return l1_loss(t.use(a), t.use(b)); }, {&a, &b}) < 1e-7);

  // L1 subgradient at exact zero difference is 0.
  auto c = random_param("c", {5}, 82);
  Parameter<double> d("d", c.value);
  {
    Tape<double> tape;
    tape.backward(l1_loss(tape.use(c), tape.use(d)));
  }
  CHECK(c.grad.array().abs().maxCoeff() == 0.0);
  CHECK(d.grad.array().abs().maxCoeff() == 0.0);

  // Loss values: mse of constant offset, l1 of constant offset.
  Tape<double> tape(false);
  auto base = tape.input(Tensor<double>::constant({2, 3, 3}, 0.4));
  auto off = tape.input(Tensor<double>::constant({2, 3, 3}, 0.5));
  CHECK(mse_loss(base, off).value()[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(l1_loss(base, off).value()[0] == doctest::Approx(0.1).epsilon(1e-12));
}
