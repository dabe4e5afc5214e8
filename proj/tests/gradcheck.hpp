#pragma once

#include <algorithm>
#include <vector>

#include "kbsr/autograd/tape.hpp"
#include "testutil.hpp"

namespace kbsr::testutil {

/// Central finite-difference verification of reverse-mode gradients.
///
/// `build` must construct the scalar objective on the given tape, reading
/// every checked leaf through tape.use(*leaf). Returns the worst relative
/// error max |fd - analytic| / max(1, |fd|, |analytic|) over all leaf entries.
template <class Build>
double grad_check(Build&& build, const std::vector<Parameter<double>*>& leaves,
                  double h = 1e-5) {
  for (auto* p : leaves) p->zero_grad();
  {
    Tape<double> tape;
    auto root = build(tape);
    tape.backward(root);
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return build(tape).value()[0];
  };
  double worst = 0.0;
  for (auto* p : leaves) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = eval();
      p->value[i] = orig - h;
      const double fm = eval();
      p->value[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = p->grad[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
    }
  }
  return worst;
}

inline Parameter<double> random_param(const std::string& name, Shape dims, uint64_t seed,
                                      double lo = 0.0, double hi = 1.0) {
  return {name, random_tensor<double>(std::move(dims), seed, lo, hi)};
}

}  // namespace kbsr::testutil
