#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kbsr/autograd/ops.hpp"
#include "kbsr/autograd/tape.hpp"
#include "kbsr/core/rng.hpp"
#include "kbsr/core/tensor.hpp"

namespace kbsr {

enum class InitKind { kZero, kFanInNormal };

/// Owns every trainable tensor of a model, keyed by hierarchical name.
/// Creation order is stable, so iteration order doubles as the manifest
/// order for checkpoints. Initial values are drawn from a stream derived
/// from (master_seed, name): two models that declare a parameter under the
/// same name start from identical weights.
template <class Scalar>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t master_seed) : master_seed_(master_seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<Scalar>& create(const std::string& name, Shape shape, InitKind kind,
                            Eigen::Index fan_in = 0, double slope = 0.1) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Tensor<Scalar> v(std::move(shape));
    if (kind == InitKind::kFanInNormal) {
      if (fan_in <= 0) throw std::invalid_argument("fan_in must be positive for " + name);
      // He-style scaling with the rectifier-slope correction; keeps the
      // activation variance flat through deep stacks.
      const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
      Rng rng(Rng::hash_str(master_seed_, name));
      for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = static_cast<Scalar>(rng.normal() * stddev);
    }
    params_.push_back(std::make_unique<Parameter<Scalar>>(name, std::move(v)));
    index_.emplace(name, params_.size() - 1);
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
  }

  const std::vector<std::unique_ptr<Parameter<Scalar>>>& all() const { return params_; }
  size_t count() const { return params_.size(); }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::uint64_t master_seed() const { return master_seed_; }

 private:
  std::uint64_t master_seed_;
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

/// 3x3/1x1/etc. convolution layer: weight (out,in,k,k), optional bias (out).
template <class Scalar>
struct Conv2d {
  Parameter<Scalar>* w = nullptr;
  Parameter<Scalar>* b = nullptr;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<Scalar>& store, const std::string& name, Eigen::Index in_ch,
         Eigen::Index out_ch, int k, int stride_, int pad_, double slope, bool bias = true,
         bool zero_weights = false)
      : stride(stride_), pad(pad_) {
    const InitKind kind = zero_weights ? InitKind::kZero : InitKind::kFanInNormal;
    w = &store.create(name + ".w", {out_ch, in_ch, k, k}, kind, in_ch * k * k, slope);
    if (bias) b = &store.create(name + ".b", {out_ch}, InitKind::kZero);
  }

  Var<Scalar> operator()(Var<Scalar> x) const {
    Tape<Scalar>& t = *x.tape;
    return conv2d(x, t.use(*w), b ? t.use(*b) : Var<Scalar>{}, stride, pad);
  }
};

/// Transposed convolution layer: weight (in,out,k,k), optional bias (out).
template <class Scalar>
struct Deconv2d {
  Parameter<Scalar>* w = nullptr;
  Parameter<Scalar>* b = nullptr;
  int stride = 1;
  int pad = 0;

  Deconv2d() = default;
  Deconv2d(ParamStore<Scalar>& store, const std::string& name, Eigen::Index in_ch,
           Eigen::Index out_ch, int k, int stride_, int pad_, double slope, bool bias = true,
           bool zero_weights = false)
      : stride(stride_), pad(pad_) {
    const InitKind kind = zero_weights ? InitKind::kZero : InitKind::kFanInNormal;
    // Each output pixel of a stride-s deconv receives ~k*k/s^2 taps per
    // input channel; scale by that effective fan-in.
    const Eigen::Index fan_in =
        std::max<Eigen::Index>(1, in_ch * k * k / (static_cast<Eigen::Index>(stride_) * stride_));
    w = &store.create(name + ".w", {in_ch, out_ch, k, k}, kind, fan_in, slope);
    if (bias) b = &store.create(name + ".b", {out_ch}, InitKind::kZero);
  }

  Var<Scalar> operator()(Var<Scalar> x) const {
    Tape<Scalar>& t = *x.tape;
    return conv_transpose2d(x, t.use(*w), b ? t.use(*b) : Var<Scalar>{}, stride, pad);
  }
};

/// Fully connected layer on rank-1 inputs: weight (out,in), bias (out).
template <class Scalar>
struct Dense {
  Parameter<Scalar>* w = nullptr;
  Parameter<Scalar>* b = nullptr;

  Dense() = default;
  Dense(ParamStore<Scalar>& store, const std::string& name, Eigen::Index in_dim,
        Eigen::Index out_dim, double slope, bool zero_weights = false) {
    const InitKind kind = zero_weights ? InitKind::kZero : InitKind::kFanInNormal;
    w = &store.create(name + ".w", {out_dim, in_dim}, kind, in_dim, slope);
    b = &store.create(name + ".b", {out_dim}, InitKind::kZero);
  }

  Var<Scalar> operator()(Var<Scalar> x) const {
    Tape<Scalar>& t = *x.tape;
    return linear(x, t.use(*w), t.use(*b));
  }
};

}  // namespace kbsr
