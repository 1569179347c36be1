#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "scanfill/checkpoint.hpp"
#include "scanfill/ops.hpp"

namespace scanfill::nn {

// Parameters are initialised from double draws and then narrowed, so float
// and double models built from the same seed agree up to rounding.
template <typename T>
ad::Tensor<T> uniform_init(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(d(rng));
  ad::Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad();
  return t;
}

template <typename T>
struct Linear {
  ad::Tensor<T> weight;  // in x out
  ad::Tensor<T> bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero = false, bool with_bias = true) {
    const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_init<T>({in, out}, bound, rng);
    if (with_bias) bias = uniform_init<T>({out}, bound, rng);
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    auto y = ad::matmul(x, weight);
    return bias.defined() ? ad::add(y, bias) : y;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    if (bias.defined()) f(prefix + ".bias", bias);
  }
};

template <typename Model>
auto parameters(Model& m) {
  using T = typename Model::value_type;
  std::vector<ad::Tensor<T>> out;
  m.visit([&](const std::string&, ad::Tensor<T>& t) { out.push_back(t); });
  return out;
}

/// Copy whose parameters alias the originals' values but own their own
/// gradients, for running independent tapes in parallel.
template <typename Model>
Model shadow_copy(const Model& m) {
  using T = typename Model::value_type;
  Model copy = m;
  copy.visit([](const std::string&, ad::Tensor<T>& t) { t = t.shadow(); });
  return copy;
}

/// Adds each shadow's gradient into the matching master parameter.
template <typename Model>
void accumulate_from(Model& master, Model& shadow) {
  using T = typename Model::value_type;
  auto src = parameters(shadow);
  std::size_t i = 0;
  master.visit([&](const std::string&, ad::Tensor<T>& t) {
    if (src[i].has_grad()) t.accumulate_grad(src[i].grad());
    ++i;
  });
}

template <typename Model>
NamedTensors export_parameters(Model& m, const std::string& prefix) {
  using T = typename Model::value_type;
  NamedTensors out;
  m.visit([&](const std::string& name, ad::Tensor<T>& t) {
    out.emplace_back(prefix + name, t.template cast<float>());
  });
  return out;
}

/// Overwrites parameter values from a checkpoint. Missing entries raise
/// IoError and shape mismatches ShapeError.
template <typename Model>
void import_parameters(Model& m, const NamedTensors& src, const std::string& prefix) {
  using T = typename Model::value_type;
  m.visit([&](const std::string& name, ad::Tensor<T>& t) {
    const auto& s = find_tensor(src, prefix + name);
    if (s.shape() != t.shape()) {
      throw ShapeError("checkpoint entry " + prefix + name + " has shape " + ad::to_string(s.shape()) +
                       " but the model expects " + ad::to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    const auto v = s.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(v[i]);
  });
}

}  // namespace scanfill::nn
