#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "urcsa/conv.hpp"
#include "urcsa/random.hpp"
#include "urcsa/tensor.hpp"

namespace urcsa {

// Named trainable tensor. The handle is shared, so every use of a parameter
// (including repeated passes through a weight-shared block) aliases the same
// storage.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

// Ordered registry of a model's parameters; registration order is the
// checkpoint order.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Shape shape) {
    for (const auto& p : params_) {
      if (p.name == name) throw UsageError("duplicate parameter name '" + name + "'");
    }
    Tensor<T> t(std::move(shape), T(0), true);
    params_.push_back({name, t});
    return t;
  }

  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Parameter<T>>& params() { return params_; }
  std::size_t size() const { return params_.size(); }

  Tensor<T> find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.value;
    }
    throw UsageError("no parameter named '" + name + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.value.clear_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
std::size_t param_count(const ParameterSet<T>& params) {
  std::size_t total = 0;
  for (const auto& p : params.params()) total += p.value.numel();
  return total;
}

// Fan-in scaled uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : 1));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Parameter count of a k x k convolution with bias.
constexpr std::size_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k) {
  return cin * cout * k * k + cout;
}

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv create(ParameterSet<T>& params, const std::string& name, std::size_t cin, std::size_t cout,
                     std::size_t k, std::size_t stride, Rng& rng) {
    Conv c;
    c.weight = params.add(name + ".weight", Shape{cout, cin, k, k});
    c.bias = params.add(name + ".bias", Shape{cout});
    init_uniform(c.weight, cin * k * k, rng);
    init_uniform(c.bias, cin * k * k, rng);
    c.stride = stride;
    c.pad = (k - 1) / 2;
    return c;
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

inline constexpr double kLeakySlope = 0.2;

// Two same-padded 3x3 convolutions, each followed by leaky ReLU.
template <typename T>
struct ConvBlock {
  Conv<T> first;
  Conv<T> second;

  static ConvBlock create(ParameterSet<T>& params, const std::string& name, std::size_t cin, std::size_t cout,
                          Rng& rng) {
    return {Conv<T>::create(params, name + ".conv1", cin, cout, 3, 1, rng),
            Conv<T>::create(params, name + ".conv2", cout, cout, 3, 1, rng)};
  }

  static constexpr std::size_t param_count(std::size_t cin, std::size_t cout) {
    return conv_param_count(cin, cout, 3) + conv_param_count(cout, cout, 3);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const T slope = static_cast<T>(kLeakySlope);
    return leaky_relu(second(leaky_relu(first(x), slope)), slope);
  }
};

}  // namespace urcsa
