#pragma once

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "recalib/ops.hpp"

namespace recalib {

enum class ParamRole { ConvWeight, BnGamma, BnBeta, FcWeight, FcBias };

std::string_view role_name(ParamRole role);

/// A trainable tensor: leaf variable plus its immutable role tag. `in_block`
/// marks parameters that belong to a recalibration block.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, ParamRole role, Tensor<T> value, bool in_block = false)
      : name_(std::move(name)), role_(role), in_block_(in_block), var_(std::move(value), true) {}

  const std::string& name() const { return name_; }
  ParamRole role() const { return role_; }
  bool in_block() const { return in_block_; }
  const Var<T>& var() const { return var_; }
  const Tensor<T>& value() const { return var_.value(); }
  Tensor<T>& value() { return var_.mutable_value(); }
  const Tensor<T>& grad() const { return var_.grad(); }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  ParamRole role_ = ParamRole::ConvWeight;
  bool in_block_ = false;
  Var<T> var_;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

/// Flat view over every parameter and buffer of a model, in registration order.
template <typename T>
struct ParamRegistry {
  std::vector<Parameter<T>*> params;
  std::vector<NamedBuffer<T>> buffers;
};

/// Normal(0, sqrt(2 / fan_in)).
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_fill(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
         Conv2dOptions opt, std::mt19937_64& rng, bool in_block = false)
      : opt_(opt) {
    const std::size_t fan_in = cin / opt.groups * kernel * kernel;
    weight_ = Parameter<T>(name + ".weight", ParamRole::ConvWeight,
                           kaiming_normal<T>({cout, cin / opt.groups, kernel, kernel}, fan_in, rng),
                           in_block);
  }
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight_.var(), opt_); }
  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  const Conv2dOptions& options() const { return opt_; }
  void collect(ParamRegistry<T>& reg) { reg.params.push_back(&weight_); }

 private:
  Conv2dOptions opt_;
  Parameter<T> weight_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t features, bool in_block = false)
      : name_(name),
        gamma_(name + ".gamma", ParamRole::BnGamma, Tensor<T>::ones({features}), in_block),
        beta_(name + ".beta", ParamRole::BnBeta, Tensor<T>::zeros({features}), in_block),
        stats_(BatchNormStats<T>::init(features)) {}

  Var<T> operator()(const Var<T>& x, bool training) {
    return batch_norm(x, gamma_.var(), beta_.var(), stats_, training);
  }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  BatchNormStats<T>& stats() { return stats_; }
  const BatchNormStats<T>& stats() const { return stats_; }
  void collect(ParamRegistry<T>& reg) {
    reg.params.push_back(&gamma_);
    reg.params.push_back(&beta_);
    reg.buffers.push_back({name_ + ".running_mean", &stats_.running_mean});
    reg.buffers.push_back({name_ + ".running_var", &stats_.running_var});
  }

 private:
  std::string name_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  BatchNormStats<T> stats_;
};

/// Fully connected layer. Weight is uniform in +-1/sqrt(fan_in), bias zero.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias,
         std::mt19937_64& rng, bool in_block = false, bool kaiming = false) {
    Tensor<T> w = kaiming ? kaiming_normal<T>({out, in}, in, rng)
                          : uniform_fill<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    weight_ = Parameter<T>(name + ".weight", ParamRole::FcWeight, std::move(w), in_block);
    if (with_bias) {
      bias_ = Parameter<T>(name + ".bias", ParamRole::FcBias, Tensor<T>::zeros({out}), in_block);
      has_bias_ = true;
    }
  }
  Var<T> operator()(const Var<T>& x) const {
    return linear(x, weight_.var(), has_bias_ ? bias_.var() : Var<T>());
  }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }
  void collect(ParamRegistry<T>& reg) {
    reg.params.push_back(&weight_);
    if (has_bias_) reg.params.push_back(&bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = false;
};

}  // namespace recalib
