#pragma once

#include <cstdint>
#include <span>

#include "recalib/autograd.hpp"

namespace recalib {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Running statistics and hyperparameters of one batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormStats init(std::size_t features) {
    return {Tensor<T>::zeros({features}), Tensor<T>::ones({features}), T(1e-5), T(0.1)};
  }
};

// Grouped 2-D cross-correlation. weight is [Cout, Cin/groups, kh, kw].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Conv2dOptions& opt = {});

// One filter per channel; weight is [C, 1, kh, kw].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& weight, std::size_t padding = 0,
                        std::size_t stride = 1);

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& input);

// Accepts [N,F] or [N,F,H,W]. In training mode normalizes with batch
// statistics and updates the running estimates; otherwise uses them.
template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& stats, bool training);

template <typename T>
Var<T> sigmoid(const Var<T>& input);

template <typename T>
Var<T> relu(const Var<T>& input);

// out[n,k,i,j] = p[n,k] * x[n,k,i,j]
template <typename T>
Var<T> channel_scale(const Var<T>& input, const Var<T>& weights);

// Hadamard product of two equally shaped tensors.
template <typename T>
Var<T> elementwise_scale(const Var<T>& input, const Var<T>& weights);

// x[N,in] * W[out,in]^T + b. Pass an undefined Var for no bias.
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding = 0);

// Average over each window, padding excluded (windows must fit).
template <typename T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride);

// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels);

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape);

template <typename T>
Var<T> sum(const Var<T>& input);

// Sum of input * coeffs with a constant coefficient tensor.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& coeffs);

// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var<T> mul_constant(const Var<T>& input, const Tensor<T>& factor);

}  // namespace recalib
