#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "recalib/blocks.hpp"
#include "recalib/model_spec.hpp"

namespace recalib {

template <typename T>
struct ForwardOptions {
  bool training = false;
  /// When set, receives every block's applied weights p, in layer order.
  std::vector<Tensor<T>>* trace = nullptr;
  /// Optional per-block gates, indexed like blocks(); size must match.
  const std::vector<ChannelGate>* gates = nullptr;
};

/// Trainable instance of a ModelSpec.
template <typename T>
class Model {
 public:
  /// `allow_large` permits instantiating count-only networks (ResNet-50,
  /// WRN-18-2) for smoke tests.
  Model(ModelSpec spec, std::uint64_t seed, bool allow_large = false);
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// batch is [N, C, H, W] matching the spec's input shape; returns logits [N, classes].
  Var<T> forward(const Tensor<T>& batch, const ForwardOptions<T>& opt = {});

  const ModelSpec& spec() const { return spec_; }
  ParamRegistry<T> registry();
  std::size_t num_parameters();

  std::size_t num_blocks() const;
  RecalibBlock<T>& block(std::size_t i);
  /// Unit names carrying blocks, e.g. "stage3.unit1".
  std::vector<std::string> block_names() const;

 private:
  struct Unit;
  ModelSpec spec_;
  Conv2d<T> stem_conv_;
  BatchNorm<T> stem_bn_;
  std::vector<std::unique_ptr<Unit>> units_;
  Linear<T> fc_;
};

}  // namespace recalib
