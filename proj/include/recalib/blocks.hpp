#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "recalib/block_spec.hpp"
#include "recalib/layer_graph.hpp"
#include "recalib/nn.hpp"

namespace recalib {

/// Structural description of one block at width C on an H x W input. The
/// complexity analyzer walks this; the runtime block below mirrors it.
LayerGraph describe_block(const BlockSpec& spec, std::size_t C, std::size_t H, std::size_t W,
                          const std::string& prefix);

/// Forces selected recalibration weights to zero during a forward pass.
/// Either a fixed per-channel mask, or a per-sample rule that ranks each
/// sample's own weights and zeroes the `per_sample_count` highest (or lowest).
struct ChannelGate {
  std::vector<std::uint8_t> zeroed;
  bool per_sample = false;
  std::size_t per_sample_count = 0;
  bool per_sample_high = true;

  bool active() const;
};

template <typename T>
struct BlockOutput {
  Var<T> out;  // recalibrated feature maps, same shape as the input
  Var<T> p;    // weights actually applied: [N,C] or [N,C,H,W]
};

// The individual designs, usable without a RecalibBlock. `bn` may be null.

template <typename T>
BlockOutput<T> ab_forward(const Var<T>& x, const Var<T>& dw_weight, BatchNorm<T>* bn,
                          bool training);

template <typename T>
BlockOutput<T> ab_plus_forward(const Var<T>& x, const Var<T>& full_weight, BatchNorm<T>* bn,
                               bool training);

template <typename T>
BlockOutput<T> grouped_forward(const Var<T>& x, const Var<T>& weight, std::size_t groups,
                               BatchNorm<T>* bn, bool training);

template <typename T>
BlockOutput<T> se_forward(const Var<T>& x, const Linear<T>& fc1, const Linear<T>& fc2,
                          bool hidden_relu);

/// One recalibration block with its own parameters. Kinds that learn spatial
/// weight maps (GLOBAL_DW_WAVG, GLOBAL_WAVG) only accept inputs of the H x W
/// they were built for.
template <typename T>
class RecalibBlock {
 public:
  RecalibBlock(const BlockSpec& spec, std::size_t channels, std::size_t height,
               std::size_t width, std::string name, std::mt19937_64& rng);

  BlockOutput<T> forward(const Var<T>& x, bool training, const ChannelGate* gate = nullptr);

  void collect(ParamRegistry<T>& reg);

  const BlockSpec& spec() const { return spec_; }
  std::size_t channels() const { return channels_; }
  const std::string& name() const { return name_; }

  /// Parameter whose name ends with `suffix` (e.g. "dw.weight"), or null.
  Parameter<T>* find_param(const std::string& suffix);
  BatchNorm<T>* bn() { return bn_ ? &*bn_ : nullptr; }
  Linear<T>* fc1() { return fc1_ ? &*fc1_ : nullptr; }
  Linear<T>* fc2() { return fc2_ ? &*fc2_ : nullptr; }

 private:
  Var<T> gate_weights(const Var<T>& p, const ChannelGate* gate) const;
  Var<T> spatial_descriptor(const Var<T>& x) const;

  BlockSpec spec_;
  std::size_t channels_, height_, width_;
  std::string name_;
  std::optional<Parameter<T>> spatial_;  // k x k conv of fine/combined kinds
  std::optional<Parameter<T>> pointwise_;  // 1x1 weight on the descriptor
  std::optional<Parameter<T>> wavg_;     // G / H spatial weight maps
  std::optional<BatchNorm<T>> bn_;
  std::optional<Linear<T>> fc1_, fc2_;
};

}  // namespace recalib
