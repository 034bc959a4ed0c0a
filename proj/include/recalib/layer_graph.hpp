#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace recalib {

enum class LayerOp {
  Conv,          // weighted; groups/kernel/stride/padding apply
  Linear,        // weighted; operates on a [C] descriptor
  BatchNorm,
  GlobalAvgPool,
  Sigmoid,
  Relu,
  ChannelScale,  // p[n,c] * x[n,c,h,w]
  Hadamard,      // w[n,c,h,w] * x[n,c,h,w]
  Add,
  MaxPool,
  AvgPool,
};

const char* layer_op_name(LayerOp op);

/// Static, per-sample description of one layer: enough to count parameters,
/// multiply-accumulates and activation sizes without instantiating tensors.
struct LayerNode {
  std::string name;
  LayerOp op = LayerOp::Conv;
  std::size_t in_c = 0, in_h = 1, in_w = 1;
  std::size_t out_c = 0, out_h = 1, out_w = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1, padding = 0, groups = 1;
  bool bias = false;
  bool in_block = false;  // part of a recalibration block

  std::size_t out_elems() const { return out_c * out_h * out_w; }
  std::size_t in_elems() const { return in_c * in_h * in_w; }
  bool weighted() const { return op == LayerOp::Conv || op == LayerOp::Linear; }
};

using LayerGraph = std::vector<LayerNode>;

}  // namespace recalib
