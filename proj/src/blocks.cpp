#include "recalib/blocks.hpp"

#include <algorithm>
#include <numeric>

namespace recalib {

namespace {

LayerNode node(std::string name, LayerOp op, std::size_t in_c, std::size_t in_h,
               std::size_t in_w, std::size_t out_c, std::size_t out_h, std::size_t out_w) {
  LayerNode n;
  n.name = std::move(name);
  n.op = op;
  n.in_c = in_c;
  n.in_h = in_h;
  n.in_w = in_w;
  n.out_c = out_c;
  n.out_h = out_h;
  n.out_w = out_w;
  n.in_block = true;
  return n;
}

LayerNode conv_node(std::string name, std::size_t cin, std::size_t cout, std::size_t h,
                    std::size_t w, std::size_t kh, std::size_t kw, std::size_t pad,
                    std::size_t groups) {
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  LayerNode n = node(std::move(name), LayerOp::Conv, cin, h, w, cout, oh, ow);
  n.kernel_h = kh;
  n.kernel_w = kw;
  n.padding = pad;
  n.groups = groups;
  return n;
}

void push_tail(LayerGraph& g, const std::string& prefix, std::size_t C, bool bn) {
  if (bn) g.push_back(node(prefix + ".bn", LayerOp::BatchNorm, C, 1, 1, C, 1, 1));
  g.push_back(node(prefix + ".sigmoid", LayerOp::Sigmoid, C, 1, 1, C, 1, 1));
}

}  // namespace

LayerGraph describe_block(const BlockSpec& spec, std::size_t C, std::size_t H, std::size_t W,
                          const std::string& prefix) {
  validate(spec, C);
  LayerGraph g;
  const bool bn = spec.bn_enabled();
  const std::size_t pad = (spec.kernel - 1) / 2;
  auto gap = [&](std::size_t c) {
    g.push_back(node(prefix + ".gap", LayerOp::GlobalAvgPool, c, H, W, c, 1, 1));
  };
  auto scale = [&]() {
    g.push_back(node(prefix + ".scale", LayerOp::ChannelScale, C, H, W, C, H, W));
  };

  switch (spec.kind) {
    case BlockKind::AB:
      gap(C);
      g.push_back(conv_node(prefix + ".dw", C, C, 1, 1, 1, 1, 0, C));
      push_tail(g, prefix, C, bn);
      scale();
      break;
    case BlockKind::AB_PLUS:
      gap(C);
      g.push_back(conv_node(prefix + ".conv", C, C, 1, 1, 1, 1, 0, 1));
      push_tail(g, prefix, C, bn);
      scale();
      break;
    case BlockKind::GROUPED:
      gap(C);
      g.push_back(conv_node(prefix + ".conv", C, C, 1, 1, 1, 1, 0, spec.groups));
      push_tail(g, prefix, C, bn);
      scale();
      break;
    case BlockKind::SE: {
      const std::size_t hidden = C / spec.reduction;
      gap(C);
      LayerNode fc1 = node(prefix + ".fc1", LayerOp::Linear, C, 1, 1, hidden, 1, 1);
      fc1.bias = spec.se_bias;
      g.push_back(fc1);
      if (spec.se_hidden_relu) {
        g.push_back(node(prefix + ".relu", LayerOp::Relu, hidden, 1, 1, hidden, 1, 1));
      }
      LayerNode fc2 = node(prefix + ".fc2", LayerOp::Linear, hidden, 1, 1, C, 1, 1);
      fc2.bias = spec.se_bias;
      g.push_back(fc2);
      push_tail(g, prefix, C, false);
      scale();
      break;
    }
    case BlockKind::ONLY_GAP:
      gap(C);
      push_tail(g, prefix, C, false);
      scale();
      break;
    case BlockKind::GAP_BN:
      gap(C);
      push_tail(g, prefix, C, true);
      scale();
      break;
    case BlockKind::GLOBAL_DW_WAVG:
      g.push_back(conv_node(prefix + ".wavg", C, C, H, W, H, W, 0, C));
      push_tail(g, prefix, C, false);
      scale();
      break;
    case BlockKind::GLOBAL_WAVG:
      g.push_back(conv_node(prefix + ".wavg", C, C, H, W, H, W, 0, 1));
      push_tail(g, prefix, C, false);
      scale();
      break;
    case BlockKind::FINE_CONV:
    case BlockKind::FINE_DWCONV: {
      const std::size_t groups = spec.kind == BlockKind::FINE_CONV ? 1 : C;
      g.push_back(
          conv_node(prefix + ".spatial", C, C, H, W, spec.kernel, spec.kernel, pad, groups));
      if (bn) g.push_back(node(prefix + ".bn", LayerOp::BatchNorm, C, H, W, C, H, W));
      g.push_back(node(prefix + ".sigmoid", LayerOp::Sigmoid, C, H, W, C, H, W));
      g.push_back(node(prefix + ".hadamard", LayerOp::Hadamard, C, H, W, C, H, W));
      break;
    }
    case BlockKind::COMBINED_GAP:
      g.push_back(conv_node(prefix + ".spatial", C, C, H, W, spec.kernel, spec.kernel, pad, C));
      g.push_back(node(prefix + ".spatial_sigmoid", LayerOp::Sigmoid, C, H, W, C, H, W));
      g.push_back(node(prefix + ".hadamard", LayerOp::Hadamard, C, H, W, C, H, W));
      gap(C);
      push_tail(g, prefix, C, false);
      scale();
      break;
    case BlockKind::COMBINED_AB:
    case BlockKind::COMBINED_AB_PLUS: {
      g.push_back(conv_node(prefix + ".spatial", C, C, H, W, spec.kernel, spec.kernel, pad, C));
      gap(C);
      const bool dw = spec.kind == BlockKind::COMBINED_AB;
      g.push_back(conv_node(prefix + (dw ? ".dw" : ".conv"), C, C, 1, 1, 1, 1, 0, dw ? C : 1));
      push_tail(g, prefix, C, bn);
      scale();
      break;
    }
  }
  return g;
}

bool ChannelGate::active() const {
  if (per_sample) return per_sample_count > 0;
  return std::any_of(zeroed.begin(), zeroed.end(), [](std::uint8_t z) { return z != 0; });
}

namespace {

template <typename T>
Var<T> to_descriptor4(const Var<T>& y) {
  return reshape(y, Shape{y.shape()[0], y.shape()[1], 1, 1});
}

template <typename T>
Var<T> to_descriptor2(const Var<T>& y) {
  return reshape(y, Shape{y.shape()[0], y.shape()[1]});
}

template <typename T>
BlockOutput<T> descriptor_tail(const Var<T>& x, const Var<T>& d, BatchNorm<T>* bn,
                               bool training) {
  Var<T> z = bn ? (*bn)(d, training) : d;
  Var<T> p = sigmoid(z);
  return {channel_scale(x, p), p};
}

void require_channels(std::size_t got, std::size_t want, const char* op) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(got) +
                     " channels but block parameters are for C=" + std::to_string(want));
  }
}

}  // namespace

template <typename T>
BlockOutput<T> ab_forward(const Var<T>& x, const Var<T>& dw_weight, BatchNorm<T>* bn,
                          bool training) {
  if (x.shape().size() != 4) throw ShapeError("ab_forward: input must be [N,C,H,W]");
  require_channels(x.shape()[1], dw_weight.shape()[0], "ab_forward");
  Var<T> y = to_descriptor4(global_avg_pool(x));
  Var<T> d = to_descriptor2(depthwise_conv2d(y, dw_weight));
  return descriptor_tail(x, d, bn, training);
}

template <typename T>
BlockOutput<T> ab_plus_forward(const Var<T>& x, const Var<T>& full_weight, BatchNorm<T>* bn,
                               bool training) {
  if (x.shape().size() != 4) throw ShapeError("ab_plus_forward: input must be [N,C,H,W]");
  require_channels(x.shape()[1], full_weight.shape()[0], "ab_plus_forward");
  Var<T> y = to_descriptor4(global_avg_pool(x));
  Var<T> d = to_descriptor2(conv2d(y, full_weight));
  return descriptor_tail(x, d, bn, training);
}

template <typename T>
BlockOutput<T> grouped_forward(const Var<T>& x, const Var<T>& weight, std::size_t groups,
                               BatchNorm<T>* bn, bool training) {
  if (x.shape().size() != 4) throw ShapeError("grouped_forward: input must be [N,C,H,W]");
  const std::size_t C = x.shape()[1];
  require_channels(C, weight.shape()[0], "grouped_forward");
  if (groups == 0 || C % groups != 0) {
    throw ShapeError("grouped_forward: G=" + std::to_string(groups) +
                     " does not divide C=" + std::to_string(C));
  }
  Var<T> y = to_descriptor4(global_avg_pool(x));
  Var<T> d = to_descriptor2(conv2d(y, weight, Conv2dOptions{1, 0, groups}));
  return descriptor_tail(x, d, bn, training);
}

template <typename T>
BlockOutput<T> se_forward(const Var<T>& x, const Linear<T>& fc1, const Linear<T>& fc2,
                          bool hidden_relu) {
  if (x.shape().size() != 4) throw ShapeError("se_forward: input must be [N,C,H,W]");
  Var<T> h = fc1(global_avg_pool(x));
  if (hidden_relu) h = relu(h);
  Var<T> p = sigmoid(fc2(h));
  return {channel_scale(x, p), p};
}

template <typename T>
RecalibBlock<T>::RecalibBlock(const BlockSpec& spec, std::size_t channels, std::size_t height,
                              std::size_t width, std::string name, std::mt19937_64& rng)
    : spec_(spec), channels_(channels), height_(height), width_(width), name_(std::move(name)) {
  validate(spec_, channels_);
  const std::size_t C = channels_;
  const std::size_t k = spec_.kernel;
  auto dw_param = [&](const std::string& n) {
    return Parameter<T>(name_ + n, ParamRole::ConvWeight,
                        Tensor<T>({C, 1, 1, 1}, static_cast<T>(spec_.dw_init)), true);
  };
  auto conv_param = [&](const std::string& n, Shape shape, std::size_t fan_in) {
    return Parameter<T>(name_ + n, ParamRole::ConvWeight,
                        kaiming_normal<T>(std::move(shape), fan_in, rng), true);
  };

  switch (spec_.kind) {
    case BlockKind::AB:
      pointwise_ = dw_param(".dw.weight");
      break;
    case BlockKind::AB_PLUS:
      pointwise_ = conv_param(".conv.weight", {C, C, 1, 1}, C);
      break;
    case BlockKind::GROUPED:
      if (spec_.groups == C) {
        pointwise_ = Parameter<T>(name_ + ".conv.weight", ParamRole::ConvWeight,
                                  Tensor<T>({C, 1, 1, 1}, static_cast<T>(spec_.dw_init)), true);
      } else {
        pointwise_ = conv_param(".conv.weight", {C, C / spec_.groups, 1, 1}, C / spec_.groups);
      }
      break;
    case BlockKind::SE: {
      const std::size_t hidden = C / spec_.reduction;
      fc1_.emplace(name_ + ".fc1", C, hidden, spec_.se_bias, rng, true, true);
      fc2_.emplace(name_ + ".fc2", hidden, C, spec_.se_bias, rng, true, true);
      break;
    }
    case BlockKind::ONLY_GAP:
    case BlockKind::GAP_BN:
      break;
    case BlockKind::GLOBAL_DW_WAVG:
      wavg_ = conv_param(".wavg.weight", {C, 1, height_, width_}, height_ * width_);
      break;
    case BlockKind::GLOBAL_WAVG:
      wavg_ = conv_param(".wavg.weight", {C, C, height_, width_}, C * height_ * width_);
      break;
    case BlockKind::FINE_CONV:
      spatial_ = conv_param(".spatial.weight", {C, C, k, k}, C * k * k);
      break;
    case BlockKind::FINE_DWCONV:
    case BlockKind::COMBINED_GAP:
      spatial_ = conv_param(".spatial.weight", {C, 1, k, k}, k * k);
      break;
    case BlockKind::COMBINED_AB:
      spatial_ = conv_param(".spatial.weight", {C, 1, k, k}, k * k);
      pointwise_ = dw_param(".dw.weight");
      break;
    case BlockKind::COMBINED_AB_PLUS:
      spatial_ = conv_param(".spatial.weight", {C, 1, k, k}, k * k);
      pointwise_ = conv_param(".conv.weight", {C, C, 1, 1}, C);
      break;
  }
  if (spec_.bn_enabled()) bn_.emplace(name_ + ".bn", C, true);
}

template <typename T>
Var<T> RecalibBlock<T>::gate_weights(const Var<T>& p, const ChannelGate* gate) const {
  if (!gate || !gate->active()) return p;
  if (p.shape().size() != 2) {
    throw std::logic_error(name_ + ": zero-out gating needs channel-wise weights");
  }
  const std::size_t N = p.shape()[0], C = p.shape()[1];
  Tensor<T> mask = Tensor<T>::ones({N, C});
  if (!gate->per_sample) {
    if (gate->zeroed.size() != C) {
      throw ShapeError(name_ + ": gate mask has " + std::to_string(gate->zeroed.size()) +
                       " entries for C=" + std::to_string(C));
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        if (gate->zeroed[c]) mask[n * C + c] = T(0);
  } else {
    const std::size_t count = std::min(gate->per_sample_count, C);
    std::vector<std::size_t> order(C);
    for (std::size_t n = 0; n < N; ++n) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      const T* row = p.value().data() + n * C;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return gate->per_sample_high ? row[a] > row[b] : row[a] < row[b];
      });
      for (std::size_t i = 0; i < count; ++i) mask[n * C + order[i]] = T(0);
    }
  }
  return mul_constant(p, mask);
}

template <typename T>
Var<T> RecalibBlock<T>::spatial_descriptor(const Var<T>& x) const {
  const std::size_t pad = (spec_.kernel - 1) / 2;
  if (spec_.kind == BlockKind::FINE_CONV) {
    return conv2d(x, spatial_->var(), Conv2dOptions{1, pad, 1});
  }
  return depthwise_conv2d(x, spatial_->var(), pad, 1);
}

template <typename T>
BlockOutput<T> RecalibBlock<T>::forward(const Var<T>& x, bool training, const ChannelGate* gate) {
  if (x.shape().size() != 4) throw ShapeError(name_ + ": input must be [N,C,H,W]");
  require_channels(x.shape()[1], channels_, name_.c_str());
  BatchNorm<T>* bn = this->bn();

  if (gate && gate->active() && !is_channelwise(spec_.kind)) {
    throw std::logic_error(name_ + ": zero-out gating needs channel-wise weights");
  }

  auto finish = [&](const Var<T>& base, const Var<T>& d) -> BlockOutput<T> {
    Var<T> z = bn ? (*bn)(d, training) : d;
    Var<T> p = gate_weights(sigmoid(z), gate);
    return {channel_scale(base, p), p};
  };

  switch (spec_.kind) {
    case BlockKind::AB:
    case BlockKind::AB_PLUS:
    case BlockKind::GROUPED: {
      if (!gate || !gate->active()) {
        if (spec_.kind == BlockKind::AB) return ab_forward(x, pointwise_->var(), bn, training);
        if (spec_.kind == BlockKind::AB_PLUS)
          return ab_plus_forward(x, pointwise_->var(), bn, training);
        return grouped_forward(x, pointwise_->var(), spec_.groups, bn, training);
      }
      Var<T> y = to_descriptor4(global_avg_pool(x));
      Var<T> d = spec_.kind == BlockKind::AB
                     ? depthwise_conv2d(y, pointwise_->var())
                     : conv2d(y, pointwise_->var(),
                              Conv2dOptions{1, 0,
                                            spec_.kind == BlockKind::GROUPED ? spec_.groups : 1});
      return finish(x, to_descriptor2(d));
    }
    case BlockKind::SE: {
      if (!gate || !gate->active()) return se_forward(x, *fc1_, *fc2_, spec_.se_hidden_relu);
      Var<T> h = (*fc1_)(global_avg_pool(x));
      if (spec_.se_hidden_relu) h = relu(h);
      Var<T> p = gate_weights(sigmoid((*fc2_)(h)), gate);
      return {channel_scale(x, p), p};
    }
    case BlockKind::ONLY_GAP:
    case BlockKind::GAP_BN:
      return finish(x, global_avg_pool(x));
    case BlockKind::GLOBAL_DW_WAVG:
    case BlockKind::GLOBAL_WAVG: {
      if (x.shape()[2] != height_ || x.shape()[3] != width_) {
        throw ShapeError(name_ + ": weighted-average maps are bound to " +
                         std::to_string(height_) + "x" + std::to_string(width_) +
                         " inputs, got " + std::to_string(x.shape()[2]) + "x" +
                         std::to_string(x.shape()[3]));
      }
      const std::size_t groups = spec_.kind == BlockKind::GLOBAL_DW_WAVG ? channels_ : 1;
      Var<T> d = to_descriptor2(conv2d(x, wavg_->var(), Conv2dOptions{1, 0, groups}));
      return finish(x, d);
    }
    case BlockKind::FINE_CONV:
    case BlockKind::FINE_DWCONV: {
      Var<T> d = spatial_descriptor(x);
      if (bn) d = (*bn)(d, training);
      Var<T> p = sigmoid(d);
      return {elementwise_scale(x, p), p};
    }
    case BlockKind::COMBINED_GAP: {
      Var<T> fine = sigmoid(spatial_descriptor(x));
      Var<T> x1 = elementwise_scale(x, fine);
      Var<T> p = gate_weights(sigmoid(global_avg_pool(x1)), gate);
      return {channel_scale(x1, p), p};
    }
    case BlockKind::COMBINED_AB:
    case BlockKind::COMBINED_AB_PLUS: {
      Var<T> y = to_descriptor4(global_avg_pool(spatial_descriptor(x)));
      Var<T> d = spec_.kind == BlockKind::COMBINED_AB ? depthwise_conv2d(y, pointwise_->var())
                                                      : conv2d(y, pointwise_->var());
      return finish(x, to_descriptor2(d));
    }
  }
  throw std::logic_error("unhandled block kind");
}

template <typename T>
void RecalibBlock<T>::collect(ParamRegistry<T>& reg) {
  if (spatial_) reg.params.push_back(&*spatial_);
  if (wavg_) reg.params.push_back(&*wavg_);
  if (fc1_) fc1_->collect(reg);
  if (fc2_) fc2_->collect(reg);
  if (pointwise_) reg.params.push_back(&*pointwise_);
  if (bn_) bn_->collect(reg);
}

template <typename T>
Parameter<T>* RecalibBlock<T>::find_param(const std::string& suffix) {
  ParamRegistry<T> reg;
  collect(reg);
  for (auto* p : reg.params) {
    const auto& n = p->name();
    if (n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
      return p;
  }
  return nullptr;
}

#define RECALIB_INSTANTIATE_BLOCKS(T)                                                          \
  template class RecalibBlock<T>;                                                              \
  template BlockOutput<T> ab_forward(const Var<T>&, const Var<T>&, BatchNorm<T>*, bool);       \
  template BlockOutput<T> ab_plus_forward(const Var<T>&, const Var<T>&, BatchNorm<T>*, bool);  \
  template BlockOutput<T> grouped_forward(const Var<T>&, const Var<T>&, std::size_t,           \
                                          BatchNorm<T>*, bool);                                \
  template BlockOutput<T> se_forward(const Var<T>&, const Linear<T>&, const Linear<T>&, bool);

RECALIB_INSTANTIATE_BLOCKS(float)
RECALIB_INSTANTIATE_BLOCKS(double)

#undef RECALIB_INSTANTIATE_BLOCKS

}  // namespace recalib
