#include "recalib/model.hpp"

namespace recalib {

template <typename T>
struct Model<T>::Unit {
  UnitInfo info;
  std::vector<Conv2d<T>> convs;
  std::vector<BatchNorm<T>> bns;
  std::optional<Conv2d<T>> shortcut_conv;
  std::optional<BatchNorm<T>> shortcut_bn;
  std::unique_ptr<RecalibBlock<T>> block;
};

template <typename T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed, bool allow_large) : spec_(std::move(spec)) {
  if (spec_.count_only && !allow_large) {
    throw ModelSpecError("model '" + spec_.name +
                         "' is count-only; pass allow_large to instantiate it");
  }
  std::mt19937_64 rng(seed);
  const bool imagenet = spec_.stem == StemType::ImageNet;
  stem_conv_ = Conv2d<T>("stem.conv", spec_.in_channels, spec_.stem_width, imagenet ? 7 : 3,
                         Conv2dOptions{imagenet ? 2u : 1u, imagenet ? 3u : 1u, 1}, rng);
  stem_bn_ = BatchNorm<T>("stem.bn", spec_.stem_width);

  for (const UnitInfo& info : residual_units(spec_)) {
    auto unit = std::make_unique<Unit>();
    unit->info = info;
    const std::string& p = info.name;
    if (info.type == UnitType::Basic) {
      unit->convs.emplace_back(p + ".c1.conv", info.in_c, info.out_c, 3,
                               Conv2dOptions{info.stride, 1, 1}, rng);
      unit->convs.emplace_back(p + ".c2.conv", info.out_c, info.out_c, 3, Conv2dOptions{1, 1, 1},
                               rng);
      unit->bns.emplace_back(p + ".c1.bn", info.out_c);
      unit->bns.emplace_back(p + ".c2.bn", info.out_c);
    } else {
      const std::size_t s1 = spec_.stride_on_first_1x1 ? info.stride : 1;
      const std::size_t s3 = spec_.stride_on_first_1x1 ? 1 : info.stride;
      unit->convs.emplace_back(p + ".c1.conv", info.in_c, info.inner_c, 1,
                               Conv2dOptions{s1, 0, 1}, rng);
      unit->convs.emplace_back(p + ".c2.conv", info.inner_c, info.inner_c, 3,
                               Conv2dOptions{s3, 1, 1}, rng);
      unit->convs.emplace_back(p + ".c3.conv", info.inner_c, info.out_c, 1,
                               Conv2dOptions{1, 0, 1}, rng);
      unit->bns.emplace_back(p + ".c1.bn", info.inner_c);
      unit->bns.emplace_back(p + ".c2.bn", info.inner_c);
      unit->bns.emplace_back(p + ".c3.bn", info.out_c);
    }
    if (spec_.block) {
      unit->block = std::make_unique<RecalibBlock<T>>(*spec_.block, info.out_c, info.out_h,
                                                       info.out_w, p + ".block", rng);
    }
    if (info.projection) {
      unit->shortcut_conv.emplace(p + ".shortcut.conv", info.in_c, info.out_c, 1,
                                  Conv2dOptions{info.stride, 0, 1}, rng);
      unit->shortcut_bn.emplace(p + ".shortcut.bn", info.out_c);
    }
    units_.push_back(std::move(unit));
  }
  const std::size_t last_c = units_.empty() ? spec_.stem_width : units_.back()->info.out_c;
  fc_ = Linear<T>("head.fc", last_c, spec_.num_classes, true, rng);
}

template <typename T>
Model<T>::~Model() = default;

template <typename T>
Var<T> Model<T>::forward(const Tensor<T>& batch, const ForwardOptions<T>& opt) {
  const Shape want{batch.shape().empty() ? 0 : batch.shape()[0], spec_.in_channels,
                   spec_.in_height, spec_.in_width};
  if (batch.shape() != want) {
    throw ShapeError("model '" + spec_.name + "' expects input " + shape_str(want) + ", got " +
                     shape_str(batch.shape()));
  }
  if (opt.gates && opt.gates->size() != num_blocks()) {
    throw ShapeError("forward: " + std::to_string(opt.gates->size()) + " gates for " +
                     std::to_string(num_blocks()) + " blocks");
  }
  const bool training = opt.training;
  Var<T> h = relu(stem_bn_(stem_conv_(Var<T>(batch)), training));
  if (spec_.stem == StemType::ImageNet) h = max_pool2d(h, 3, 2, 1);

  std::size_t block_index = 0;
  for (auto& unit : units_) {
    Var<T> x = h;
    Var<T> r = x;
    const std::size_t n = unit->convs.size();
    for (std::size_t i = 0; i < n; ++i) {
      r = unit->bns[i](unit->convs[i](r), training);
      if (i + 1 < n) r = relu(r);
    }
    if (unit->block) {
      const ChannelGate* gate = opt.gates ? &(*opt.gates)[block_index] : nullptr;
      BlockOutput<T> b = unit->block->forward(r, training, gate);
      if (opt.trace) opt.trace->push_back(b.p.value());
      r = b.out;
      ++block_index;
    }
    Var<T> s = unit->shortcut_conv ? (*unit->shortcut_bn)((*unit->shortcut_conv)(x), training) : x;
    h = relu(add(r, s));
  }
  return fc_(global_avg_pool(h));
}

template <typename T>
ParamRegistry<T> Model<T>::registry() {
  ParamRegistry<T> reg;
  stem_conv_.collect(reg);
  stem_bn_.collect(reg);
  for (auto& unit : units_) {
    for (std::size_t i = 0; i < unit->convs.size(); ++i) {
      unit->convs[i].collect(reg);
      unit->bns[i].collect(reg);
    }
    if (unit->block) unit->block->collect(reg);
    if (unit->shortcut_conv) {
      unit->shortcut_conv->collect(reg);
      unit->shortcut_bn->collect(reg);
    }
  }
  fc_.collect(reg);
  return reg;
}

template <typename T>
std::size_t Model<T>::num_parameters() {
  std::size_t n = 0;
  for (auto* p : registry().params) n += p->value().numel();
  return n;
}

template <typename T>
std::size_t Model<T>::num_blocks() const {
  return spec_.block ? units_.size() : 0;
}

template <typename T>
RecalibBlock<T>& Model<T>::block(std::size_t i) {
  if (i >= num_blocks()) throw std::out_of_range("block index " + std::to_string(i));
  return *units_[i]->block;
}

template <typename T>
std::vector<std::string> Model<T>::block_names() const {
  std::vector<std::string> out;
  if (!spec_.block) return out;
  for (const auto& u : units_) out.push_back(u->info.name);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace recalib
