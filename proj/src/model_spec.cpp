#include "recalib/model_spec.hpp"

#include "recalib/blocks.hpp"

namespace recalib {

namespace {

ModelSpec cifar_resnet(std::string name, UnitType unit, std::size_t n,
                       std::vector<std::size_t> widths) {
  ModelSpec m;
  m.name = std::move(name);
  m.stem = StemType::Cifar;
  m.stem_width = 16;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    m.stages.push_back(StageSpec{unit, n, widths[i], i == 0 ? 1u : 2u});
  }
  return m;
}

ModelSpec imagenet_resnet(std::string name, UnitType unit, std::vector<std::size_t> counts,
                          std::vector<std::size_t> widths) {
  ModelSpec m;
  m.name = std::move(name);
  m.in_height = m.in_width = 224;
  m.stem = StemType::ImageNet;
  m.stem_width = 64;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    m.stages.push_back(StageSpec{unit, counts[i], widths[i], i == 0 ? 1u : 2u});
  }
  m.count_only = true;
  return m;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

LayerNode make(std::string name, LayerOp op, std::size_t in_c, std::size_t in_h,
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
  return n;
}

LayerNode conv(std::string name, std::size_t cin, std::size_t h, std::size_t w, std::size_t cout,
               std::size_t k, std::size_t stride, std::size_t pad) {
  LayerNode n = make(std::move(name), LayerOp::Conv, cin, h, w, cout, conv_out(h, k, stride, pad),
                     conv_out(w, k, stride, pad));
  n.kernel_h = n.kernel_w = k;
  n.stride = stride;
  n.padding = pad;
  return n;
}

void conv_bn(LayerGraph& g, const std::string& prefix, std::size_t cin, std::size_t h,
             std::size_t w, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
             bool relu) {
  LayerNode c = conv(prefix + ".conv", cin, h, w, cout, k, stride, pad);
  const std::size_t oh = c.out_h, ow = c.out_w;
  g.push_back(c);
  g.push_back(make(prefix + ".bn", LayerOp::BatchNorm, cout, oh, ow, cout, oh, ow));
  if (relu) g.push_back(make(prefix + ".relu", LayerOp::Relu, cout, oh, ow, cout, oh, ow));
}

}  // namespace

std::vector<std::string> model_names() {
  return {"resnet20", "resnet56", "resnet164", "wrn22_10", "wrn18_2", "resnet50"};
}

ModelSpec build(const std::string& name, const std::optional<BlockSpec>& block,
                std::size_t num_classes) {
  if (num_classes < 1) throw ModelSpecError("num_classes must be positive");
  ModelSpec m;
  if (name == "resnet20") {
    m = cifar_resnet(name, UnitType::Basic, 3, {16, 32, 64});
  } else if (name == "resnet56") {
    m = cifar_resnet(name, UnitType::Basic, 9, {16, 32, 64});
  } else if (name == "resnet164") {
    m = cifar_resnet(name, UnitType::Bottleneck, 18, {16, 32, 64});
  } else if (name == "wrn22_10") {
    m = cifar_resnet(name, UnitType::Basic, 3, {160, 320, 640});
  } else if (name == "wrn18_2") {
    m = imagenet_resnet(name, UnitType::Basic, {2, 2, 2, 2}, {128, 256, 512, 1024});
  } else if (name == "resnet50") {
    m = imagenet_resnet(name, UnitType::Bottleneck, {3, 4, 6, 3}, {64, 128, 256, 512});
    m.stride_on_first_1x1 = true;
  } else {
    std::string known;
    for (const auto& n : model_names()) known += (known.empty() ? "" : ", ") + n;
    throw ModelSpecError("unknown model '" + name + "' (known: " + known + ")");
  }
  m.num_classes = num_classes;
  if (block) m = insert_block(std::move(m), *block);
  return m;
}

StemOutput stem_output(const ModelSpec& m) {
  if (m.stem == StemType::Cifar) return {m.stem_width, m.in_height, m.in_width};
  const std::size_t h = conv_out(conv_out(m.in_height, 7, 2, 3), 3, 2, 1);
  const std::size_t w = conv_out(conv_out(m.in_width, 7, 2, 3), 3, 2, 1);
  return {m.stem_width, h, w};
}

std::vector<UnitInfo> residual_units(const ModelSpec& m) {
  std::vector<UnitInfo> units;
  StemOutput s = stem_output(m);
  std::size_t c = s.c, h = s.h, w = s.w;
  for (std::size_t si = 0; si < m.stages.size(); ++si) {
    const StageSpec& st = m.stages[si];
    for (std::size_t u = 0; u < st.units; ++u) {
      UnitInfo info;
      info.name = "stage" + std::to_string(si + 1) + ".unit" + std::to_string(u + 1);
      info.stage = si;
      info.index = u;
      info.type = st.unit;
      info.stride = u == 0 ? st.stride : 1;
      info.in_c = c;
      info.inner_c = st.width;
      info.out_c = st.unit == UnitType::Bottleneck ? st.width * m.expansion : st.width;
      info.in_h = h;
      info.in_w = w;
      info.out_h = conv_out(h, 3, info.stride, 1);
      info.out_w = conv_out(w, 3, info.stride, 1);
      info.projection = info.stride != 1 || info.in_c != info.out_c;
      units.push_back(info);
      c = info.out_c;
      h = info.out_h;
      w = info.out_w;
    }
  }
  return units;
}

ModelSpec insert_block(ModelSpec model, const BlockSpec& spec) {
  if (model.block) {
    throw ModelSpecError("model '" + model.name + "' already carries " + describe(*model.block) +
                         " blocks");
  }
  const auto units = residual_units(model);
  if (units.empty()) throw ModelSpecError("model '" + model.name + "' has no residual units");
  for (const auto& u : units) {
    try {
      validate(spec, u.out_c);
    } catch (const BlockSpecError& e) {
      throw BlockSpecError(u.name + ": " + e.what());
    }
  }
  model.block = spec;
  return model;
}

LayerGraph describe_model(const ModelSpec& m) {
  LayerGraph g;
  if (m.stem == StemType::Cifar) {
    conv_bn(g, "stem", m.in_channels, m.in_height, m.in_width, m.stem_width, 3, 1, 1, true);
  } else {
    conv_bn(g, "stem", m.in_channels, m.in_height, m.in_width, m.stem_width, 7, 2, 3, true);
    const LayerNode& last = g.back();
    LayerNode pool = make("stem.maxpool", LayerOp::MaxPool, last.out_c, last.out_h, last.out_w,
                          last.out_c, conv_out(last.out_h, 3, 2, 1), conv_out(last.out_w, 3, 2, 1));
    pool.kernel_h = pool.kernel_w = 3;
    pool.stride = 2;
    pool.padding = 1;
    g.push_back(pool);
  }

  for (const UnitInfo& u : residual_units(m)) {
    const std::string& p = u.name;
    if (u.type == UnitType::Basic) {
      conv_bn(g, p + ".c1", u.in_c, u.in_h, u.in_w, u.out_c, 3, u.stride, 1, true);
      conv_bn(g, p + ".c2", u.out_c, u.out_h, u.out_w, u.out_c, 3, 1, 1, false);
    } else {
      const std::size_t s1 = m.stride_on_first_1x1 ? u.stride : 1;
      const std::size_t s3 = m.stride_on_first_1x1 ? 1 : u.stride;
      conv_bn(g, p + ".c1", u.in_c, u.in_h, u.in_w, u.inner_c, 1, s1, 0, true);
      const LayerNode& c1 = g[g.size() - 3];
      conv_bn(g, p + ".c2", u.inner_c, c1.out_h, c1.out_w, u.inner_c, 3, s3, 1, true);
      conv_bn(g, p + ".c3", u.inner_c, u.out_h, u.out_w, u.out_c, 1, 1, 0, false);
    }
    if (m.block) {
      LayerGraph b = describe_block(*m.block, u.out_c, u.out_h, u.out_w, p + ".block");
      g.insert(g.end(), b.begin(), b.end());
    }
    if (u.projection) {
      conv_bn(g, p + ".shortcut", u.in_c, u.in_h, u.in_w, u.out_c, 1, u.stride, 0, false);
    }
    g.push_back(make(p + ".add", LayerOp::Add, u.out_c, u.out_h, u.out_w, u.out_c, u.out_h, u.out_w));
    g.push_back(make(p + ".relu", LayerOp::Relu, u.out_c, u.out_h, u.out_w, u.out_c, u.out_h, u.out_w));
  }

  const LayerNode& last = g.back();
  const std::size_t c = last.out_c;
  g.push_back(make("head.gap", LayerOp::GlobalAvgPool, c, last.out_h, last.out_w, c, 1, 1));
  LayerNode fc = make("head.fc", LayerOp::Linear, c, 1, 1, m.num_classes, 1, 1);
  fc.bias = true;
  g.push_back(fc);
  return g;
}

}  // namespace recalib
