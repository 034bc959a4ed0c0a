#include "recalib/complexity.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "recalib/blocks.hpp"

namespace recalib {

const char* convention_name(Convention c) {
  return c == Convention::Paper ? "paper" : "exact";
}

const char* layer_op_name(LayerOp op) {
  switch (op) {
    case LayerOp::Conv: return "conv";
    case LayerOp::Linear: return "linear";
    case LayerOp::BatchNorm: return "batchnorm";
    case LayerOp::GlobalAvgPool: return "gap";
    case LayerOp::Sigmoid: return "sigmoid";
    case LayerOp::Relu: return "relu";
    case LayerOp::ChannelScale: return "channel_scale";
    case LayerOp::Hadamard: return "hadamard";
    case LayerOp::Add: return "add";
    case LayerOp::MaxPool: return "maxpool";
    case LayerOp::AvgPool: return "avgpool";
  }
  return "?";
}

namespace {

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

std::uint64_t weights_of(const LayerNode& n) {
  if (n.op == LayerOp::Conv) {
    return u64(n.out_c) * u64(n.in_c / n.groups) * u64(n.kernel_h) * u64(n.kernel_w);
  }
  if (n.op == LayerOp::Linear) return u64(n.in_c) * u64(n.out_c);
  return 0;
}

BlockSpec effective_spec(const BlockSpec& spec, const ComplexityQuery& q) {
  BlockSpec s = spec;
  if (q.r) s.reduction = q.r;
  if (q.G) s.groups = q.G;
  return s;
}

std::size_t effective_channels(const BlockSpec& spec, const ComplexityQuery& q) {
  if (q.C) return q.C;
  if (spec.channels) return spec.channels;
  throw BlockSpecError("complexity query needs a channel count (C)");
}

}  // namespace

Cost node_cost(const LayerNode& n, const ComplexityQuery& q) {
  const std::uint64_t B = u64(q.B), bytes = u64(q.bytes_per_element);
  const std::uint64_t mac_scale = q.flop_convention == FlopConvention::MacAsTwo ? 2 : 1;
  const std::uint64_t w = weights_of(n);
  const std::uint64_t out = u64(n.out_elems());
  Cost c;

  if (q.mode == Convention::Paper) {
    if (!n.weighted()) return c;
    const bool descriptor = n.out_h == 1 && n.out_w == 1;
    const std::uint64_t act = descriptor ? u64(std::min(n.in_c, n.out_c)) : out;
    c.params = w;
    c.flops = mac_scale * w * u64(n.out_h) * u64(n.out_w) * B;
    c.rtm = bytes * (c.params + act * B);
    return c;
  }

  std::uint64_t buffers = 0;
  switch (n.op) {
    case LayerOp::Conv:
    case LayerOp::Linear:
      c.params = w + (n.bias ? u64(n.out_c) : 0);
      c.flops = mac_scale * w * u64(n.out_h) * u64(n.out_w) * B + (n.bias ? out * B : 0);
      break;
    case LayerOp::BatchNorm:
      c.params = 2 * u64(n.out_c);
      buffers = 2 * u64(n.out_c);
      c.flops = 2 * out * B;
      break;
    case LayerOp::GlobalAvgPool:
      c.flops = u64(n.in_elems()) * B;
      break;
    case LayerOp::MaxPool:
    case LayerOp::AvgPool:
      c.flops = out * u64(n.kernel_h) * u64(n.kernel_w) * B;
      break;
    case LayerOp::Sigmoid:
    case LayerOp::Relu:
    case LayerOp::ChannelScale:
    case LayerOp::Hadamard:
    case LayerOp::Add:
      c.flops = out * B;
      break;
  }
  c.rtm = bytes * (c.params + buffers + out * B);
  return c;
}

ComplexityReport walk(const LayerGraph& graph, const ComplexityQuery& q) {
  ComplexityReport rep;
  rep.mode = q.mode;
  rep.rows.reserve(graph.size());
  for (const LayerNode& n : graph) {
    ReportRow row{n.name, node_cost(n, q)};
    rep.total += row.cost;
    rep.rows.push_back(std::move(row));
  }
  rep.note = q.mode == Convention::Paper
                 ? "paper convention: conv/FC multiply weights and MACs only; descriptor layers "
                   "hold min(in,out) activations"
                 : "exact convention: all trainable tensors, BN buffers, every layer output and "
                   "elementwise arithmetic";
  rep.note += q.flop_convention == FlopConvention::MacAsOne ? "; 1 MAC = 1 FLOP"
                                                            : "; 1 MAC = 2 FLOPs";
  return rep;
}

std::optional<Cost> closed_form(const BlockSpec& raw, const ComplexityQuery& q) {
  const BlockSpec spec = effective_spec(raw, q);
  const std::uint64_t C = u64(effective_channels(spec, q));
  const std::uint64_t B = u64(q.B);
  const std::uint64_t bytes = u64(q.bytes_per_element);
  const std::uint64_t mac = q.flop_convention == FlopConvention::MacAsTwo ? 2 : 1;
  validate(spec, static_cast<std::size_t>(C));
  Cost c;
  switch (spec.kind) {
    case BlockKind::AB:
      c = {C, mac * C * B, bytes * C * (1 + B)};
      break;
    case BlockKind::AB_PLUS:
      c = {C * C, mac * C * C * B, bytes * C * (C + B)};
      break;
    case BlockKind::SE: {
      const std::uint64_t r = u64(spec.reduction);
      c = {2 * C * C / r, mac * 2 * C * C * B / r, 2 * bytes * C * (C + B) / r};
      break;
    }
    case BlockKind::GROUPED: {
      const std::uint64_t G = u64(spec.groups);
      c = {C * C / G, mac * C * C * B / G, bytes * C * (C / G + B)};
      break;
    }
    default:
      return std::nullopt;
  }
  return c;
}

BlockExtra block_extra(const BlockSpec& raw, const ComplexityQuery& q) {
  const BlockSpec spec = effective_spec(raw, q);
  const std::size_t C = effective_channels(spec, q);
  BlockExtra out;
  if (q.mode == Convention::Paper) {
    if (auto cf = closed_form(spec, q)) {
      out.cost = *cf;
      out.from_closed_form = true;
      return out;
    }
    out.notice = std::string("no closed form for ") + std::string(kind_name(spec.kind)) +
                 "; counted by graph walk";
  }
  out.cost = walk(describe_block(spec, C, q.H, q.W, "block"), q).total;
  return out;
}

ComplexityReport model_complexity(const ModelSpec& model, const ComplexityQuery& q) {
  ComplexityReport rep = walk(describe_model(model), q);
  rep.note = model.name + (model.block ? " + " + describe(*model.block) : std::string()) +
             ", batch " + std::to_string(q.B) + "; " + rep.note;
  return rep;
}

CrossCheck crosscheck(const BlockSpec& raw, const ComplexityQuery& query) {
  ComplexityQuery q = query;
  q.mode = Convention::Paper;
  const BlockSpec spec = effective_spec(raw, q);
  const std::size_t C = effective_channels(spec, q);
  CrossCheck cc;
  auto cf = closed_form(spec, q);
  if (!cf) {
    throw BlockSpecError(std::string("crosscheck: ") + std::string(kind_name(spec.kind)) +
                         " has no closed form");
  }
  cc.closed = *cf;
  cc.walked = walk(describe_block(spec, C, q.H, q.W, "block"), q).total;
  cc.agree = cc.closed == cc.walked;
  if (!cc.agree) {
    std::ostringstream os;
    auto term = [&](const char* name, std::uint64_t a, std::uint64_t b) {
      if (a != b) os << name << ": closed=" << a << " walked=" << b << "; ";
    };
    term("params", cc.closed.params, cc.walked.params);
    term("flops", cc.closed.flops, cc.walked.flops);
    term("rtm", cc.closed.rtm, cc.walked.rtm);
    cc.diff = os.str();
  }
  return cc;
}

std::vector<BlockComparisonRow> block_comparison(const ComplexityQuery& q) {
  std::vector<BlockComparisonRow> rows;
  BlockSpec ab, se, plus;
  ab.kind = BlockKind::AB;
  se.kind = BlockKind::SE;
  plus.kind = BlockKind::AB_PLUS;
  rows.push_back({"AB", *closed_form(ab, q), false});
  rows.push_back({"SE", *closed_form(se, q), false});
  rows.push_back({"CBAM", *closed_form(se, q), true});
  rows.push_back({"AB_PLUS", *closed_form(plus, q), false});
  return rows;
}

std::string to_csv(const ComplexityReport& report) {
  std::ostringstream os;
  os << "layer,params,flops,rtm_bytes\n";
  for (const auto& r : report.rows) {
    os << r.layer << ',' << r.cost.params << ',' << r.cost.flops << ',' << r.cost.rtm << '\n';
  }
  os << "TOTAL," << report.total.params << ',' << report.total.flops << ',' << report.total.rtm
     << '\n';
  return os.str();
}

std::string to_text(const ComplexityReport& report, std::size_t max_rows) {
  std::ostringstream os;
  char buf[256];
  os << "# " << convention_name(report.mode) << ": " << report.note << '\n';
  std::snprintf(buf, sizeof buf, "%-40s %14s %16s %16s\n", "layer", "params", "flops",
                "rtm_bytes");
  os << buf;
  const std::size_t n = std::min(max_rows, report.rows.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = report.rows[i];
    std::snprintf(buf, sizeof buf, "%-40s %14llu %16llu %16llu\n", r.layer.c_str(),
                  static_cast<unsigned long long>(r.cost.params),
                  static_cast<unsigned long long>(r.cost.flops),
                  static_cast<unsigned long long>(r.cost.rtm));
    os << buf;
  }
  if (n < report.rows.size()) os << "... (" << report.rows.size() - n << " more layers)\n";
  std::snprintf(buf, sizeof buf, "%-40s %14llu %16llu %16llu\n", "TOTAL",
                static_cast<unsigned long long>(report.total.params),
                static_cast<unsigned long long>(report.total.flops),
                static_cast<unsigned long long>(report.total.rtm));
  os << buf;
  std::snprintf(buf, sizeof buf, "%-40s %13.3fM %15.3fM %15.3fMB\n", "",
                static_cast<double>(report.total.params) / 1e6,
                static_cast<double>(report.total.flops) / 1e6,
                static_cast<double>(report.total.rtm) / 1e6);
  os << buf;
  return os.str();
}

}  // namespace recalib
