#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recalib/block_spec.hpp"
#include "recalib/layer_graph.hpp"
#include "recalib/model_spec.hpp"

namespace recalib {

/// Paper convention: only conv/FC multiply weights and their MACs; a
/// weighted layer on a 1x1 descriptor holds min(in, out) activations per
/// sample, a spatial one holds its full output map.
/// Exact convention: every trainable tensor (BN affine, biases), BN running
/// buffers in memory, every layer's output, elementwise arithmetic.
enum class Convention { Paper, Exact };

/// MacAsOne counts a multiply-accumulate as one FLOP.
enum class FlopConvention { MacAsOne, MacAsTwo };

struct ComplexityQuery {
  std::size_t C = 0;  // block width; 0 takes it from the BlockSpec
  std::size_t B = 1;
  std::size_t r = 0;  // 0: use the BlockSpec's reduction
  std::size_t G = 0;  // 0: use the BlockSpec's groups
  std::size_t H = 1, W = 1;
  Convention mode = Convention::Paper;
  std::size_t bytes_per_element = 4;
  FlopConvention flop_convention = FlopConvention::MacAsOne;
};

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t rtm = 0;  // bytes

  Cost& operator+=(const Cost& o) {
    params += o.params;
    flops += o.flops;
    rtm += o.rtm;
    return *this;
  }
  friend bool operator==(const Cost&, const Cost&) = default;
};

struct ReportRow {
  std::string layer;
  Cost cost;
};

struct ComplexityReport {
  std::vector<ReportRow> rows;
  Cost total;
  Convention mode = Convention::Paper;
  std::string note;
};

struct BlockExtra {
  Cost cost;
  bool from_closed_form = false;
  std::string notice;  // set when the closed form is unavailable
};

/// Cost of one layer under the query's convention.
Cost node_cost(const LayerNode& node, const ComplexityQuery& q);

/// Sums node costs; one row per layer.
ComplexityReport walk(const LayerGraph& graph, const ComplexityQuery& q);

/// Closed forms in paper convention for AB, AB_PLUS, SE and GROUPED.
std::optional<Cost> closed_form(const BlockSpec& spec, const ComplexityQuery& q);

/// Extra parameters / FLOPS / RTM one block adds. Paper mode prefers the
/// closed form; everything else is graph-walked.
BlockExtra block_extra(const BlockSpec& spec, const ComplexityQuery& q);

/// Whole-network report. Only q.B, q.mode, bytes and flop convention are used.
ComplexityReport model_complexity(const ModelSpec& model, const ComplexityQuery& q);

struct CrossCheck {
  bool agree = false;
  Cost closed;
  Cost walked;
  std::string diff;  // empty on agreement
};

/// Closed form vs. graph walk in paper convention; exact integer comparison.
CrossCheck crosscheck(const BlockSpec& spec, const ComplexityQuery& q);

/// Per-block comparison in the layout of the analysis table: AB, SE,
/// AB_PLUS closed forms plus a CBAM row that is only a strict lower bound.
struct BlockComparisonRow {
  std::string model;
  Cost cost;
  bool lower_bound = false;
};
std::vector<BlockComparisonRow> block_comparison(const ComplexityQuery& q);

/// CSV with the fixed column order layer,params,flops,rtm_bytes and a final TOTAL row.
std::string to_csv(const ComplexityReport& report);

/// Human-readable table; `max_rows` limits the per-layer listing (0 = totals only).
std::string to_text(const ComplexityReport& report, std::size_t max_rows = 0);

const char* convention_name(Convention c);

}  // namespace recalib
