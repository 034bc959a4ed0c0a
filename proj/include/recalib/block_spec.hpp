#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace recalib {

/// Every recalibration design. The string forms returned by kind_name() are
/// the stable identifiers used in configs, checkpoints and on the command line.
enum class BlockKind {
  AB,                // GAP -> 1x1 depthwise conv -> BN -> sigmoid -> channel scale
  AB_PLUS,           // GAP -> full 1x1 conv -> BN -> sigmoid -> channel scale
  SE,                // GAP -> FC(C/r) -> ReLU -> FC(C) -> sigmoid -> channel scale
  ONLY_GAP,          // (E)
  GAP_BN,            // (F)
  GLOBAL_DW_WAVG,    // (G) learned per-channel spatial weighting
  GLOBAL_WAVG,       // (H) learned full spatial x channel weighting
  FINE_CONV,         // (I)/(K) k x k conv -> sigmoid -> Hadamard
  FINE_DWCONV,       // (J)/(L) k x k depthwise conv -> sigmoid -> Hadamard
  COMBINED_GAP,      // (M)
  COMBINED_AB,       // (N)
  COMBINED_AB_PLUS,  // (O)
  GROUPED,           // AB with a grouped 1x1 conv
};

inline constexpr BlockKind kAllBlockKinds[] = {
    BlockKind::AB,          BlockKind::AB_PLUS,       BlockKind::SE,
    BlockKind::ONLY_GAP,    BlockKind::GAP_BN,        BlockKind::GLOBAL_DW_WAVG,
    BlockKind::GLOBAL_WAVG, BlockKind::FINE_CONV,     BlockKind::FINE_DWCONV,
    BlockKind::COMBINED_GAP, BlockKind::COMBINED_AB,  BlockKind::COMBINED_AB_PLUS,
    BlockKind::GROUPED,
};

class BlockSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BlockSpec {
  BlockKind kind = BlockKind::AB;
  std::size_t channels = 0;     // 0: take the width of the insertion point
  std::size_t reduction = 16;   // SE only
  std::size_t groups = 1;       // GROUPED only
  std::size_t kernel = 3;       // fine-grained and combined kinds
  std::optional<bool> use_bn;   // unset: kind default (on for the AB family)
  bool se_hidden_relu = true;
  bool se_bias = true;
  double dw_init = 1.0;         // initial value of per-channel 1x1 weights

  bool bn_enabled() const;
  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

std::string_view kind_name(BlockKind kind);
std::optional<BlockKind> parse_kind(std::string_view name);

/// Accepts a kind name (any case) or a single design letter a..o.
/// Returns nullopt for "baseline" / "none".
std::optional<BlockSpec> parse_design(std::string_view token);

/// Design letter for a spec, or '?' when it is not one of the lettered designs.
char design_letter(const BlockSpec& spec);

bool is_channelwise(BlockKind kind);   // p has shape [N,C]
bool is_fine_grained(BlockKind kind);  // p has shape [N,C,H,W]
bool binds_spatial_size(BlockKind kind);
bool default_use_bn(BlockKind kind);

/// Throws BlockSpecError when `spec` cannot be instantiated at width `channels`.
void validate(const BlockSpec& spec, std::size_t channels);

std::string describe(const BlockSpec& spec);

std::vector<std::string> all_kind_names();

}  // namespace recalib
