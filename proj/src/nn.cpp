#include "recalib/nn.hpp"

namespace recalib {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::ConvWeight: return "conv_weight";
    case ParamRole::BnGamma: return "bn_gamma";
    case ParamRole::BnBeta: return "bn_beta";
    case ParamRole::FcWeight: return "fc_weight";
    case ParamRole::FcBias: return "fc_bias";
  }
  return "?";
}

}  // namespace recalib
