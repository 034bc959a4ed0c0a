#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "recalib/blocks.hpp"

namespace recalib::testing {

struct EquivCase {
  std::string name;
  std::function<double(std::mt19937_64&)> trial;  // max relative deviation of outputs
};

inline BatchNorm<double> random_bn(std::size_t C, std::mt19937_64& rng) {
  BatchNorm<double> bn("bn", C, true);
  bn.gamma().value() = random_tensor({C}, rng, 0.5, 1.5);
  bn.beta().value() = random_tensor({C}, rng, -0.5, 0.5);
  bn.stats().running_mean = random_tensor({C}, rng, -0.5, 0.5);
  bn.stats().running_var = random_tensor({C}, rng, 0.5, 2.0);
  return bn;
}

inline Var<double> constant(Tensor<double> t) { return Var<double>(std::move(t), false); }

inline std::vector<EquivCase> equivalence_suite() {
  std::vector<EquivCase> cases;

  cases.push_back({"grouped_G_eq_C_vs_ab", [](std::mt19937_64& rng) {
                     const std::size_t C = rand_dim(rng, 1, 8), N = rand_dim(rng, 2, 5);
                     const bool training = rand_dim(rng, 0, 1) == 1;
                     auto x = constant(random_tensor({N, C, rand_dim(rng, 1, 6), rand_dim(rng, 1, 6)}, rng));
                     auto w = constant(random_tensor({C, 1, 1, 1}, rng));
                     auto bn1 = random_bn(C, rng);
                     auto bn2 = bn1;
                     const auto a = grouped_forward(x, w, C, &bn1, training).out.value();
                     const auto b = ab_forward(x, w, &bn2, training).out.value();
                     return oracle::max_rel_dev(a, b);
                   }});
  cases.push_back({"grouped_G_eq_1_vs_ab_plus", [](std::mt19937_64& rng) {
                     const std::size_t C = rand_dim(rng, 1, 8), N = rand_dim(rng, 2, 5);
                     const bool training = rand_dim(rng, 0, 1) == 1;
                     auto x = constant(random_tensor({N, C, rand_dim(rng, 1, 6), rand_dim(rng, 1, 6)}, rng));
                     auto w = constant(random_tensor({C, C, 1, 1}, rng));
                     auto bn1 = random_bn(C, rng);
                     auto bn2 = bn1;
                     const auto a = grouped_forward(x, w, 1, &bn1, training).out.value();
                     const auto b = ab_plus_forward(x, w, &bn2, training).out.value();
                     return oracle::max_rel_dev(a, b);
                   }});
  cases.push_back({"ab_plus_diagonal_vs_ab", [](std::mt19937_64& rng) {
                     const std::size_t C = rand_dim(rng, 1, 8), N = rand_dim(rng, 2, 5);
                     const bool training = rand_dim(rng, 0, 1) == 1;
                     auto x = constant(random_tensor({N, C, rand_dim(rng, 1, 6), rand_dim(rng, 1, 6)}, rng));
                     const auto d = random_tensor({C, 1, 1, 1}, rng);
                     Tensor<double> full({C, C, 1, 1}, 0.0);
                     for (std::size_t c = 0; c < C; ++c) full.at(c, c, 0, 0) = d[c];
                     auto bn1 = random_bn(C, rng);
                     auto bn2 = bn1;
                     const auto a = ab_plus_forward(x, constant(full), &bn1, training).out.value();
                     const auto b = ab_forward(x, constant(d), &bn2, training).out.value();
                     return oracle::max_rel_dev(a, b);
                   }});
  cases.push_back({"design_g_uniform_vs_design_e", [](std::mt19937_64& rng) {
                     const std::size_t C = rand_dim(rng, 1, 8), N = rand_dim(rng, 1, 5);
                     const std::size_t H = rand_dim(rng, 1, 8), W = rand_dim(rng, 1, 8);
                     BlockSpec g;
                     g.kind = BlockKind::GLOBAL_DW_WAVG;
                     BlockSpec e;
                     e.kind = BlockKind::ONLY_GAP;
                     RecalibBlock<double> bg(g, C, H, W, "g", rng);
                     RecalibBlock<double> be(e, C, H, W, "e", rng);
                     bg.find_param("wavg.weight")->value().fill(1.0 / static_cast<double>(H * W));
                     auto x = constant(random_tensor({N, C, H, W}, rng, -2.0, 2.0));
                     return oracle::max_rel_dev(bg.forward(x, true).out.value(),
                                                be.forward(x, true).out.value());
                   }});
  return cases;
}

}  // namespace recalib::testing
