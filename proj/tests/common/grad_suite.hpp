#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "recalib/blocks.hpp"

namespace recalib::testing {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::mt19937_64&)> trial;
};

inline Var<double> leaf(Tensor<double> t) { return Var<double>(std::move(t), true); }

inline void randomize_params(ParamRegistry<double>& reg, std::mt19937_64& rng) {
  for (auto* p : reg.params) {
    const bool gamma = p->role() == ParamRole::BnGamma;
    std::uniform_real_distribution<double> d(gamma ? 0.5 : -0.8, gamma ? 1.5 : 0.8);
    for (auto& v : p->value().vec()) v = d(rng);
  }
}

/// Gradient check of one block kind w.r.t. its input and every parameter.
inline GradCheckResult block_trial(BlockSpec spec, bool training, std::mt19937_64& rng) {
  std::size_t C = rand_dim(rng, 2, 8);
  if (spec.kind == BlockKind::SE) {
    std::vector<std::size_t> rs;
    for (std::size_t r = 1; r <= C; ++r)
      if (C % r == 0) rs.push_back(r);
    spec.reduction = rs[rand_dim(rng, 0, rs.size() - 1)];
  }
  if (spec.kind == BlockKind::GROUPED) {
    std::vector<std::size_t> gs;
    for (std::size_t g = 1; g <= C; ++g)
      if (C % g == 0) gs.push_back(g);
    spec.groups = gs[rand_dim(rng, 0, gs.size() - 1)];
  }
  const std::size_t N = rand_dim(rng, 2, 4);
  const std::size_t H = rand_dim(rng, 1, 5), W = rand_dim(rng, 1, 5);
  RecalibBlock<double> block(spec, C, H, W, "b", rng);
  ParamRegistry<double> reg;
  block.collect(reg);
  randomize_params(reg, rng);
  if (!training && block.bn()) {
    // Non-trivial running statistics for the inference path.
    auto& st = block.bn()->stats();
    st.running_mean = random_tensor(st.running_mean.shape(), rng, -0.5, 0.5);
    st.running_var = random_tensor(st.running_var.shape(), rng, 0.5, 2.0);
  }
  Var<double> x = leaf(spec.kind == BlockKind::SE && spec.se_hidden_relu
                           ? away_from_zero({N, C, H, W}, rng)
                           : random_tensor({N, C, H, W}, rng));
  std::vector<Var<double>> leaves{x};
  for (auto* p : reg.params) leaves.push_back(p->var());
  return gradcheck(leaves, [&] { return block.forward(x, training).out; }, rng);
}

inline std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](std::mt19937_64& rng) {
                     const std::size_t groups = rand_dim(rng, 1, 3);
                     const std::size_t cin = groups * rand_dim(rng, 1, 2);
                     const std::size_t cout = groups * rand_dim(rng, 1, 2);
                     const std::size_t k = rand_dim(rng, 1, 3), pad = rand_dim(rng, 0, 1);
                     const std::size_t stride = rand_dim(rng, 1, 2);
                     const std::size_t H = rand_dim(rng, k, 7), W = rand_dim(rng, k, 7);
                     auto x = leaf(random_tensor({rand_dim(rng, 1, 3), cin, H, W}, rng));
                     auto w = leaf(random_tensor({cout, cin / groups, k, k}, rng));
                     return gradcheck({x, w}, [&] {
                       return conv2d(x, w, Conv2dOptions{stride, pad, groups});
                     }, rng);
                   }});
  cases.push_back({"depthwise_conv2d", [](std::mt19937_64& rng) {
                     const std::size_t C = rand_dim(rng, 1, 6), k = rand_dim(rng, 1, 3);
                     const std::size_t pad = rand_dim(rng, 0, 1), stride = rand_dim(rng, 1, 2);
                     auto x = leaf(random_tensor(
                         {rand_dim(rng, 1, 3), C, rand_dim(rng, k, 7), rand_dim(rng, k, 7)}, rng));
                     auto w = leaf(random_tensor({C, 1, k, k}, rng));
                     return gradcheck({x, w}, [&] { return depthwise_conv2d(x, w, pad, stride); },
                                      rng);
                   }});
  cases.push_back({"global_avg_pool", [](std::mt19937_64& rng) {
                     auto x = leaf(random_tensor({rand_dim(rng, 1, 4), rand_dim(rng, 1, 8),
                                                  rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)},
                                                 rng));
                     return gradcheck({x}, [&] { return global_avg_pool(x); }, rng);
                   }});
  for (bool training : {true, false}) {
    for (bool spatial : {false, true}) {
      cases.push_back(
          {std::string("batch_norm_") + (training ? "train" : "eval") + (spatial ? "_4d" : "_2d"),
           [training, spatial](std::mt19937_64& rng) {
             const std::size_t N = rand_dim(rng, 2, 6), F = rand_dim(rng, 1, 6);
             Shape s = spatial ? Shape{N, F, rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)} : Shape{N, F};
             auto x = leaf(random_tensor(s, rng));
             auto g = leaf(random_tensor({F}, rng, 0.5, 1.5));
             auto b = leaf(random_tensor({F}, rng));
             auto stats = BatchNormStats<double>::init(F);
             stats.running_mean = random_tensor({F}, rng, -0.5, 0.5);
             stats.running_var = random_tensor({F}, rng, 0.5, 2.0);
             return gradcheck({x, g, b}, [&] {
               auto st = stats;
               return batch_norm(x, g, b, st, training);
             }, rng);
           }});
    }
  }
  cases.push_back({"sigmoid", [](std::mt19937_64& rng) {
                     auto x = leaf(random_tensor({rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)}, rng,
                                                 -4.0, 4.0));
                     return gradcheck({x}, [&] { return sigmoid(x); }, rng);
                   }});
  cases.push_back({"relu", [](std::mt19937_64& rng) {
                     auto x = leaf(away_from_zero({rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)}, rng));
                     return gradcheck({x}, [&] { return relu(x); }, rng);
                   }});
  cases.push_back({"channel_scale", [](std::mt19937_64& rng) {
                     const std::size_t N = rand_dim(rng, 1, 4), C = rand_dim(rng, 1, 6);
                     auto x = leaf(random_tensor({N, C, rand_dim(rng, 1, 5), rand_dim(rng, 1, 5)},
                                                 rng));
                     auto p = leaf(random_tensor({N, C}, rng));
                     return gradcheck({x, p}, [&] { return channel_scale(x, p); }, rng);
                   }});
  cases.push_back({"elementwise_scale", [](std::mt19937_64& rng) {
                     Shape s{rand_dim(rng, 1, 3), rand_dim(rng, 1, 4), rand_dim(rng, 1, 5),
                             rand_dim(rng, 1, 5)};
                     auto x = leaf(random_tensor(s, rng));
                     auto p = leaf(random_tensor(s, rng));
                     return gradcheck({x, p}, [&] { return elementwise_scale(x, p); }, rng);
                   }});
  for (bool bias : {true, false}) {
    cases.push_back({bias ? "linear_bias" : "linear_nobias", [bias](std::mt19937_64& rng) {
                       const std::size_t N = rand_dim(rng, 1, 5), in = rand_dim(rng, 1, 8),
                                         out = rand_dim(rng, 1, 8);
                       auto x = leaf(random_tensor({N, in}, rng));
                       auto w = leaf(random_tensor({out, in}, rng));
                       std::vector<Var<double>> leaves{x, w};
                       Var<double> b;
                       if (bias) {
                         b = leaf(random_tensor({out}, rng));
                         leaves.push_back(b);
                       }
                       return gradcheck(leaves, [&] { return linear(x, w, b); }, rng);
                     }});
  }
  cases.push_back({"add", [](std::mt19937_64& rng) {
                     Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 4), rand_dim(rng, 1, 4),
                             rand_dim(rng, 1, 4)};
                     auto a = leaf(random_tensor(s, rng));
                     auto b = leaf(random_tensor(s, rng));
                     return gradcheck({a, b}, [&] { return add(a, b); }, rng);
                   }});
  cases.push_back({"add_shared_input", [](std::mt19937_64& rng) {
                     auto a = leaf(random_tensor({rand_dim(rng, 1, 4), rand_dim(rng, 1, 6)}, rng));
                     return gradcheck({a}, [&] { return add(a, sigmoid(a)); }, rng);
                   }});
  cases.push_back({"max_pool2d", [](std::mt19937_64& rng) {
                     const std::size_t k = rand_dim(rng, 1, 3), s = rand_dim(rng, 1, 2);
                     const std::size_t pad = rand_dim(rng, 0, k / 2);
                     auto x = leaf(distinct_values(
                         {rand_dim(rng, 1, 2), rand_dim(rng, 1, 3), rand_dim(rng, k, 7),
                          rand_dim(rng, k, 7)},
                         rng));
                     return gradcheck({x}, [&] { return max_pool2d(x, k, s, pad); }, rng);
                   }});
  cases.push_back({"avg_pool2d", [](std::mt19937_64& rng) {
                     const std::size_t k = rand_dim(rng, 1, 3), s = rand_dim(rng, 1, 2);
                     auto x = leaf(random_tensor({rand_dim(rng, 1, 2), rand_dim(rng, 1, 3),
                                                  rand_dim(rng, k, 7), rand_dim(rng, k, 7)},
                                                 rng));
                     return gradcheck({x}, [&] { return avg_pool2d(x, k, s); }, rng);
                   }});
  cases.push_back({"softmax_cross_entropy", [](std::mt19937_64& rng) {
                     const std::size_t N = rand_dim(rng, 1, 6), K = rand_dim(rng, 2, 8);
                     auto x = leaf(random_tensor({N, K}, rng, -3.0, 3.0));
                     std::vector<std::int32_t> labels(N);
                     for (auto& l : labels) l = static_cast<std::int32_t>(rand_dim(rng, 0, K - 1));
                     return gradcheck({x}, [&] {
                       return softmax_cross_entropy(x, std::span<const std::int32_t>(labels));
                     }, rng);
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& rng) {
                     const std::size_t a = rand_dim(rng, 1, 4), b = rand_dim(rng, 1, 4),
                                       c = rand_dim(rng, 1, 4);
                     auto x = leaf(random_tensor({a, b, c}, rng));
                     return gradcheck({x}, [&] { return sigmoid(reshape(x, Shape{a * b, c})); },
                                      rng);
                   }});
  cases.push_back({"sum", [](std::mt19937_64& rng) {
                     auto x = leaf(random_tensor({rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)}, rng));
                     return gradcheck({x}, [&] { return sum(sigmoid(x)); }, rng);
                   }});
  cases.push_back({"weighted_sum", [](std::mt19937_64& rng) {
                     Shape s{rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)};
                     auto x = leaf(random_tensor(s, rng));
                     const auto c = random_tensor(s, rng);
                     return gradcheck({x}, [&] { return weighted_sum(sigmoid(x), c); }, rng);
                   }});
  cases.push_back({"mul_constant", [](std::mt19937_64& rng) {
                     Shape s{rand_dim(rng, 1, 8), rand_dim(rng, 1, 8)};
                     auto x = leaf(random_tensor(s, rng));
                     const auto c = random_tensor(s, rng);
                     return gradcheck({x}, [&] { return mul_constant(x, c); }, rng);
                   }});

  struct KindVariant {
    const char* label;
    BlockKind kind;
    std::optional<bool> use_bn;
    std::size_t kernel;
    bool training;
  };
  const KindVariant variants[] = {
      {"AB", BlockKind::AB, std::nullopt, 3, true},
      {"AB_eval", BlockKind::AB, std::nullopt, 3, false},
      {"AB_nobn", BlockKind::AB, false, 3, true},
      {"AB_PLUS", BlockKind::AB_PLUS, std::nullopt, 3, true},
      {"AB_PLUS_nobn", BlockKind::AB_PLUS, false, 3, true},
      {"SE", BlockKind::SE, std::nullopt, 3, true},
      {"ONLY_GAP", BlockKind::ONLY_GAP, std::nullopt, 3, true},
      {"GAP_BN", BlockKind::GAP_BN, std::nullopt, 3, true},
      {"GAP_BN_eval", BlockKind::GAP_BN, std::nullopt, 3, false},
      {"GLOBAL_DW_WAVG", BlockKind::GLOBAL_DW_WAVG, std::nullopt, 3, true},
      {"GLOBAL_WAVG", BlockKind::GLOBAL_WAVG, std::nullopt, 3, true},
      {"FINE_CONV", BlockKind::FINE_CONV, std::nullopt, 3, true},
      {"FINE_CONV_bn", BlockKind::FINE_CONV, true, 3, true},
      {"FINE_DWCONV", BlockKind::FINE_DWCONV, std::nullopt, 3, true},
      {"FINE_DWCONV_k5", BlockKind::FINE_DWCONV, std::nullopt, 5, true},
      {"COMBINED_GAP", BlockKind::COMBINED_GAP, std::nullopt, 3, true},
      {"COMBINED_AB", BlockKind::COMBINED_AB, std::nullopt, 3, true},
      {"COMBINED_AB_PLUS", BlockKind::COMBINED_AB_PLUS, std::nullopt, 3, true},
      {"GROUPED", BlockKind::GROUPED, std::nullopt, 3, true},
  };
  for (const auto& v : variants) {
    cases.push_back({std::string("block_") + v.label, [v](std::mt19937_64& rng) {
                       BlockSpec spec;
                       spec.kind = v.kind;
                       spec.use_bn = v.use_bn;
                       spec.kernel = v.kernel;
                       return block_trial(spec, v.training, rng);
                     }});
  }
  return cases;
}

}  // namespace recalib::testing
