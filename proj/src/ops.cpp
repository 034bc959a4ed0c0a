#include "recalib/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace recalib {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Message is only built on failure.
#define require(ok, ...)                        \
  do {                                          \
    if (!(ok)) throw ShapeError((__VA_ARGS__)); \
  } while (0)

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  require(s.size() == rank, std::string(op) + ": " + what + " must have rank " +
                                std::to_string(rank) + ", got shape " + shape_str(s));
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, groups, stride, pad, hout, wout;
  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t k_rows() const { return cin_g() * kh * kw; }
  std::size_t cols() const { return hout * wout; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& wt, const Conv2dOptions& opt,
                           const char* op) {
  require_rank(in, 4, op, "input");
  require_rank(wt, 4, op, "weight");
  require(opt.groups >= 1, std::string(op) + ": groups must be positive");
  require(opt.stride >= 1, std::string(op) + ": stride must be positive");
  ConvGeometry g{};
  g.n = in[0];
  g.cin = in[1];
  g.h = in[2];
  g.w = in[3];
  g.cout = wt[0];
  g.kh = wt[2];
  g.kw = wt[3];
  g.groups = opt.groups;
  g.stride = opt.stride;
  g.pad = opt.padding;
  require(g.cin % g.groups == 0, std::string(op) + ": input channels (dim 1) = " +
                                     std::to_string(g.cin) + " not divisible by groups " +
                                     std::to_string(g.groups));
  require(g.cout % g.groups == 0, std::string(op) + ": output channels (weight dim 0) = " +
                                      std::to_string(g.cout) + " not divisible by groups " +
                                      std::to_string(g.groups));
  require(wt[1] == g.cin / g.groups,
          std::string(op) + ": weight dim 1 is " + std::to_string(wt[1]) + ", expected Cin/groups = " +
              std::to_string(g.cin / g.groups));
  require(g.h + 2 * g.pad >= g.kh,
          std::string(op) + ": kernel height " + std::to_string(g.kh) +
              " exceeds padded input height (dim 2) " + std::to_string(g.h + 2 * g.pad));
  require(g.w + 2 * g.pad >= g.kw,
          std::string(op) + ": kernel width " + std::to_string(g.kw) +
              " exceeds padded input width (dim 3) " + std::to_string(g.w + 2 * g.pad));
  g.hout = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// Columns ow in [lo, hi) of kernel offset kj read inside the input row.
inline void valid_cols(const ConvGeometry& g, std::size_t kj, std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(kj);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.w);
  // ow*s + k - pad >= 0  and  ow*s + k - pad < w
  std::ptrdiff_t a = pad - k <= 0 ? 0 : (pad - k + s - 1) / s;
  std::ptrdiff_t b = w + pad - k <= 0 ? 0 : (w + pad - k + s - 1) / s;
  a = std::min<std::ptrdiff_t>(a, static_cast<std::ptrdiff_t>(g.wout));
  b = std::clamp<std::ptrdiff_t>(b, a, static_cast<std::ptrdiff_t>(g.wout));
  lo = static_cast<std::size_t>(a);
  hi = static_cast<std::size_t>(b);
}

// Unfolds cin_g channels starting at `src` into a [cin_g*kh*kw, hout*wout] matrix.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* dst) {
  const std::size_t P = g.cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const T* plane = src + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = dst + ((c * g.kh + ki) * g.kw + kj) * P;
        std::size_t lo, hi;
        valid_cols(g, kj, lo, hi);
        for (std::size_t oh = 0; oh < g.hout; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oh * g.wout;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.wout, T(0));
            continue;
          }
          std::fill(out, out + lo, T(0));
          std::fill(out + hi, out + g.wout, T(0));
          const T* in_row = plane + static_cast<std::size_t>(ih) * g.w + kj - g.pad;
          if (g.stride == 1) {
            std::copy(in_row + lo, in_row + hi, out + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) out[ow] = in_row[ow * g.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dst) {
  const std::size_t P = g.cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    T* plane = dst + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * P;
        std::size_t lo, hi;
        valid_cols(g, kj, lo, hi);
        for (std::size_t oh = 0; oh < g.hout; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* out_row = plane + static_cast<std::size_t>(ih) * g.w + kj - g.pad;
          const T* in = row + oh * g.wout;
          for (std::size_t ow = lo; ow < hi; ++ow) out_row[ow * g.stride] += in[ow];
        }
      }
    }
  }
}

template <typename T>
bool needs_grad(const NodePtr<T>& n) {
  return n->requires_grad;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), opt, "conv2d");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  Tensor<T> out({g.n, g.cout, g.hout, g.wout});

  const std::size_t K = g.k_rows(), P = g.cols(), M = g.cout_g();
  std::vector<T> cols(g.pointwise() ? 0 : K * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* src = x.data() + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
      const T* col_ptr = src;
      if (!g.pointwise()) {
        im2col(src, g, cols.data());
        col_ptr = cols.data();
      }
      CMapMat<T> wm(w.data() + grp * M * K, M, K);
      CMapMat<T> cm(col_ptr, K, P);
      MapMat<T> om(out.data() + (n * g.cout + grp * M) * P, M, P);
      om.noalias() = wm * cm;
    }
  }

  return make_result<T>(
      std::move(out), {input.node(), weight.node()}, "conv2d", [g](Node<T>& self) {
        const auto& in_node = self.inputs[0];
        const auto& w_node = self.inputs[1];
        const Tensor<T>& x = in_node->value;
        const Tensor<T>& w = w_node->value;
        const Tensor<T>& gy = self.grad;
        const std::size_t K = g.k_rows(), P = g.cols(), M = g.cout_g();
        const bool want_x = needs_grad(in_node), want_w = needs_grad(w_node);
        std::vector<T> cols(K * P);
        T* dx = want_x ? in_node->grad_buffer().data() : nullptr;
        T* dw = want_w ? w_node->grad_buffer().data() : nullptr;
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t grp = 0; grp < g.groups; ++grp) {
            CMapMat<T> gm(gy.data() + (n * g.cout + grp * M) * P, M, P);
            CMapMat<T> wm(w.data() + grp * M * K, M, K);
            if (want_w) {
              const T* src = x.data() + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
              const T* col_ptr = src;
              if (!g.pointwise()) {
                im2col(src, g, cols.data());
                col_ptr = cols.data();
              }
              CMapMat<T> cm(col_ptr, K, P);
              MapMat<T> dwm(dw + grp * M * K, M, K);
              dwm.noalias() += gm * cm.transpose();
            }
            if (want_x) {
              T* dst = dx + (n * g.cin + grp * g.cin_g()) * g.h * g.w;
              if (g.pointwise()) {
                MapMat<T> dxm(dst, K, P);
                dxm.noalias() += wm.transpose() * gm;
              } else {
                MapMat<T> dcm(cols.data(), K, P);
                dcm.noalias() = wm.transpose() * gm;
                col2im_add(cols.data(), g, dst);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& weight, std::size_t padding,
                        std::size_t stride) {
  require_rank(input.shape(), 4, "depthwise_conv2d", "input");
  require_rank(weight.shape(), 4, "depthwise_conv2d", "weight");
  const std::size_t C = input.shape()[1];
  require(weight.shape()[0] == C, "depthwise_conv2d: weight dim 0 is " +
                                      std::to_string(weight.shape()[0]) +
                                      " but input has " + std::to_string(C) + " channels");
  require(weight.shape()[1] == 1,
          "depthwise_conv2d: weight dim 1 must be 1, got " + std::to_string(weight.shape()[1]));
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(),
                                       Conv2dOptions{stride, padding, C}, "depthwise_conv2d");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  Tensor<T> out({g.n, C, g.hout, g.wout});

  const auto ip = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = x.data() + (n * C + c) * g.h * g.w;
      const T* kern = w.data() + c * g.kh * g.kw;
      T* o = out.data() + (n * C + c) * g.hout * g.wout;
      for (std::size_t oh = 0; oh < g.hout; ++oh) {
        for (std::size_t ow = 0; ow < g.wout; ++ow) {
          T acc = T(0);
          for (std::size_t ki = 0; ki < g.kh; ++ki) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - ip;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - ip;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              acc += kern[ki * g.kw + kj] *
                     plane[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)];
            }
          }
          o[oh * g.wout + ow] = acc;
        }
      }
    }
  }

  return make_result<T>(
      std::move(out), {input.node(), weight.node()}, "depthwise_conv2d", [g](Node<T>& self) {
        const auto& in_node = self.inputs[0];
        const auto& w_node = self.inputs[1];
        const Tensor<T>& x = in_node->value;
        const Tensor<T>& w = w_node->value;
        const Tensor<T>& gy = self.grad;
        const std::size_t C = g.cin;
        const bool want_x = needs_grad(in_node), want_w = needs_grad(w_node);
        T* dx = want_x ? in_node->grad_buffer().data() : nullptr;
        T* dw = want_w ? w_node->grad_buffer().data() : nullptr;
        const auto ip = static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t plane_off = (n * C + c) * g.h * g.w;
            const T* gplane = gy.data() + (n * C + c) * g.hout * g.wout;
            const T* kern = w.data() + c * g.kh * g.kw;
            for (std::size_t oh = 0; oh < g.hout; ++oh) {
              for (std::size_t ow = 0; ow < g.wout; ++ow) {
                const T go = gplane[oh * g.wout + ow];
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - ip;
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
                  for (std::size_t kj = 0; kj < g.kw; ++kj) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - ip;
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    const std::size_t idx = plane_off + static_cast<std::size_t>(ih) * g.w +
                                            static_cast<std::size_t>(iw);
                    if (want_x) dx[idx] += kern[ki * g.kw + kj] * go;
                    if (want_w) dw[c * g.kh * g.kw + ki * g.kw + kj] += x[idx] * go;
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  require_rank(input.shape(), 4, "global_avg_pool", "input");
  const auto& s = input.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const Tensor<T>& x = input.value();
  Tensor<T> out({N, C});
  const T denom = static_cast<T>(HW);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.data() + nc * HW;
    T acc = T(0);
    for (std::size_t i = 0; i < HW; ++i) acc += p[i];
    out[nc] = acc / denom;
  }
  return make_result<T>(std::move(out), {input.node()}, "global_avg_pool",
                        [N, C, HW](Node<T>& self) {
                          T* dx = self.inputs[0]->grad_buffer().data();
                          const T denom = static_cast<T>(HW);
                          for (std::size_t nc = 0; nc < N * C; ++nc) {
                            const T g = self.grad[nc] / denom;
                            T* p = dx + nc * HW;
                            for (std::size_t i = 0; i < HW; ++i) p[i] += g;
                          }
                        });
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& stats, bool training) {
  const auto& s = input.shape();
  require(s.size() == 2 || s.size() == 4,
          "batch_norm: input must be [N,F] or [N,F,H,W], got " + shape_str(s));
  const std::size_t N = s[0], F = s[1], HW = s.size() == 4 ? s[2] * s[3] : 1;
  require(gamma.shape() == Shape({F}) && beta.shape() == Shape({F}),
          "batch_norm: gamma/beta must have shape [" + std::to_string(F) + "] to match dim 1");
  require(stats.running_mean.shape() == Shape({F}) && stats.running_var.shape() == Shape({F}),
          "batch_norm: running statistics do not match feature dim 1 = " + std::to_string(F));
  if (training && N < 2) {
    throw ShapeError("batch_norm: training mode needs batch dim 0 >= 2, got " +
                     std::to_string(N));
  }
  const Tensor<T>& x = input.value();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  const std::size_t M = N * HW;

  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv_std({F});
  for (std::size_t f = 0; f < F; ++f) {
    T mean, var;
    if (training) {
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * F + f) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += p[i];
      }
      mean = acc / static_cast<T>(M);
      T sq = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * F + f) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(M);
      const T m = stats.momentum;
      stats.running_mean[f] = (T(1) - m) * stats.running_mean[f] + m * mean;
      stats.running_var[f] = (T(1) - m) * stats.running_var[f] +
                             m * var * static_cast<T>(M) / static_cast<T>(M - 1);
    } else {
      mean = stats.running_mean[f];
      var = stats.running_var[f];
    }
    const T is = T(1) / std::sqrt(var + stats.eps);
    inv_std[f] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * F + f) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (x[off + i] - mean) * is;
        xhat[off + i] = xh;
        out[off + i] = gm[f] * xh + bt[f];
      }
    }
  }

  return make_result<T>(
      std::move(out), {input.node(), gamma.node(), beta.node()}, "batch_norm",
      [N, F, HW, M, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& in_node = self.inputs[0];
        const auto& g_node = self.inputs[1];
        const auto& b_node = self.inputs[2];
        const Tensor<T>& gy = self.grad;
        const T* gm = g_node->value.data();
        T* dg = needs_grad(g_node) ? g_node->grad_buffer().data() : nullptr;
        T* db = needs_grad(b_node) ? b_node->grad_buffer().data() : nullptr;
        T* dx = needs_grad(in_node) ? in_node->grad_buffer().data() : nullptr;
        for (std::size_t f = 0; f < F; ++f) {
          T sum_dy = T(0), sum_dy_xh = T(0);
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * F + f) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sum_dy += gy[off + i];
              sum_dy_xh += gy[off + i] * xhat[off + i];
            }
          }
          if (dg) dg[f] += sum_dy_xh;
          if (db) db[f] += sum_dy;
          if (!dx) continue;
          const T scale = gm[f] * inv_std[f];
          if (training) {
            const T inv_m = T(1) / static_cast<T>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * F + f) * HW;
              for (std::size_t i = 0; i < HW; ++i) {
                dx[off + i] +=
                    scale * (gy[off + i] - inv_m * sum_dy - xhat[off + i] * inv_m * sum_dy_xh);
              }
            }
          } else {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * F + f) * HW;
              for (std::size_t i = 0; i < HW; ++i) dx[off + i] += scale * gy[off + i];
            }
          }
        }
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  Tensor<T> saved = out;
  return make_result<T>(std::move(out), {input.node()}, "sigmoid",
                        [saved = std::move(saved)](Node<T>& self) {
                          T* dx = self.inputs[0]->grad_buffer().data();
                          for (std::size_t i = 0; i < saved.numel(); ++i) {
                            dx[i] += self.grad[i] * saved[i] * (T(1) - saved[i]);
                          }
                        });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return make_result<T>(std::move(out), {input.node()}, "relu", [](Node<T>& self) {
    const Tensor<T>& x = self.inputs[0]->value;
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> channel_scale(const Var<T>& input, const Var<T>& weights) {
  require_rank(input.shape(), 4, "channel_scale", "input");
  const auto& s = input.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  require(weights.shape() == Shape({N, C}), "channel_scale: weights shape " +
                                              shape_str(weights.shape()) + " must be [N,C] = " +
                                              shape_str(Shape({N, C})));
  const Tensor<T>& x = input.value();
  const Tensor<T>& p = weights.value();
  Tensor<T> out(s);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T pk = p[nc];
    const T* src = x.data() + nc * HW;
    T* dst = out.data() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) dst[i] = pk * src[i];
  }
  return make_result<T>(
      std::move(out), {input.node(), weights.node()}, "channel_scale", [N, C, HW](Node<T>& self) {
        const auto& x_node = self.inputs[0];
        const auto& p_node = self.inputs[1];
        const T* gy = self.grad.data();
        if (needs_grad(x_node)) {
          T* dx = x_node->grad_buffer().data();
          const T* p = p_node->value.data();
          for (std::size_t nc = 0; nc < N * C; ++nc) {
            for (std::size_t i = 0; i < HW; ++i) dx[nc * HW + i] += p[nc] * gy[nc * HW + i];
          }
        }
        if (needs_grad(p_node)) {
          T* dp = p_node->grad_buffer().data();
          const T* x = x_node->value.data();
          for (std::size_t nc = 0; nc < N * C; ++nc) {
            T acc = T(0);
            for (std::size_t i = 0; i < HW; ++i) acc += x[nc * HW + i] * gy[nc * HW + i];
            dp[nc] += acc;
          }
        }
      });
}

template <typename T>
Var<T> elementwise_scale(const Var<T>& input, const Var<T>& weights) {
  require(input.shape() == weights.shape(), "elementwise_scale: weights shape " +
                                                shape_str(weights.shape()) +
                                                " must equal input shape " +
                                                shape_str(input.shape()));
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weights.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = w[i] * x[i];
  return make_result<T>(std::move(out), {input.node(), weights.node()}, "elementwise_scale",
                        [](Node<T>& self) {
                          const auto& x_node = self.inputs[0];
                          const auto& w_node = self.inputs[1];
                          const std::size_t n = self.grad.numel();
                          if (needs_grad(x_node)) {
                            T* dx = x_node->grad_buffer().data();
                            for (std::size_t i = 0; i < n; ++i)
                              dx[i] += w_node->value[i] * self.grad[i];
                          }
                          if (needs_grad(w_node)) {
                            T* dw = w_node->grad_buffer().data();
                            for (std::size_t i = 0; i < n; ++i)
                              dw[i] += x_node->value[i] * self.grad[i];
                          }
                        });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  require_rank(input.shape(), 2, "linear", "input");
  require_rank(weight.shape(), 2, "linear", "weight");
  const std::size_t N = input.shape()[0], in = input.shape()[1], out_f = weight.shape()[0];
  require(weight.shape()[1] == in, "linear: weight dim 1 is " + std::to_string(weight.shape()[1]) +
                                       " but input features (dim 1) = " + std::to_string(in));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.shape() == Shape({out_f}),
            "linear: bias must have shape [" + std::to_string(out_f) + "]");
  }
  Tensor<T> out({N, out_f});
  {
    CMapMat<T> xm(input.value().data(), N, in);
    CMapMat<T> wm(weight.value().data(), out_f, in);
    MapMat<T> om(out.data(), N, out_f);
    om.noalias() = xm * wm.transpose();
    if (has_bias) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < out_f; ++o) out[n * out_f + o] += bias.value()[o];
    }
  }
  std::vector<NodePtr<T>> inputs{input.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return make_result<T>(
      std::move(out), std::move(inputs), "linear", [N, in, out_f](Node<T>& self) {
        const auto& x_node = self.inputs[0];
        const auto& w_node = self.inputs[1];
        CMapMat<T> gm(self.grad.data(), N, out_f);
        if (needs_grad(x_node)) {
          CMapMat<T> wm(w_node->value.data(), out_f, in);
          MapMat<T> dx(x_node->grad_buffer().data(), N, in);
          dx.noalias() += gm * wm;
        }
        if (needs_grad(w_node)) {
          CMapMat<T> xm(x_node->value.data(), N, in);
          MapMat<T> dw(w_node->grad_buffer().data(), out_f, in);
          dw.noalias() += gm.transpose() * xm;
        }
        if (self.inputs.size() > 2 && needs_grad(self.inputs[2])) {
          T* db = self.inputs[2]->grad_buffer().data();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < out_f; ++o) db[o] += self.grad[n * out_f + o];
        }
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(),
          "add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> out = a.value();
  out.add_(b.value());
  return make_result<T>(std::move(out), {a.node(), b.node()}, "add", [](Node<T>& self) {
    for (const auto& in : self.inputs) {
      if (needs_grad(in)) in->grad_buffer().add_(self.grad);
    }
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding) {
  require_rank(input.shape(), 4, "max_pool2d", "input");
  require(kernel >= 1 && stride >= 1, "max_pool2d: kernel and stride must be positive");
  const auto& s = input.shape();
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  require(H + 2 * padding >= kernel && W + 2 * padding >= kernel,
          "max_pool2d: window larger than padded input " + shape_str(s));
  const std::size_t Ho = (H + 2 * padding - kernel) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kernel) / stride + 1;
  const Tensor<T>& x = input.value();
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const auto ip = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - ip;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - ip;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t idx = static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
            if (!found || plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (nc * Ho + oh) * Wo + ow;
        out[o] = best;
        argmax[o] = nc * H * W + best_idx;
      }
    }
  }
  return make_result<T>(std::move(out), {input.node()}, "max_pool2d",
                        [argmax = std::move(argmax)](Node<T>& self) {
                          T* dx = self.inputs[0]->grad_buffer().data();
                          for (std::size_t o = 0; o < argmax.size(); ++o)
                            dx[argmax[o]] += self.grad[o];
                        });
}

template <typename T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride) {
  require_rank(input.shape(), 4, "avg_pool2d", "input");
  require(kernel >= 1 && stride >= 1, "avg_pool2d: kernel and stride must be positive");
  const auto& s = input.shape();
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  require(H >= kernel && W >= kernel, "avg_pool2d: window larger than input " + shape_str(s));
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  const Tensor<T>& x = input.value();
  Tensor<T> out({N, C, Ho, Wo});
  const T denom = static_cast<T>(kernel * kernel);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T acc = T(0);
        for (std::size_t ki = 0; ki < kernel; ++ki)
          for (std::size_t kj = 0; kj < kernel; ++kj)
            acc += plane[(oh * stride + ki) * W + ow * stride + kj];
        out[(nc * Ho + oh) * Wo + ow] = acc / denom;
      }
    }
  }
  return make_result<T>(
      std::move(out), {input.node()}, "avg_pool2d", [N, C, H, W, Ho, Wo, kernel, stride](Node<T>& self) {
        T* dx = self.inputs[0]->grad_buffer().data();
        const T denom = static_cast<T>(kernel * kernel);
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const T g = self.grad[(nc * Ho + oh) * Wo + ow] / denom;
              for (std::size_t ki = 0; ki < kernel; ++ki)
                for (std::size_t kj = 0; kj < kernel; ++kj)
                  dx[nc * H * W + (oh * stride + ki) * W + ow * stride + kj] += g;
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
  const std::size_t N = logits.shape()[0], K = logits.shape()[1];
  require(labels.size() == N, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for batch dim 0 = " + std::to_string(N));
  const Tensor<T>& z = logits.value();
  Tensor<T> probs({N, K});
  T total = T(0);
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  for (std::size_t n = 0; n < N; ++n) {
    if (lab[n] < 0 || static_cast<std::size_t>(lab[n]) >= K) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab[n]) + " at index " +
                       std::to_string(n) + " outside [0," + std::to_string(K) + ")");
    }
    const T* row = z.data() + n * K;
    T mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T se = T(0);
    for (std::size_t k = 0; k < K; ++k) se += std::exp(row[k] - mx);
    const T lse = mx + std::log(se);
    total += lse - row[lab[n]];
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - lse);
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(N));
  return make_result<T>(std::move(out), {logits.node()}, "softmax_cross_entropy",
                        [N, K, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
                          T* dz = self.inputs[0]->grad_buffer().data();
                          const T g = self.grad[0] / static_cast<T>(N);
                          for (std::size_t n = 0; n < N; ++n) {
                            for (std::size_t k = 0; k < K; ++k) {
                              const T onehot = static_cast<std::size_t>(lab[n]) == k ? T(1) : T(0);
                              dz[n * K + k] += g * (probs[n * K + k] - onehot);
                            }
                          }
                        });
}

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape) {
  Tensor<T> out = input.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {input.node()}, "reshape", [](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) dx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& input) {
  T acc = T(0);
  for (const T v : input.value().vec()) acc += v;
  return make_result<T>(Tensor<T>::scalar(acc), {input.node()}, "sum", [](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().data();
    const std::size_t n = self.inputs[0]->value.numel();
    for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& coeffs) {
  input.value().require_same_shape(coeffs, "weighted_sum");
  T acc = T(0);
  for (std::size_t i = 0; i < coeffs.numel(); ++i) acc += input.value()[i] * coeffs[i];
  return make_result<T>(Tensor<T>::scalar(acc), {input.node()}, "weighted_sum",
                        [coeffs](Node<T>& self) {
                          T* dx = self.inputs[0]->grad_buffer().data();
                          for (std::size_t i = 0; i < coeffs.numel(); ++i)
                            dx[i] += self.grad[0] * coeffs[i];
                        });
}

template <typename T>
Var<T> mul_constant(const Var<T>& input, const Tensor<T>& factor) {
  input.value().require_same_shape(factor, "mul_constant");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = input.value()[i] * factor[i];
  return make_result<T>(std::move(out), {input.node()}, "mul_constant",
                        [factor](Node<T>& self) {
                          T* dx = self.inputs[0]->grad_buffer().data();
                          for (std::size_t i = 0; i < factor.numel(); ++i)
                            dx[i] += self.grad[i] * factor[i];
                        });
}

#define RECALIB_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Conv2dOptions&);                   \
  template Var<T> depthwise_conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);     \
  template Var<T> global_avg_pool(const Var<T>&);                                               \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&,   \
                             bool);                                                             \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> relu(const Var<T>&);                                                          \
  template Var<T> channel_scale(const Var<T>&, const Var<T>&);                                  \
  template Var<T> elementwise_scale(const Var<T>&, const Var<T>&);                              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> max_pool2d(const Var<T>&, std::size_t, std::size_t, std::size_t);             \
  template Var<T> avg_pool2d(const Var<T>&, std::size_t, std::size_t);                          \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const std::int32_t>);          \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                                \
  template Var<T> mul_constant(const Var<T>&, const Tensor<T>&);

RECALIB_INSTANTIATE_OPS(float)
RECALIB_INSTANTIATE_OPS(double)

#undef RECALIB_INSTANTIATE_OPS

}  // namespace recalib
