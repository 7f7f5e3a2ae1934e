#include "edgecap/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "edgecap/tensor/kernels.hpp"

namespace edgecap {

namespace {

// The message is only built when the check fails.
#define EDGECAP_REQUIRE(ok, what)             \
  do {                                        \
    if (!(ok)) throw DimensionError(what);    \
  } while (false)

template <Real T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  EDGECAP_REQUIRE(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(t.shape()));
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  EDGECAP_REQUIRE(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <Real T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, ho, wo, groups, cg, og, k, p;
};

template <Real T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const Conv2dParams& prm) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  ConvGeometry g{};
  g.c_in = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.c_out = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.groups = prm.groups;
  if (prm.groups == 0 || g.c_in % prm.groups != 0 || g.c_out % prm.groups != 0) {
    throw GroupError("conv2d: groups " + std::to_string(prm.groups) + " must divide in=" + std::to_string(g.c_in) +
                     " and out=" + std::to_string(g.c_out));
  }
  if (prm.stride == 0) throw DimensionError("conv2d: stride must be positive");
  g.cg = g.c_in / prm.groups;
  g.og = g.c_out / prm.groups;
  EDGECAP_REQUIRE(w.dim(1) == g.cg, "conv2d: weight expects " + std::to_string(w.dim(1)) + " channels per group, input has " +
                                std::to_string(g.cg));
  EDGECAP_REQUIRE(g.h + 2 * prm.padding >= g.kh && g.w + 2 * prm.padding >= g.kw, "conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * prm.padding - g.kh) / prm.stride + 1;
  g.wo = (g.w + 2 * prm.padding - g.kw) / prm.stride + 1;
  g.k = g.cg * g.kh * g.kw;
  g.p = g.ho * g.wo;
  return g;
}

template <Real T>
void im2col(const T* x, const ConvGeometry& g, const Conv2dParams& prm, std::size_t group, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(prm.padding);
  for (std::size_t c = 0; c < g.cg; ++c) {
    const T* plane = x + (group * g.cg + c) * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * prm.stride + ky) - pad;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * prm.stride + kx) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? plane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] : T(0);
          }
        }
      }
    }
  }
}

template <Real T>
void col2im_add(const T* col, const ConvGeometry& g, const Conv2dParams& prm, std::size_t group, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(prm.padding);
  for (std::size_t c = 0; c < g.cg; ++c) {
    T* plane = dx + (group * g.cg + c) * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * prm.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * prm.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            plane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

// Depthwise case (one input and one output channel per group): direct loops
// over valid output ranges, accumulated in (ky, kx) order.
struct Span1 {
  std::size_t lo, hi;
};

// Output indices o with 0 <= o * stride + k - pad < n.
Span1 valid_outputs(std::size_t k, std::size_t pad, std::size_t stride, std::size_t n, std::size_t out) {
  const std::size_t lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  if (n + pad <= k) return {lo, lo};
  const std::size_t hi = std::min(out, (n + pad - k - 1) / stride + 1);
  return {lo, std::max(lo, hi)};
}

template <Real T>
void depthwise_forward(const T* x, const T* w, const ConvGeometry& g, const Conv2dParams& prm, T* out) {
  const std::size_t s = prm.stride, pad = prm.padding;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const T* plane = x + c * g.h * g.w;
    const T* wk = w + c * g.kh * g.kw;
    T* o = out + c * g.p;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const Span1 ry = valid_outputs(ky, pad, s, g.h, g.ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Span1 rx = valid_outputs(kx, pad, s, g.w, g.wo);
        const T wv = wk[ky * g.kw + kx];
        for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
          const T* src = plane + (oy * s + ky - pad) * g.w + kx - pad;
          T* dst = o + oy * g.wo;
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += src[ox * s] * wv;
        }
      }
    }
  }
}

template <Real T>
void depthwise_backward(const T* x, const T* w, const T* go, const ConvGeometry& g, const Conv2dParams& prm, T* dx,
                        T* dw) {
  const std::size_t s = prm.stride, pad = prm.padding;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const T* plane = x + c * g.h * g.w;
    const T* gp = go + c * g.p;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const Span1 ry = valid_outputs(ky, pad, s, g.h, g.ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Span1 rx = valid_outputs(kx, pad, s, g.w, g.wo);
        const std::size_t wi = (c * g.kh + ky) * g.kw + kx;
        T acc = 0;
        const T wv = w[wi];
        for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
          const std::size_t base = (oy * s + ky - pad) * g.w + kx - pad;
          const T* grow = gp + oy * g.wo;
          if (dw) {
            const T* src = plane + base;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) acc += grow[ox] * src[ox * s];
          }
          if (dx) {
            T* dst = dx + c * g.h * g.w + base;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox * s] += grow[ox] * wv;
          }
        }
        if (dw) dw[wi] += acc;
      }
    }
  }
}

struct PoolWindow {
  std::size_t begin, end;
};

PoolWindow pool_window(std::size_t i, std::size_t in, std::size_t out) {
  const std::size_t b = (i * in) / out;
  const std::size_t e = ((i + 1) * in + out - 1) / out;
  return {b, e};
}

template <Real T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <Real T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

bool attention_allowed(const AttentionOptions& opt, std::size_t i, std::size_t j, std::size_t lq, std::size_t lk) {
  if (opt.causal && j + lq > i + lk) return false;
  if (opt.mask && (*opt.mask)[i * lk + j] == 0) return false;
  return true;
}

template <Real T>
void copy_head(const Tensor<T>& src, std::size_t head, std::size_t dh, T* dst) {
  const std::size_t rows = src.dim(0), d = src.dim(1);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(src.ptr() + r * d + head * dh, dh, dst + r * dh);
}

template <Real T>
void add_head(const T* src, std::size_t rows, std::size_t d, std::size_t head, std::size_t dh, std::span<T> dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < dh; ++c) dst[r * d + head * dh + c] += src[r * dh + c];
  }
}

std::size_t count_non_pad(std::span<const TokenId> targets, TokenId pad_id) {
  return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [&](TokenId t) { return t != pad_id; }));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape-free forward routines
// ---------------------------------------------------------------------------
namespace fwd {

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  EDGECAP_REQUIRE(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{a.dim(0), b.dim(1)});
  kernels::gemm_nn<T>(a.dim(0), b.dim(1), a.dim(1), a.ptr(), b.ptr(), out.ptr());
  return out;
}

template <Real T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  EDGECAP_REQUIRE(x.dim(1) == w.dim(1), "linear: input width " + std::to_string(x.dim(1)) + " != weight in " +
                                    std::to_string(w.dim(1)));
  const std::size_t rows = x.dim(0), out_dim = w.dim(0);
  Tensor<T> y(Shape{rows, out_dim});
  if (bias) {
    EDGECAP_REQUIRE(bias->size() == out_dim, "linear: bias length mismatch");
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias->ptr(), out_dim, y.ptr() + r * out_dim);
  }
  kernels::gemm_nt<T>(rows, out_dim, x.dim(1), x.ptr(), w.ptr(), y.ptr());
  return y;
}

template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias, const Conv2dParams& p) {
  const ConvGeometry g = conv_geometry(x, w, p);
  Tensor<T> out(Shape{g.c_out, g.ho, g.wo});
  if (g.cg == 1 && g.og == 1) {
    depthwise_forward(x.ptr(), w.ptr(), g, p, out.ptr());
  } else {
    std::vector<T> col(g.k * g.p);
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      im2col(x.ptr(), g, p, gi, col.data());
      kernels::gemm_nn<T>(g.og, g.p, g.k, w.ptr() + gi * g.og * g.k, col.data(), out.ptr() + gi * g.og * g.p);
    }
  }
  if (bias) {
    EDGECAP_REQUIRE(bias->size() == g.c_out, "conv2d: bias length mismatch");
    for (std::size_t o = 0; o < g.c_out; ++o) {
      T* row = out.ptr() + o * g.p;
      for (std::size_t i = 0; i < g.p; ++i) row[i] += (*bias)[o];
    }
  }
  return out;
}

template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  EDGECAP_REQUIRE(gamma.size() == d && beta.size() == d, "layer_norm: affine length " + std::to_string(gamma.size()) +
                                                     " does not match last axis " + std::to_string(d));
  Tensor<T> y(x.shape());
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T* yr = y.ptr() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= T(d);
    const T denom = var + eps;
    const T rstd = denom > T(0) ? T(1) / std::sqrt(denom) : T(0);
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - mean) * rstd * gamma[i] + beta[i];
  }
  return y;
}

template <Real T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  if (mx == -std::numeric_limits<T>::infinity()) {
    std::fill(row.begin(), row.end(), T(0));
    return;
  }
  T total = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (T& v : row) v /= total;
}

template <Real T>
Tensor<T> softmax(const Tensor<T>& x) {
  Tensor<T> y = x;
  const std::size_t d = x.shape().back();
  for (std::size_t r = 0; r < x.size() / d; ++r) softmax_inplace(std::span<T>(y.ptr() + r * d, d));
  return y;
}

template <Real T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t d = x.shape().back();
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    const T* xr = x.ptr() + r * d;
    T* yr = y.ptr() + r * d;
    const T mx = *std::max_element(xr, xr + d);
    T total = 0;
    for (std::size_t i = 0; i < d; ++i) total += std::exp(xr[i] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] - lse;
  }
  return y;
}

template <Real T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
  return y;
}

template <Real T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "adaptive_avg_pool2d");
  EDGECAP_REQUIRE(out_h > 0 && out_w > 0, "adaptive_avg_pool2d: output size must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y(Shape{c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto wy = pool_window(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto wx = pool_window(ox, w, out_w);
        T acc = 0;
        for (std::size_t iy = wy.begin; iy < wy.end; ++iy) {
          for (std::size_t ix = wx.begin; ix < wx.end; ++ix) acc += x.at(ch, iy, ix);
        }
        y.at(ch, oy, ox) = acc / T((wy.end - wy.begin) * (wx.end - wx.begin));
      }
    }
  }
  return y;
}

template <Real T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionOptions& opt,
                    std::vector<T>* weights) {
  require_rank(q, 2, "attention query");
  require_rank(k, 2, "attention key");
  require_rank(v, 2, "attention value");
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  EDGECAP_REQUIRE(k.dim(1) == d && v.dim(1) == d && v.dim(0) == lk, "attention: q/k/v widths or key/value lengths differ");
  if (opt.heads == 0 || d % opt.heads != 0) {
    throw ConfigError("attention: " + std::to_string(opt.heads) + " heads do not divide model dim " + std::to_string(d));
  }
  if (opt.mask) EDGECAP_REQUIRE(opt.mask->size() == lq * lk, "attention: mask must be Lq x Lk");
  const std::size_t dh = d / opt.heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Tensor<T> out(Shape{lq, d});
  std::vector<T> qh(lq * dh), kh(lk * dh), vh(lk * dh), s(lq * lk), oh(lq * dh);
  if (weights) weights->assign(opt.heads * lq * lk, T(0));
  for (std::size_t h = 0; h < opt.heads; ++h) {
    copy_head(q, h, dh, qh.data());
    copy_head(k, h, dh, kh.data());
    copy_head(v, h, dh, vh.data());
    std::fill(s.begin(), s.end(), T(0));
    kernels::gemm_nt<T>(lq, lk, dh, qh.data(), kh.data(), s.data());
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        T& sv = s[i * lk + j];
        sv = attention_allowed(opt, i, j, lq, lk) ? sv * scale : -std::numeric_limits<T>::infinity();
      }
      softmax_inplace(std::span<T>(s.data() + i * lk, lk));
    }
    std::fill(oh.begin(), oh.end(), T(0));
    kernels::gemm_nn<T>(lq, dh, lk, s.data(), vh.data(), oh.data());
    for (std::size_t i = 0; i < lq; ++i) std::copy_n(oh.data() + i * dh, dh, out.ptr() + i * d + h * dh);
    if (weights) std::copy(s.begin(), s.end(), weights->begin() + h * lq * lk);
  }
  return out;
}

}  // namespace fwd

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------
namespace ops {

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tensor<T> out = fwd::matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext<T>& c) {
    const Tensor<T>& av = c.input(0);
    const Tensor<T>& bv = c.input(1);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    const T* g = c.out_grad().data();
    if (c.wants(0)) kernels::gemm_nt<T>(m, k, n, g, bv.ptr(), c.input_grad(0).data());
    if (c.wants(1)) kernels::gemm_tn<T>(k, n, m, av.ptr(), g, c.input_grad(1).data());
  });
}

template <Real T>
Var<T> linear(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> bias) {
  Tensor<T> out = fwd::linear(x.value(), w.value(), bias ? &bias->value() : nullptr);
  auto fn = [has_bias = bias.has_value()](BackwardContext<T>& c) {
    const Tensor<T>& xv = c.input(0);
    const Tensor<T>& wv = c.input(1);
    const std::size_t rows = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    const T* g = c.out_grad().data();
    if (c.wants(0)) kernels::gemm_nn<T>(rows, in, out_dim, g, wv.ptr(), c.input_grad(0).data());
    if (c.wants(1)) kernels::gemm_tn<T>(out_dim, in, rows, g, xv.ptr(), c.input_grad(1).data());
    if (has_bias && c.wants(2)) {
      auto db = c.input_grad(2);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) db[o] += g[r * out_dim + o];
      }
    }
  };
  if (bias) return x.tape().record(std::move(out), {x, w, *bias}, fn);
  return x.tape().record(std::move(out), {x, w}, fn);
}

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext<T>& c) {
    if (c.wants(0)) accumulate(c.input_grad(0), c.out_grad());
    if (c.wants(1)) accumulate(c.input_grad(1), c.out_grad());
  });
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext<T>& c) {
    if (c.wants(0)) accumulate(c.input_grad(0), c.out_grad());
    if (c.wants(1)) {
      auto db = c.input_grad(1);
      auto g = c.out_grad();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    }
  });
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext<T>& c) {
    auto g = c.out_grad();
    if (c.wants(0)) {
      auto da = c.input_grad(0);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * c.input(1)[i];
    }
    if (c.wants(1)) {
      auto db = c.input_grad(1);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * c.input(0)[i];
    }
  });
}

template <Real T>
Var<T> scale(Var<T> a, std::type_identity_t<T> s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [s](BackwardContext<T>& c) {
    auto da = c.input_grad(0);
    auto g = c.out_grad();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * g[i];
  });
}

template <Real T>
Var<T> scale_columns(Var<T> x, Var<T> g) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "scale_columns");
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  EDGECAP_REQUIRE(g.value().size() == d, "scale_columns: vector length " + std::to_string(g.value().size()) +
                                     " != width " + std::to_string(d));
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] *= g.value()[i];
  }
  return x.tape().record(std::move(out), {x, g}, [rows, d](BackwardContext<T>& c) {
    auto go = c.out_grad();
    const Tensor<T>& xv = c.input(0);
    const Tensor<T>& gv = c.input(1);
    if (c.wants(0)) {
      auto dx = c.input_grad(0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += go[r * d + i] * gv[i];
      }
    }
    if (c.wants(1)) {
      auto dg = c.input_grad(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) dg[i] += go[r * d + i] * xv[r * d + i];
      }
    }
  });
}

template <Real T>
Var<T> conv2d(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> bias, const Conv2dParams& p) {
  Tensor<T> out = fwd::conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, p);
  auto fn = [p, has_bias = bias.has_value()](BackwardContext<T>& c) {
    const Tensor<T>& xv = c.input(0);
    const Tensor<T>& wv = c.input(1);
    const ConvGeometry g = conv_geometry(xv, wv, p);
    const T* go = c.out_grad().data();
    const bool depthwise = g.cg == 1 && g.og == 1;
    if (depthwise) {
      depthwise_backward(xv.ptr(), wv.ptr(), go, g, p, c.wants(0) ? c.input_grad(0).data() : nullptr,
                         c.wants(1) ? c.input_grad(1).data() : nullptr);
    } else {
      std::vector<T> col(g.k * g.p), dcol(g.k * g.p);
      for (std::size_t gi = 0; gi < g.groups; ++gi) {
        const T* go_g = go + gi * g.og * g.p;
        if (c.wants(1)) {
          im2col(xv.ptr(), g, p, gi, col.data());
          kernels::gemm_nt<T>(g.og, g.k, g.p, go_g, col.data(), c.input_grad(1).data() + gi * g.og * g.k);
        }
        if (c.wants(0)) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          kernels::gemm_tn<T>(g.k, g.p, g.og, wv.ptr() + gi * g.og * g.k, go_g, dcol.data());
          col2im_add(dcol.data(), g, p, gi, c.input_grad(0).data());
        }
      }
    }
    if (has_bias && c.wants(2)) {
      auto db = c.input_grad(2);
      for (std::size_t o = 0; o < g.c_out; ++o) {
        T acc = 0;
        for (std::size_t i = 0; i < g.p; ++i) acc += go[o * g.p + i];
        db[o] += acc;
      }
    }
  };
  if (bias) return x.tape().record(std::move(out), {x, w, *bias}, fn);
  return x.tape().record(std::move(out), {x, w}, fn);
}

template <Real T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::type_identity_t<T> eps) {
  Tensor<T> out = fwd::layer_norm(x.value(), gamma.value(), beta.value(), eps);
  return x.tape().record(std::move(out), {x, gamma, beta}, [eps](BackwardContext<T>& c) {
    const Tensor<T>& xv = c.input(0);
    const Tensor<T>& gv = c.input(1);
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.size() / d;
    auto go = c.out_grad();
    const bool wx = c.wants(0), wg = c.wants(1), wb = c.wants(2);
    std::vector<T> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.ptr() + r * d;
      const T* gr = go.data() + r * d;
      T mean = 0;
      for (std::size_t i = 0; i < d; ++i) mean += xr[i];
      mean /= T(d);
      T var = 0;
      for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
      var /= T(d);
      const T denom = var + eps;
      const T rstd = denom > T(0) ? T(1) / std::sqrt(denom) : T(0);
      for (std::size_t i = 0; i < d; ++i) xhat[i] = (xr[i] - mean) * rstd;
      if (wg) {
        auto dg = c.input_grad(1);
        for (std::size_t i = 0; i < d; ++i) dg[i] += gr[i] * xhat[i];
      }
      if (wb) {
        auto db = c.input_grad(2);
        for (std::size_t i = 0; i < d; ++i) db[i] += gr[i];
      }
      if (wx) {
        T m1 = 0, m2 = 0;
        for (std::size_t i = 0; i < d; ++i) {
          dxhat[i] = gr[i] * gv[i];
          m1 += dxhat[i];
          m2 += dxhat[i] * xhat[i];
        }
        m1 /= T(d);
        m2 /= T(d);
        auto dx = c.input_grad(0);
        for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
      }
    }
  });
}

template <Real T>
Var<T> softmax(Var<T> x) {
  Tensor<T> out = fwd::softmax(x.value());
  return x.tape().record(std::move(out), {x}, [](BackwardContext<T>& c) {
    const Tensor<T>& y = c.output();
    const std::size_t d = y.shape().back();
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t r = 0; r < y.size() / d; ++r) {
      T dotp = 0;
      for (std::size_t i = 0; i < d; ++i) dotp += go[r * d + i] * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += y[r * d + i] * (go[r * d + i] - dotp);
    }
  });
}

template <Real T>
Var<T> log_softmax(Var<T> x) {
  Tensor<T> out = fwd::log_softmax(x.value());
  return x.tape().record(std::move(out), {x}, [](BackwardContext<T>& c) {
    const Tensor<T>& y = c.output();
    const std::size_t d = y.shape().back();
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t r = 0; r < y.size() / d; ++r) {
      T total = 0;
      for (std::size_t i = 0; i < d; ++i) total += go[r * d + i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += go[r * d + i] - std::exp(y[r * d + i]) * total;
    }
  });
}

template <Real T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = fwd::gelu(x.value());
  return x.tape().record(std::move(out), {x}, [](BackwardContext<T>& c) {
    const Tensor<T>& xv = c.input(0);
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i] * gelu_grad_scalar(xv[i]);
  });
}

template <Real T>
Var<T> channels_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "channels_last");
  const std::size_t ch = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  Tensor<T> out(Shape{hw, ch});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < hw; ++p) out[p * ch + c] = xv[c * hw + p];
  }
  return x.tape().record(std::move(out), {x}, [ch, hw](BackwardContext<T>& c) {
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t p = 0; p < hw; ++p) dx[k * hw + p] += go[p * ch + k];
    }
  });
}

template <Real T>
Var<T> channels_first(Var<T> x, std::size_t h, std::size_t w) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "channels_first");
  const std::size_t hw = h * w, ch = xv.dim(1);
  EDGECAP_REQUIRE(xv.dim(0) == hw, "channels_first: " + std::to_string(xv.dim(0)) + " rows cannot form a " +
                               std::to_string(h) + "x" + std::to_string(w) + " grid");
  Tensor<T> out(Shape{ch, h, w});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] = xv[p * ch + c];
  }
  return x.tape().record(std::move(out), {x}, [ch, hw](BackwardContext<T>& c) {
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t p = 0; p < hw; ++p) dx[p * ch + k] += go[k * hw + p];
    }
  });
}

template <Real T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = fwd::adaptive_avg_pool2d(x.value(), out_h, out_w);
  return x.tape().record(std::move(out), {x}, [out_h, out_w](BackwardContext<T>& c) {
    const Tensor<T>& xv = c.input(0);
    const std::size_t ch = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto wy = pool_window(oy, h, out_h);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto wx = pool_window(ox, w, out_w);
          const T g = go[(k * out_h + oy) * out_w + ox] / T((wy.end - wy.begin) * (wx.end - wx.begin));
          for (std::size_t iy = wy.begin; iy < wy.end; ++iy) {
            for (std::size_t ix = wx.begin; ix < wx.end; ++ix) dx[(k * h + iy) * w + ix] += g;
          }
        }
      }
    }
  });
}

template <Real T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionOptions& opt) {
  auto probs = std::make_shared<std::vector<T>>();
  Tensor<T> out = fwd::attention(q.value(), k.value(), v.value(), opt, probs.get());
  const std::size_t heads = opt.heads;
  return q.tape().record(std::move(out), {q, k, v}, [probs, heads](BackwardContext<T>& c) {
    const Tensor<T>& qv = c.input(0);
    const Tensor<T>& kv = c.input(1);
    const Tensor<T>& vv = c.input(2);
    const std::size_t lq = qv.dim(0), lk = kv.dim(0), d = qv.dim(1), dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const Tensor<T> go(Shape{lq, d}, std::vector<T>(c.out_grad().begin(), c.out_grad().end()));
    std::vector<T> qh(lq * dh), kh(lk * dh), vh(lk * dh), doh(lq * dh), dp(lq * lk), tmp_q(lq * dh), tmp_k(lk * dh),
        tmp_v(lk * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs->data() + h * lq * lk;
      copy_head(go, h, dh, doh.data());
      if (c.wants(2)) {
        std::fill(tmp_v.begin(), tmp_v.end(), T(0));
        kernels::gemm_tn<T>(lk, dh, lq, p, doh.data(), tmp_v.data());
        add_head(tmp_v.data(), lk, d, h, dh, c.input_grad(2));
      }
      if (!c.wants(0) && !c.wants(1)) continue;
      copy_head(vv, h, dh, vh.data());
      std::fill(dp.begin(), dp.end(), T(0));
      kernels::gemm_nt<T>(lq, lk, dh, doh.data(), vh.data(), dp.data());
      for (std::size_t i = 0; i < lq; ++i) {
        T dotp = 0;
        for (std::size_t j = 0; j < lk; ++j) dotp += dp[i * lk + j] * p[i * lk + j];
        for (std::size_t j = 0; j < lk; ++j) dp[i * lk + j] = p[i * lk + j] * (dp[i * lk + j] - dotp) * scale;
      }
      if (c.wants(0)) {
        copy_head(kv, h, dh, kh.data());
        std::fill(tmp_q.begin(), tmp_q.end(), T(0));
        kernels::gemm_nn<T>(lq, dh, lk, dp.data(), kh.data(), tmp_q.data());
        add_head(tmp_q.data(), lq, d, h, dh, c.input_grad(0));
      }
      if (c.wants(1)) {
        copy_head(qv, h, dh, qh.data());
        std::fill(tmp_k.begin(), tmp_k.end(), T(0));
        kernels::gemm_tn<T>(lk, dh, lq, dp.data(), qh.data(), tmp_k.data());
        add_head(tmp_k.data(), lk, d, h, dh, c.input_grad(1));
      }
    }
  });
}

template <Real T>
Var<T> embedding(Var<T> table, std::span<const TokenId> ids) {
  const Tensor<T>& tv = table.value();
  require_rank(tv, 2, "embedding table");
  if (ids.empty()) throw LengthError("embedding: empty id sequence");
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw LookupError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) +
                        " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [saved = std::move(saved), d](BackwardContext<T>& c) {
    auto go = c.out_grad();
    auto dt = c.input_grad(0);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* row = dt.data() + static_cast<std::size_t>(saved[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += go[i * d + j];
    }
  });
}

template <Real T>
Var<T> take_rows(Var<T> x, std::size_t rows) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 2, "take_rows");
  if (rows == 0 || rows > xv.dim(0)) {
    throw LengthError("take_rows: requested " + std::to_string(rows) + " of " + std::to_string(xv.dim(0)) + " rows");
  }
  const std::size_t d = xv.dim(1);
  Tensor<T> out(Shape{rows, d}, std::vector<T>(xv.ptr(), xv.ptr() + rows * d));
  return x.tape().record(std::move(out), {x}, [](BackwardContext<T>& c) {
    auto go = c.out_grad();
    auto dx = c.input_grad(0);
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
  });
}

template <Real T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape().record(Tensor<T>::scalar(acc), {x}, [](BackwardContext<T>& c) {
    const T g = c.out_grad()[0];
    auto dx = c.input_grad(0);
    for (auto& v : dx) v += g;
  });
}

template <Real T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

template <Real T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets, TokenId pad_id) {
  const Tensor<T>& lv = logits.value();
  require_rank(lv, 2, "cross_entropy logits");
  const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != rows) throw LengthError("cross_entropy: targets length differs from logits rows");
  const std::size_t count = count_non_pad(targets, pad_id);
  if (count == 0) throw ContractError("cross_entropy: every position is padding");
  const Tensor<T> logp = fwd::log_softmax(lv);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_id) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw LookupError("cross_entropy: target id " + std::to_string(targets[r]) + " outside vocabulary");
    }
    loss -= logp[r * vocab + static_cast<std::size_t>(targets[r])];
  }
  loss /= T(count);
  std::vector<TokenId> saved(targets.begin(), targets.end());
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits},
      [logp, saved = std::move(saved), pad_id, count, vocab](BackwardContext<T>& c) {
        const T g = c.out_grad()[0] / T(count);
        auto dl = c.input_grad(0);
        for (std::size_t r = 0; r < saved.size(); ++r) {
          if (saved[r] == pad_id) continue;
          for (std::size_t j = 0; j < vocab; ++j) dl[r * vocab + j] += g * std::exp(logp[r * vocab + j]);
          dl[r * vocab + static_cast<std::size_t>(saved[r])] -= g;
        }
      });
}

template <Real T>
Var<T> distillation_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const TokenId> targets,
                         TokenId pad_id, std::type_identity_t<T> temperature, std::type_identity_t<T> alpha, DistillTerms* terms) {
  if (!(temperature > T(0))) throw ConfigError("distillation_loss: temperature must be positive");
  if (!(alpha >= T(0) && alpha <= T(1))) throw ConfigError("distillation_loss: alpha must lie in [0, 1]");
  const Tensor<T>& sv = student_logits.value();
  require_same_shape(sv, teacher_logits, "distillation_loss");
  require_rank(sv, 2, "distillation_loss");
  const std::size_t rows = sv.dim(0), vocab = sv.dim(1);
  if (targets.size() != rows) throw LengthError("distillation_loss: targets length differs from logits rows");
  const std::size_t count = count_non_pad(targets, pad_id);
  if (count == 0) throw ContractError("distillation_loss: every position is padding");

  const Tensor<T> logp = fwd::log_softmax(sv);
  Tensor<T> s_soft = sv, t_soft = teacher_logits;
  for (auto& v : s_soft.data()) v /= temperature;
  for (auto& v : t_soft.data()) v /= temperature;
  const Tensor<T> log_q = fwd::log_softmax(s_soft);
  const Tensor<T> log_p = fwd::log_softmax(t_soft);

  T ce = 0, kl = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_id) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw LookupError("distillation_loss: target id outside vocabulary");
    }
    ce -= logp[r * vocab + static_cast<std::size_t>(targets[r])];
    T row_kl = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const T lp = log_p[r * vocab + j];
      row_kl += std::exp(lp) * (lp - log_q[r * vocab + j]);
    }
    kl += row_kl;
  }
  ce /= T(count);
  kl /= T(count);
  if (terms) {
    terms->cross_entropy = static_cast<double>(ce);
    terms->kl = static_cast<double>(kl);
  }
  const T loss = alpha * ce + (T(1) - alpha) * temperature * temperature * kl;
  std::vector<TokenId> saved(targets.begin(), targets.end());
  return student_logits.tape().record(
      Tensor<T>::scalar(loss), {student_logits},
      [logp, log_q, log_p, saved = std::move(saved), pad_id, count, vocab, temperature, alpha](BackwardContext<T>& c) {
        const T g = c.out_grad()[0] / T(count);
        const T hard = alpha * g;
        const T soft = (T(1) - alpha) * temperature * g;
        auto dl = c.input_grad(0);
        for (std::size_t r = 0; r < saved.size(); ++r) {
          if (saved[r] == pad_id) continue;
          for (std::size_t j = 0; j < vocab; ++j) {
            const std::size_t at = r * vocab + j;
            dl[at] += hard * std::exp(logp[at]) + soft * (std::exp(log_q[at]) - std::exp(log_p[at]));
          }
          dl[r * vocab + static_cast<std::size_t>(saved[r])] -= hard;
        }
      });
}

}  // namespace ops

#define EDGECAP_INSTANTIATE(T)                                                                                      \
  template Tensor<T> fwd::matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> fwd::linear(const Tensor<T>&, const Tensor<T>&, const std::type_identity_t<Tensor<T>>*);                            \
  template Tensor<T> fwd::conv2d(const Tensor<T>&, const Tensor<T>&, const std::type_identity_t<Tensor<T>>*, const Conv2dParams&);       \
  template Tensor<T> fwd::layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                     \
  template Tensor<T> fwd::softmax(const Tensor<T>&);                                                               \
  template Tensor<T> fwd::log_softmax(const Tensor<T>&);                                                           \
  template Tensor<T> fwd::gelu(const Tensor<T>&);                                                                  \
  template Tensor<T> fwd::adaptive_avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> fwd::attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionOptions&, \
                                    std::vector<T>*);                                                              \
  template void fwd::softmax_inplace(std::span<T>);                                                                \
  template Var<T> ops::matmul(Var<T>, Var<T>);                                                                     \
  template Var<T> ops::linear(Var<T>, Var<T>, std::type_identity_t<std::optional<Var<T>>>);                                              \
  template Var<T> ops::add(Var<T>, Var<T>);                                                                        \
  template Var<T> ops::sub(Var<T>, Var<T>);                                                                        \
  template Var<T> ops::mul(Var<T>, Var<T>);                                                                        \
  template Var<T> ops::scale(Var<T>, std::type_identity_t<T>);                                                                           \
  template Var<T> ops::scale_columns(Var<T>, Var<T>);                                                              \
  template Var<T> ops::conv2d(Var<T>, Var<T>, std::type_identity_t<std::optional<Var<T>>>, const Conv2dParams&);                         \
  template Var<T> ops::layer_norm(Var<T>, Var<T>, Var<T>, std::type_identity_t<T>);                                                      \
  template Var<T> ops::softmax(Var<T>);                                                                            \
  template Var<T> ops::log_softmax(Var<T>);                                                                        \
  template Var<T> ops::gelu(Var<T>);                                                                               \
  template Var<T> ops::channels_last(Var<T>);                                                                      \
  template Var<T> ops::channels_first(Var<T>, std::size_t, std::size_t);                                           \
  template Var<T> ops::adaptive_avg_pool2d(Var<T>, std::size_t, std::size_t);                                      \
  template Var<T> ops::attention(Var<T>, Var<T>, Var<T>, const AttentionOptions&);                                 \
  template Var<T> ops::embedding(Var<T>, std::span<const TokenId>);                                                \
  template Var<T> ops::take_rows(Var<T>, std::size_t);                                                             \
  template Var<T> ops::sum(Var<T>);                                                                                \
  template Var<T> ops::mean(Var<T>);                                                                               \
  template Var<T> ops::cross_entropy(Var<T>, std::span<const TokenId>, TokenId);                                   \
  template Var<T> ops::distillation_loss(Var<T>, const Tensor<T>&, std::span<const TokenId>, TokenId, std::type_identity_t<T>, std::type_identity_t<T>,        \
                                         ops::DistillTerms*);

EDGECAP_INSTANTIATE(float)
EDGECAP_INSTANTIATE(double)

#undef EDGECAP_INSTANTIATE

}  // namespace edgecap
