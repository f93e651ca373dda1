#include "rgbx/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rgbx/errors.hpp"

namespace rgbx::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Grad buffer of an input, or nullptr when the input does not need one.
double* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->ensure_grad().data();
}

std::array<std::int64_t, 4> strides_of(const Shape& s) {
  return {static_cast<std::int64_t>(s[1]) * s[2] * s[3], static_cast<std::int64_t>(s[2]) * s[3],
          s[3], 1};
}

struct Broadcast {
  Shape out;
  std::array<std::int64_t, 4> sa;
  std::array<std::int64_t, 4> sb;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast r{};
  const auto ta = strides_of(a);
  const auto tb = strides_of(b);
  for (std::size_t i = 0; i < 4; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                       to_string(b));
    }
    r.out[i] = std::max(a[i], b[i]);
    r.sa[i] = (a[i] == 1 && r.out[i] > 1) ? 0 : ta[i];
    r.sb[i] = (b[i] == 1 && r.out[i] > 1) ? 0 : tb[i];
  }
  return r;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  std::int64_t o = 0;
  for (int i0 = 0; i0 < bc.out[0]; ++i0) {
    for (int i1 = 0; i1 < bc.out[1]; ++i1) {
      for (int i2 = 0; i2 < bc.out[2]; ++i2) {
        const std::int64_t ba = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2];
        const std::int64_t bb = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2];
        for (int i3 = 0; i3 < bc.out[3]; ++i3, ++o) {
          f(o, ba + i3 * bc.sa[3], bb + i3 * bc.sb[3]);
        }
      }
    }
  }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* name = kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul";
  const Broadcast bc = broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(static_cast<std::size_t>(numel(bc.out)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(bc, [&](auto o, auto ia, auto ib) { out[o] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(bc, [&](auto o, auto ia, auto ib) { out[o] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(bc, [&](auto o, auto ia, auto ib) { out[o] = pa[ia] * pb[ib]; });
      break;
  }
  return make_result(bc.out, std::move(out), {a, b}, [a, b, bc, kind](Node& self) {
    const double* g = self.grad.data();
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const double sign_b = kind == BinaryKind::sub ? -1.0 : 1.0;
    for_each_broadcast(bc, [&](auto o, auto ia, auto ib) {
      if (kind == BinaryKind::mul) {
        if (ga) ga[ia] += g[o] * pb[ib];
        if (gb) gb[ib] += g[o] * pa[ia];
      } else {
        if (ga) ga[ia] += g[o];
        if (gb) gb[ib] += sign_b * g[o];
      }
    });
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, deriv](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    const auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += self.grad[i] * deriv(in[i], self.value[i]);
  });
}

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

struct ConvGeom {
  int batch, in_h, in_w, in_c;
  int kh, kw, cin_g, out_c;
  int out_h, out_w;
  int stride, pad, groups;
};

// Rows are output pixels, columns are (ky, kx, ci), matching the weight layout.
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::int64_t row_len = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
  std::int64_t row = 0;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox, ++row) {
        double* dst = cols + row * row_len;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
              std::fill(dst, dst + g.in_c, 0.0);
            } else {
              const double* src = x + ((static_cast<std::int64_t>(b) * g.in_h + iy) * g.in_w + ix) * g.in_c;
              std::copy(src, src + g.in_c, dst);
            }
            dst += g.in_c;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  const std::int64_t row_len = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
  std::int64_t row = 0;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox, ++row) {
        const double* src = cols + row * row_len;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) {
              double* dst = dx + ((static_cast<std::int64_t>(b) * g.in_h + iy) * g.in_w + ix) * g.in_c;
              for (int c = 0; c < g.in_c; ++c) dst[c] += src[c];
            }
            src += g.in_c;
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

void conv_dense_forward(const ConvGeom& g, const double* x, const double* w, double* out) {
  const std::int64_t rows = static_cast<std::int64_t>(g.batch) * g.out_h * g.out_w;
  const std::int64_t k = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
  ConstMapMat wm(w, k, g.out_c);
  MapMat om(out, rows, g.out_c);
  if (is_pointwise(g)) {
    om.noalias() += ConstMapMat(x, rows, k) * wm;
  } else {
    std::vector<double> cols(static_cast<std::size_t>(rows * k));
    im2col(g, x, cols.data());
    om.noalias() += ConstMapMat(cols.data(), rows, k) * wm;
  }
}

void conv_dense_backward(const ConvGeom& g, const double* x, const double* w, const double* gout,
                         double* gx, double* gw) {
  const std::int64_t rows = static_cast<std::int64_t>(g.batch) * g.out_h * g.out_w;
  const std::int64_t k = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
  ConstMapMat gm(gout, rows, g.out_c);
  ConstMapMat wm(w, k, g.out_c);
  if (is_pointwise(g)) {
    if (gw) MapMat(gw, k, g.out_c).noalias() += ConstMapMat(x, rows, k).transpose() * gm;
    if (gx) MapMat(gx, rows, k).noalias() += gm * wm.transpose();
    return;
  }
  if (gw) {
    std::vector<double> cols(static_cast<std::size_t>(rows * k));
    im2col(g, x, cols.data());
    MapMat(gw, k, g.out_c).noalias() += ConstMapMat(cols.data(), rows, k).transpose() * gm;
  }
  if (gx) {
    RowMat gcols = gm * wm.transpose();
    col2im(g, gcols.data(), gx);
  }
}

// Depthwise with channel multiplier 1: out[c] uses only in[c].
void conv_depthwise_forward(const ConvGeom& g, const double* x, const double* w, double* out) {
  const int C = g.in_c;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        double* o = out + ((static_cast<std::int64_t>(b) * g.out_h + oy) * g.out_w + ox) * C;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const double* xi = x + ((static_cast<std::int64_t>(b) * g.in_h + iy) * g.in_w + ix) * C;
            const double* wk = w + (static_cast<std::int64_t>(ky) * g.kw + kx) * C;
            for (int c = 0; c < C; ++c) o[c] += xi[c] * wk[c];
          }
        }
      }
    }
  }
}

void conv_depthwise_backward(const ConvGeom& g, const double* x, const double* w,
                             const double* gout, double* gx, double* gw) {
  const int C = g.in_c;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const double* go = gout + ((static_cast<std::int64_t>(b) * g.out_h + oy) * g.out_w + ox) * C;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const std::int64_t xoff = ((static_cast<std::int64_t>(b) * g.in_h + iy) * g.in_w + ix) * C;
            const std::int64_t woff = (static_cast<std::int64_t>(ky) * g.kw + kx) * C;
            if (gx) {
              for (int c = 0; c < C; ++c) gx[xoff + c] += go[c] * w[woff + c];
            }
            if (gw) {
              for (int c = 0; c < C; ++c) gw[woff + c] += go[c] * x[xoff + c];
            }
          }
        }
      }
    }
  }
}

// Plain loops for arbitrary group counts.
template <bool Backward>
void conv_grouped(const ConvGeom& g, const double* x, const double* w, const double* gout,
                  double* out, double* gx, double* gw) {
  const int cout_g = g.out_c / g.groups;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const std::int64_t obase = ((static_cast<std::int64_t>(b) * g.out_h + oy) * g.out_w + ox) * g.out_c;
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const std::int64_t xbase = ((static_cast<std::int64_t>(b) * g.in_h + iy) * g.in_w + ix) * g.in_c;
            for (int co = 0; co < g.out_c; ++co) {
              const int grp = co / cout_g;
              for (int cl = 0; cl < g.cin_g; ++cl) {
                const std::int64_t xi = xbase + grp * g.cin_g + cl;
                const std::int64_t wi = ((static_cast<std::int64_t>(ky) * g.kw + kx) * g.cin_g + cl) * g.out_c + co;
                if constexpr (Backward) {
                  if (gx) gx[xi] += gout[obase + co] * w[wi];
                  if (gw) gw[wi] += gout[obase + co] * x[xi];
                } else {
                  out[obase + co] += x[xi] * w[wi];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (spec.groups < 1 || spec.stride < 1 || spec.padding < 0) {
    throw ConfigError("conv2d: invalid stride/padding/groups");
  }
  if (xs[3] % spec.groups != 0 || ws[3] % spec.groups != 0) {
    throw ConfigError("conv2d: channels " + std::to_string(xs[3]) + "->" + std::to_string(ws[3]) +
                      " not divisible by groups " + std::to_string(spec.groups));
  }
  if (ws[2] != xs[3] / spec.groups) {
    throw ConfigError("conv2d: weight " + to_string(ws) + " expects " + std::to_string(ws[2] * spec.groups) +
                      " input channels, got " + std::to_string(xs[3]));
  }
  if (bias.defined() && bias.shape() != Shape{1, 1, 1, ws[3]}) {
    throw ConfigError("conv2d: bias shape " + to_string(bias.shape()) + " does not match " +
                      std::to_string(ws[3]) + " output channels");
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], ws[2], ws[3], 0, 0,
             spec.stride, spec.padding, spec.groups};
  g.out_h = conv_out(g.in_h, g.kh, g.stride, g.pad);
  g.out_w = conv_out(g.in_w, g.kw, g.stride, g.pad);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(xs));
  }
  const Shape out_shape{g.batch, g.out_h, g.out_w, g.out_c};
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  if (bias.defined()) {
    const double* pb = bias.data().data();
    for (std::size_t i = 0; i < out.size(); i += g.out_c) std::copy(pb, pb + g.out_c, out.begin() + i);
  }
  const bool depthwise = g.groups == g.in_c && g.cin_g == 1 && g.out_c == g.in_c;
  if (g.groups == 1) {
    conv_dense_forward(g, x.data().data(), weight.data().data(), out.data());
  } else if (depthwise) {
    conv_depthwise_forward(g, x.data().data(), weight.data().data(), out.data());
  } else {
    conv_grouped<false>(g, x.data().data(), weight.data().data(), nullptr, out.data(), nullptr, nullptr);
  }
  return make_result(out_shape, std::move(out), {x, weight, bias},
                     [x, weight, bias, g, depthwise](Node& self) {
    const double* go = self.grad.data();
    double* gx = grad_of(x);
    double* gw = grad_of(weight);
    if (double* gb = grad_of(bias)) {
      for (std::size_t i = 0; i < self.grad.size(); i += g.out_c) {
        for (int c = 0; c < g.out_c; ++c) gb[c] += go[i + c];
      }
    }
    if (!gx && !gw) return;
    if (g.groups == 1) {
      conv_dense_backward(g, x.data().data(), weight.data().data(), go, gx, gw);
    } else if (depthwise) {
      conv_depthwise_backward(g, x.data().data(), weight.data().data(), go, gx, gw);
    } else {
      conv_grouped<true>(g, x.data().data(), weight.data().data(), go, nullptr, gx, gw);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int C = x.channels();
  if (gamma.shape() != Shape{1, 1, 1, C} || beta.shape() != Shape{1, 1, 1, C}) {
    throw ShapeError("layer_norm: gamma/beta must be (1, 1, 1, " + std::to_string(C) + ")");
  }
  const double eff_eps = std::max(eps, kLayerNormEpsFloor);
  const std::int64_t positions = x.size() / C;
  std::vector<double> xhat(static_cast<std::size_t>(x.size()));
  std::vector<double> rstd(static_cast<std::size_t>(positions));
  std::vector<double> out(xhat.size());
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  for (std::int64_t p = 0; p < positions; ++p) {
    const double* xi = px + p * C;
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xi[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (xi[c] - mu) * (xi[c] - mu);
    var /= C;
    const double r = 1.0 / std::sqrt(var + eff_eps);
    rstd[p] = r;
    for (int c = 0; c < C; ++c) {
      const double h = (xi[c] - mu) * r;
      xhat[p * C + c] = h;
      out[p * C + c] = h * pg[c] + pb[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, C, positions, xhat = std::move(xhat),
                      rstd = std::move(rstd)](Node& self) {
    double* gx = grad_of(x);
    double* gg = grad_of(gamma);
    double* gb = grad_of(beta);
    const double* go = self.grad.data();
    const double* pg = gamma.data().data();
    std::vector<double> dxhat(static_cast<std::size_t>(C));
    for (std::int64_t p = 0; p < positions; ++p) {
      const double* g = go + p * C;
      const double* h = xhat.data() + p * C;
      if (gg) for (int c = 0; c < C; ++c) gg[c] += g[c] * h[c];
      if (gb) for (int c = 0; c < C; ++c) gb[c] += g[c];
      if (!gx) continue;
      double mean_d = 0.0, mean_dh = 0.0;
      for (int c = 0; c < C; ++c) {
        dxhat[c] = g[c] * pg[c];
        mean_d += dxhat[c];
        mean_dh += dxhat[c] * h[c];
      }
      mean_d /= C;
      mean_dh /= C;
      for (int c = 0; c < C; ++c) gx[p * C + c] += rstd[p] * (dxhat[c] - mean_d - h[c] * mean_dh);
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  // Clamped so outputs stay strictly inside (0, 1) even for saturated inputs.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return unary(
      x,
      [lo, hi](double v) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::clamp(s, lo, hi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax_lastaxis(const Tensor& x) {
  const int n = x.dim(3);
  const std::int64_t rows = x.size() / n;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const double* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xi = px + r * n;
    double* yi = out.data() + r * n;
    const double mx = *std::max_element(xi, xi + n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (int j = 0; j < n; ++j) yi[j] /= s;
  }
  return make_result(x.shape(), std::move(out), {x}, [x, n, rows](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += g[j] * y[j];
      for (int j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::gelu: return gelu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::softmax_lastaxis: return softmax_lastaxis(x);
  }
  throw ContractError("unknown activation");
}

Tensor mean(const Tensor& x, std::array<bool, 4> reduce) {
  Shape out_shape = x.shape();
  double count = 1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (reduce[i]) {
      count *= out_shape[i];
      out_shape[i] = 1;
    }
  }
  const Broadcast bc = broadcast(x.shape(), out_shape, "mean");
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const double* px = x.data().data();
  // ia walks x; ib is the broadcast index into the reduced output.
  for_each_broadcast(bc, [&](auto, auto ia, auto ib) { out[ib] += px[ia]; });
  for (double& v : out) v /= count;
  return make_result(out_shape, std::move(out), {x}, [x, bc, count](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    const double* g = self.grad.data();
    for_each_broadcast(bc, [&](auto, auto ia, auto ib) { gx[ia] += g[ib] / count; });
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1, 1, 1, 1}, {s}, {x}, [x](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x}, [x](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::array<int, 4> perm) {
  const Shape& in = x.shape();
  const auto st = strides_of(in);
  Shape out_shape{};
  std::array<std::int64_t, 4> src_stride{};
  for (std::size_t i = 0; i < 4; ++i) {
    out_shape[i] = in[static_cast<std::size_t>(perm[i])];
    src_stride[i] = st[static_cast<std::size_t>(perm[i])];
  }
  std::vector<std::int64_t> index(static_cast<std::size_t>(x.size()));
  std::int64_t o = 0;
  for (int a = 0; a < out_shape[0]; ++a)
    for (int b = 0; b < out_shape[1]; ++b)
      for (int c = 0; c < out_shape[2]; ++c)
        for (int d = 0; d < out_shape[3]; ++d)
          index[o++] = a * src_stride[0] + b * src_stride[1] + c * src_stride[2] + d * src_stride[3];
  std::vector<double> out(index.size());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = px[index[i]];
  return make_result(out_shape, std::move(out), {x}, [x, index = std::move(index)](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis < 0 || axis > 3) throw ShapeError("concat: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i != ax && p.shape()[i] != parts[0].shape()[i]) {
        throw ShapeError("concat: mismatched shapes " + to_string(p.shape()) + " and " +
                         to_string(parts[0].shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  // Every tensor is a sequence of `outer` chunks, each `dim(axis) * inner` long.
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < 4; ++i) inner *= out_shape[i];
  const std::int64_t out_chunk = out_shape[ax] * inner;
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::int64_t offset = 0;
  for (const auto& p : inputs) {
    const std::int64_t chunk = p.shape()[ax] * inner;
    const double* src = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.begin() + o * out_chunk + offset);
    }
    offset += chunk;
  }
  return make_result(out_shape, std::move(out), inputs, [inputs, outer, inner, out_chunk, ax](Node& self) {
    std::int64_t offset = 0;
    for (const auto& p : inputs) {
      const std::int64_t chunk = p.shape()[ax] * inner;
      if (double* gp = grad_of(p)) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * out_chunk + offset;
          for (std::int64_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  if (axis < 0 || axis > 3) throw ShapeError("slice: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  if (start < 0 || length < 1 || start + length > x.shape()[ax]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for " + to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < 4; ++i) inner *= out_shape[i];
  const std::int64_t in_chunk = x.shape()[ax] * inner;
  const std::int64_t chunk = length * inner;
  const std::int64_t offset = start * inner;
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(px + o * in_chunk + offset, px + o * in_chunk + offset + chunk, out.begin() + o * chunk);
  }
  return make_result(out_shape, std::move(out), {x}, [x, outer, in_chunk, chunk, offset](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < chunk; ++i) gx[o * in_chunk + offset + i] += self.grad[o * chunk + i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as[0] != bs[0] || as[1] != bs[1]) {
    throw ShapeError("matmul: batch dims differ " + to_string(as) + " vs " + to_string(bs));
  }
  const int n = as[2], k = as[3];
  const int m = transpose_b ? bs[2] : bs[3];
  if ((transpose_b ? bs[3] : bs[2]) != k) {
    throw ShapeError("matmul: inner dims differ " + to_string(as) + " vs " + to_string(bs));
  }
  const Shape out_shape{as[0], as[1], n, m};
  const std::int64_t batches = static_cast<std::int64_t>(as[0]) * as[1];
  const std::int64_t a_sz = static_cast<std::int64_t>(n) * k;
  const std::int64_t b_sz = static_cast<std::int64_t>(k) * m;
  const std::int64_t o_sz = static_cast<std::int64_t>(n) * m;
  std::vector<double> out(static_cast<std::size_t>(batches * o_sz));
  for (std::int64_t i = 0; i < batches; ++i) {
    ConstMapMat am(a.data().data() + i * a_sz, n, k);
    MapMat om(out.data() + i * o_sz, n, m);
    if (transpose_b) {
      om.noalias() = am * ConstMapMat(b.data().data() + i * b_sz, m, k).transpose();
    } else {
      om.noalias() = am * ConstMapMat(b.data().data() + i * b_sz, k, m);
    }
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a, b, transpose_b, batches, n, k, m, a_sz, b_sz, o_sz](Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    for (std::int64_t i = 0; i < batches; ++i) {
      ConstMapMat gm(self.grad.data() + i * o_sz, n, m);
      ConstMapMat am(a.data().data() + i * a_sz, n, k);
      if (transpose_b) {
        ConstMapMat bm(b.data().data() + i * b_sz, m, k);
        if (ga) MapMat(ga + i * a_sz, n, k).noalias() += gm * bm;
        if (gb) MapMat(gb + i * b_sz, m, k).noalias() += gm.transpose() * am;
      } else {
        ConstMapMat bm(b.data().data() + i * b_sz, k, m);
        if (ga) MapMat(ga + i * a_sz, n, k).noalias() += gm * bm.transpose();
        if (gb) MapMat(gb + i * b_sz, k, m).noalias() += am.transpose() * gm;
      }
    }
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const Shape& s = x.shape();
  const Shape out_shape{s[0], s[1] * factor, s[2] * factor, s[3]};
  const int C = s[3];
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* px = x.data().data();
  std::int64_t o = 0;
  for (int b = 0; b < out_shape[0]; ++b)
    for (int y = 0; y < out_shape[1]; ++y)
      for (int xx = 0; xx < out_shape[2]; ++xx, o += C) {
        const double* src = px + ((static_cast<std::int64_t>(b) * s[1] + y / factor) * s[2] + xx / factor) * C;
        std::copy(src, src + C, out.begin() + o);
      }
  return make_result(out_shape, std::move(out), {x}, [x, s, out_shape, factor, C](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    std::int64_t o = 0;
    for (int b = 0; b < out_shape[0]; ++b)
      for (int y = 0; y < out_shape[1]; ++y)
        for (int xx = 0; xx < out_shape[2]; ++xx, o += C) {
          double* dst = gx + ((static_cast<std::int64_t>(b) * s[1] + y / factor) * s[2] + xx / factor) * C;
          for (int c = 0; c < C; ++c) dst[c] += self.grad[o + c];
        }
  });
}

namespace {

struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

Taps bilinear_taps(int in, int out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::max((o + 0.5) * ratio - 0.5, 0.0);
    const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    t.i0[o] = i0;
    t.i1[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - i0;
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ShapeError("resize_bilinear: empty output");
  const Shape& s = x.shape();
  const int C = s[3];
  const Shape out_shape{s[0], out_height, out_width, C};
  Taps ty = bilinear_taps(s[1], out_height);
  Taps tx = bilinear_taps(s[2], out_width);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const double* px = x.data().data();
  auto at = [&](int b, int y, int xx) {
    return ((static_cast<std::int64_t>(b) * s[1] + y) * s[2] + xx) * C;
  };
  std::int64_t o = 0;
  for (int b = 0; b < s[0]; ++b)
    for (int y = 0; y < out_height; ++y) {
      const double fy = ty.frac[y];
      for (int xx = 0; xx < out_width; ++xx, o += C) {
        const double fx = tx.frac[xx];
        const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
        const double* p00 = px + at(b, ty.i0[y], tx.i0[xx]);
        const double* p01 = px + at(b, ty.i0[y], tx.i1[xx]);
        const double* p10 = px + at(b, ty.i1[y], tx.i0[xx]);
        const double* p11 = px + at(b, ty.i1[y], tx.i1[xx]);
        for (int c = 0; c < C; ++c) out[o + c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  return make_result(out_shape, std::move(out), {x},
                     [x, s, C, out_height, out_width, ty = std::move(ty), tx = std::move(tx)](Node& self) {
    double* gx = grad_of(x);
    if (!gx) return;
    auto at = [&](int b, int y, int xx) {
      return ((static_cast<std::int64_t>(b) * s[1] + y) * s[2] + xx) * C;
    };
    std::int64_t o = 0;
    for (int b = 0; b < s[0]; ++b)
      for (int y = 0; y < out_height; ++y) {
        const double fy = ty.frac[y];
        for (int xx = 0; xx < out_width; ++xx, o += C) {
          const double fx = tx.frac[xx];
          const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
          double* p00 = gx + at(b, ty.i0[y], tx.i0[xx]);
          double* p01 = gx + at(b, ty.i0[y], tx.i1[xx]);
          double* p10 = gx + at(b, ty.i1[y], tx.i0[xx]);
          double* p11 = gx + at(b, ty.i1[y], tx.i1[xx]);
          const double* g = self.grad.data() + o;
          for (int c = 0; c < C; ++c) {
            p00[c] += w00 * g[c];
            p01[c] += w01 * g[c];
            p10[c] += w10 * g[c];
            p11[c] += w11 * g[c];
          }
        }
      }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_id) {
  const int K = logits.channels();
  const std::int64_t pixels = logits.size() / K;
  if (static_cast<std::int64_t>(labels.size()) != pixels) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  std::vector<double> prob(static_cast<std::size_t>(logits.size()));
  const double* pl = logits.data().data();
  double total = 0.0;
  std::int64_t valid = 0;
  for (std::int64_t p = 0; p < pixels; ++p) {
    const int t = labels[p];
    if (t == ignore_id) continue;
    if (t < 0 || t >= K) {
      throw ContractError("cross_entropy: label " + std::to_string(t) + " outside [0, " + std::to_string(K) + ")");
    }
    const double* l = pl + p * K;
    double* q = prob.data() + p * K;
    const double mx = *std::max_element(l, l + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) {
      q[k] = std::exp(l[k] - mx);
      s += q[k];
    }
    for (int k = 0; k < K; ++k) q[k] /= s;
    total += -(l[t] - mx - std::log(s));
    ++valid;
  }
  if (valid == 0) throw ContractError("cross_entropy: every pixel carries the ignore id");
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result({1, 1, 1, 1}, {total / static_cast<double>(valid)}, {logits},
                     [logits, K, pixels, valid, ignore_id, prob = std::move(prob),
                      label_copy = std::move(label_copy)](Node& self) {
    double* gl = grad_of(logits);
    if (!gl) return;
    const double scale = self.grad[0] / static_cast<double>(valid);
    for (std::int64_t p = 0; p < pixels; ++p) {
      const int t = label_copy[p];
      if (t == ignore_id) continue;
      for (int k = 0; k < K; ++k) gl[p * K + k] += scale * (prob[p * K + k] - (k == t ? 1.0 : 0.0));
    }
  });
}

}  // namespace rgbx::nn
