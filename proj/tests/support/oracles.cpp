#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rgbx/nn/ops.hpp"

namespace rgbx::testing {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(nn::numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

void randomize(const nn::ParamList& params, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (const auto& p : params) {
    for (double& x : p->tensor.mutable_data()) x = dist(rng);
  }
}

void fill(const nn::ParamPtr& p, double value) {
  for (double& x : p->tensor.mutable_data()) x = value;
}

double rel_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double diff = 0.0, ref = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
    ref = std::max(ref, std::abs(b.data()[i]));
  }
  return diff / std::max(ref, 1e-300);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double diff = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
  return diff;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Tensor conv2d_loop(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding, int groups) {
  const int B = x.batch(), H = x.height(), W = x.width(), Cin = x.channels();
  const int kh = w.dim(0), kw = w.dim(1), cpg = w.dim(2), Cout = w.dim(3);
  const int opg = Cout / groups;
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  (void)Cin;
  Tensor out = Tensor::zeros({B, Ho, Wo, Cout});
  for (int n = 0; n < B; ++n)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        for (int co = 0; co < Cout; ++co) {
          const int g = co / opg;
          double acc = b.defined() ? b.at(0, 0, 0, co) : 0.0;
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
              const int y = i * stride - padding + u, xx = j * stride - padding + v;
              if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
              for (int ci = 0; ci < cpg; ++ci) acc += x.at(n, y, xx, g * cpg + ci) * w.at(u, v, ci, co);
            }
          out.at(n, i, j, co) = acc;
        }
  return out;
}

Tensor conv_loop(const Tensor& x, const nn::Conv2d& conv) {
  return conv2d_loop(x, conv.weight->tensor, conv.bias ? conv.bias->tensor : Tensor{}, conv.spec.stride,
                     conv.spec.padding, conv.spec.groups);
}

Tensor layer_norm_loop(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int C = x.channels();
  Tensor out = Tensor::zeros(x.shape());
  for (int n = 0; n < x.batch(); ++n)
    for (int i = 0; i < x.height(); ++i)
      for (int j = 0; j < x.width(); ++j) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += x.at(n, i, j, c);
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (x.at(n, i, j, c) - mu) * (x.at(n, i, j, c) - mu);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + std::max(eps, nn::kLayerNormEpsFloor));
        for (int c = 0; c < C; ++c) {
          out.at(n, i, j, c) = (x.at(n, i, j, c) - mu) * inv * gamma.at(0, 0, 0, c) + beta.at(0, 0, 0, c);
        }
      }
  return out;
}

namespace {

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = f(x.data()[i]);
  return out;
}

Tensor zip(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
  Tensor out = Tensor::zeros(a.shape());
  for (int n = 0; n < a.batch(); ++n)
    for (int i = 0; i < a.height(); ++i)
      for (int j = 0; j < a.width(); ++j)
        for (int c = 0; c < a.channels(); ++c) out.at(n, i, j, c) = f(a.at(n, i, j, c), b.at(n, i, j, c));
  return out;
}

double plus(double a, double b) { return a + b; }

const Tensor& param(const nn::ParamPtr& p) { return p->tensor; }

}  // namespace

Tensor relu_loop(const Tensor& x) {
  return map(x, [](double v) { return v > 0 ? v : 0.0; });
}

Tensor sigmoid_loop(const Tensor& x) {
  return map(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor concat_channels_loop(const Tensor& a, const Tensor& b) {
  const int Ca = a.channels(), Cb = b.channels();
  Tensor out = Tensor::zeros({a.batch(), a.height(), a.width(), Ca + Cb});
  for (int n = 0; n < a.batch(); ++n)
    for (int i = 0; i < a.height(); ++i)
      for (int j = 0; j < a.width(); ++j) {
        for (int c = 0; c < Ca; ++c) out.at(n, i, j, c) = a.at(n, i, j, c);
        for (int c = 0; c < Cb; ++c) out.at(n, i, j, Ca + c) = b.at(n, i, j, c);
      }
  return out;
}

double gelu_quadrature(double x) {
  // Phi(x) = 1/2 + integral_0^x phi(t) dt, composite Simpson with 4000 panels.
  const int n = 4000;
  const double h = x / n;
  auto phi = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = phi(0.0) + phi(x);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * phi(k * h);
  return x * (0.5 + s * h / 3.0);
}

Tensor gelu_quadrature(const Tensor& x) {
  return map(x, [](double v) { return gelu_quadrature(v); });
}

Tensor attention_loop(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double scale) {
  const int B = q.batch(), h = q.height(), w = q.width(), C = q.channels();
  const int N = h * w, M = k.height() * k.width(), d = C / heads;
  Tensor out = Tensor::zeros(q.shape());
  std::vector<double> s(static_cast<std::size_t>(M));
  for (int n = 0; n < B; ++n)
    for (int head = 0; head < heads; ++head)
      for (int t = 0; t < N; ++t) {
        const int ti = t / w, tj = t % w;
        for (int u = 0; u < M; ++u) {
          const int ui = u / k.width(), uj = u % k.width();
          double dot = 0.0;
          for (int c = head * d; c < (head + 1) * d; ++c) dot += q.at(n, ti, tj, c) * k.at(n, ui, uj, c);
          s[u] = scale * dot;
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (int c = head * d; c < (head + 1) * d; ++c) {
          double acc = 0.0;
          for (int u = 0; u < M; ++u) acc += s[u] / z * v.at(n, u / v.width(), u % v.width(), c);
          out.at(n, ti, tj, c) = acc;
        }
      }
  return out;
}

Tensor bilinear_loop(const Tensor& x, int out_h, int out_w) {
  const int H = x.height(), W = x.width();
  Tensor out = Tensor::zeros({x.batch(), out_h, out_w, x.channels()});
  auto source = [](int o, int in, int outn, int& i0, int& i1, double& frac) {
    double src = (o + 0.5) * in / outn - 0.5;
    if (src < 0) src = 0;
    i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    frac = src - i0;
  };
  for (int n = 0; n < x.batch(); ++n)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        int y0, y1, x0, x1;
        double fy, fx;
        source(i, H, out_h, y0, y1, fy);
        source(j, W, out_w, x0, x1, fx);
        for (int c = 0; c < x.channels(); ++c) {
          out.at(n, i, j, c) = (1 - fy) * ((1 - fx) * x.at(n, y0, x0, c) + fx * x.at(n, y0, x1, c)) +
                               fy * ((1 - fx) * x.at(n, y1, x0, c) + fx * x.at(n, y1, x1, c));
        }
      }
  return out;
}

double cross_entropy_loop(const Tensor& logits, std::span<const int> labels, int ignore_id) {
  double total = 0.0;
  int count = 0;
  std::size_t p = 0;
  for (int n = 0; n < logits.batch(); ++n)
    for (int i = 0; i < logits.height(); ++i)
      for (int j = 0; j < logits.width(); ++j, ++p) {
        if (labels[p] == ignore_id) continue;
        double mx = -INFINITY;
        for (int c = 0; c < logits.channels(); ++c) mx = std::max(mx, logits.at(n, i, j, c));
        double z = 0.0;
        for (int c = 0; c < logits.channels(); ++c) z += std::exp(logits.at(n, i, j, c) - mx);
        total += -(logits.at(n, i, j, labels[p]) - mx - std::log(z));
        ++count;
      }
  return total / count;
}

Tensor gfe_oracle(const encoder::GlobalFeatureEnhancer& m, const Tensor& f) {
  const int d = f.channels() / m.heads;
  const Tensor att =
      attention_loop(conv_loop(f, m.query), conv_loop(f, m.key), conv_loop(f, m.value), m.heads, 1.0 / std::sqrt(d));
  return layer_norm_loop(zip(att, f, plus), param(m.norm.gamma), param(m.norm.beta), m.norm.eps);
}

Tensor lfe_oracle(const encoder::LocalFeatureExtractor& m, const Tensor& f) {
  const Tensor h = relu_loop(conv_loop(relu_loop(conv_loop(f, m.expand)), m.dwconv));
  return zip(conv_loop(h, m.project), f, plus);
}

std::pair<Tensor, Tensor> cross_attend_oracle(const fusion::GlobalRecalibration& m, const Tensor& g_r,
                                              const Tensor& g_x) {
  const double kappa = param(m.kappa).item(), gamma = param(m.gamma).item();
  Tensor a_r = attention_loop(conv_loop(g_r, m.query_rgb), conv_loop(g_x, m.key_x), conv_loop(g_r, m.value_rgb), 1, 1.0);
  Tensor a_x = attention_loop(conv_loop(g_x, m.query_x), conv_loop(g_r, m.key_rgb), conv_loop(g_x, m.value_x), 1, 1.0);
  for (std::int64_t i = 0; i < a_r.size(); ++i) {
    a_r.mutable_data()[i] = kappa * a_r.data()[i] + g_r.data()[i];
    a_x.mutable_data()[i] = gamma * a_x.data()[i] + g_x.data()[i];
  }
  return {a_r, a_x};
}

Tensor gfrm_fuse_oracle(const fusion::GlobalRecalibration& m, const Tensor& g_r, const Tensor& g_x) {
  const Tensor reduced = relu_loop(conv_loop(concat_channels_loop(g_r, g_x), m.reduce));
  return layer_norm_loop(reduced, param(m.norm.gamma), param(m.norm.beta), m.norm.eps);
}

Tensor channel_attend_oracle(const fusion::GlobalRecalibration& m, const Tensor& f_c) {
  const int C = f_c.channels();
  Tensor out = Tensor::zeros(f_c.shape());
  for (int n = 0; n < f_c.batch(); ++n) {
    Tensor z = Tensor::zeros({1, 1, 1, C});
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int i = 0; i < f_c.height(); ++i)
        for (int j = 0; j < f_c.width(); ++j) s += f_c.at(n, i, j, c);
      z.at(0, 0, 0, c) = s / (f_c.height() * f_c.width());
    }
    const Tensor gate = sigmoid_loop(conv_loop(z, m.channel_gate));
    for (int i = 0; i < f_c.height(); ++i)
      for (int j = 0; j < f_c.width(); ++j)
        for (int c = 0; c < C; ++c) out.at(n, i, j, c) = f_c.at(n, i, j, c) * (1.0 + gate.at(0, 0, 0, c));
  }
  return out;
}

Tensor lffm_oracle(const fusion::LocalFeatureFusion& m, const Tensor& l_r, const Tensor& l_x) {
  const Tensor cat = concat_channels_loop(l_r, l_x);
  const Tensor widened = m.expand ? conv_loop(cat, *m.expand) : concat_channels_loop(cat, cat);
  const Tensor h = conv_loop(widened, m.dwconv);
  const int half = h.channels() / 2;
  Tensor prod = Tensor::zeros({h.batch(), h.height(), h.width(), half});
  for (int n = 0; n < h.batch(); ++n)
    for (int i = 0; i < h.height(); ++i)
      for (int j = 0; j < h.width(); ++j)
        for (int c = 0; c < half; ++c) {
          prod.at(n, i, j, c) = h.at(n, i, j, c) * gelu_quadrature(h.at(n, i, j, half + c));
        }
  return conv_loop(prod, m.project);
}

Tensor feim_oracle(const fusion::FeatureIntegration& m, const Tensor& f_g, const Tensor& f_l) {
  const Tensor s = zip(f_g, f_l, plus);
  const int B = s.batch(), h = s.height(), w = s.width(), C = s.channels();
  Tensor out = Tensor::zeros(s.shape());
  for (int n = 0; n < B; ++n) {
    // Pooled descriptors stacked along space: rows 0..h-1 hold Z^h, rows
    // h..h+w-1 hold Z^w.
    Tensor z = Tensor::zeros({1, h + w, 1, C});
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < h; ++i) {
        double acc = 0.0;
        for (int j = 0; j < w; ++j) acc += s.at(n, i, j, c);
        z.at(0, i, 0, c) = acc / w;
      }
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int i = 0; i < h; ++i) acc += s.at(n, i, j, c);
        z.at(0, h + j, 0, c) = acc / h;
      }
    }
    Tensor gates = Tensor::zeros({1, h + w, 1, C});
    if (m.gate_w) {
      Tensor zh = Tensor::zeros({1, h, 1, C}), zw = Tensor::zeros({1, w, 1, C});
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < h; ++i) zh.at(0, i, 0, c) = z.at(0, i, 0, c);
        for (int j = 0; j < w; ++j) zw.at(0, j, 0, c) = z.at(0, h + j, 0, c);
      }
      const Tensor gh = sigmoid_loop(conv_loop(zh, m.gate)), gw = sigmoid_loop(conv_loop(zw, *m.gate_w));
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < h; ++i) gates.at(0, i, 0, c) = gh.at(0, i, 0, c);
        for (int j = 0; j < w; ++j) gates.at(0, h + j, 0, c) = gw.at(0, j, 0, c);
      }
    } else {
      gates = sigmoid_loop(conv_loop(z, m.gate));
    }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < C; ++c) {
          out.at(n, i, j, c) = s.at(n, i, j, c) * gates.at(0, i, 0, c) * gates.at(0, h + j, 0, c);
        }
  }
  return out;
}

std::vector<ClassCounts> count_loop(std::span<const int> pred, std::span<const int> truth, int K, int ignore_id) {
  std::vector<ClassCounts> counts(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] == ignore_id) continue;
      const bool t = truth[i] == k, p = pred[i] == k;
      if (t && p) ++counts[k].tp;
      if (!t && p) ++counts[k].fp;
      if (t && !p) ++counts[k].fn;
    }
  }
  return counts;
}

double adamw_scalar_oracle(double p, double g, double lr, double beta1, double beta2, double eps, double wd, int step,
                           double& m, double& v) {
  p = p * (1.0 - lr * wd);
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g * g;
  const double m_hat = m / (1.0 - std::pow(beta1, step));
  const double v_hat = v / (1.0 - std::pow(beta2, step));
  return p - lr * m_hat / (std::sqrt(v_hat) + eps);
}

Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return nn::sum(nn::mul(out, weights)); }

std::vector<GradTarget> targets_of(const nn::ParamList& params) {
  std::vector<GradTarget> out;
  for (const auto& p : params) out.push_back({p->name, p->tensor});
  return out;
}

GradCheck grad_check(const std::function<Tensor()>& loss_fn, const std::vector<GradTarget>& targets,
                     std::mt19937_64& rng, int per_tensor, double h) {
  for (const auto& t : targets) {
    Tensor leaf = t.tensor;
    leaf.zero_grad();
  }
  nn::backward(loss_fn());

  GradCheck result;
  nn::NoGradGuard no_grad;
  for (const auto& t : targets) {
    Tensor leaf = t.tensor;
    const auto n = static_cast<std::size_t>(leaf.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (per_tensor > 0 && static_cast<std::size_t>(per_tensor) < n) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(per_tensor));
    }
    for (std::size_t i : idx) {
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double saved = leaf.data()[i];
      auto at = [&](double offset) {
        leaf.mutable_data()[i] = saved + offset;
        return loss_fn().item();
      };
      // five-point stencil: truncation error O(h^4)
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      leaf.mutable_data()[i] = saved;
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        std::ostringstream os;
        os.precision(10);
        os << t.name << "[" << i << "]: analytic " << analytic << " vs numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace rgbx::testing
