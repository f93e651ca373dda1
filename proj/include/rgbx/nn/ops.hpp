#pragma once

#include <array>
#include <span>
#include <vector>

#include "rgbx/nn/tensor.hpp"

namespace rgbx::nn {

// Elementwise arithmetic with size-1 broadcasting on any axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// weight is (kh, kw, in_channels / groups, out_channels); bias is (1, 1, 1,
// out_channels) or undefined. Output spatial size is
// (in + 2 * padding - k) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

// Smallest epsilon used by layer_norm regardless of the requested one, so a
// zero-variance position never divides by zero.
inline constexpr double kLayerNormEpsFloor = 1e-12;

// Normalizes over the channel axis at every (b, h, w) position. gamma and
// beta are (1, 1, 1, C).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

enum class Activation { relu, gelu, sigmoid, softmax_lastaxis };

Tensor activation(const Tensor& x, Activation kind);
Tensor relu(const Tensor& x);
// Exact form x * Phi(x) with the Gaussian CDF, not the tanh approximation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_lastaxis(const Tensor& x);

// Mean over the flagged axes; reduced axes are kept with size 1.
Tensor mean(const Tensor& x, std::array<bool, 4> reduce);
Tensor sum(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
// Output axis i takes input axis perm[i].
Tensor permute(const Tensor& x, std::array<int, 4> perm);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);

// Batched over axes 0 and 1. a is (B, G, n, k). With transpose_b == false, b
// is (B, G, k, m); otherwise b is (B, G, m, k). Result is (B, G, n, m).
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor upsample_nearest(const Tensor& x, int factor);
// Half-pixel-centre bilinear resampling (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int out_height, int out_width);

// Mean negative log-softmax over pixels whose label differs from ignore_id.
// labels holds B*H*W class ids in (b, h, w) order.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, int ignore_id);

}  // namespace rgbx::nn
