#include "rgbx/nn/attention.hpp"

#include "rgbx/errors.hpp"
#include "rgbx/nn/ops.hpp"

namespace rgbx::nn {

namespace {

// (B, h, w, C) -> (B, heads, h*w, C / heads)
Tensor split_heads(const Tensor& x, int heads) {
  const int B = x.batch(), N = x.height() * x.width(), C = x.channels();
  if (heads == 1) return reshape(x, {B, 1, N, C});
  return permute(reshape(x, {B, N, heads, C / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x, const Shape& like) {
  if (x.dim(1) == 1) return reshape(x, like);
  return reshape(permute(x, {0, 2, 1, 3}), like);
}

}  // namespace

Tensor spatial_attention(const Tensor& query, const Tensor& key, const Tensor& value, int heads,
                         double score_scale) {
  const Shape& qs = query.shape();
  if (key.shape() != value.shape()) {
    throw ShapeError("attention: key " + to_string(key.shape()) + " and value " + to_string(value.shape()) +
                     " differ");
  }
  if (qs[0] != key.batch() || qs[3] != key.channels()) {
    throw ShapeError("attention: query " + to_string(qs) + " incompatible with key " + to_string(key.shape()));
  }
  if (heads < 1 || qs[3] % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide " + std::to_string(qs[3]) +
                      " channels");
  }
  Tensor scores = matmul(split_heads(query, heads), split_heads(key, heads), /*transpose_b=*/true);
  if (score_scale != 1.0) scores = scale(scores, score_scale);
  Tensor weights = softmax_lastaxis(scores);
  return merge_heads(matmul(weights, split_heads(value, heads)), qs);
}

}  // namespace rgbx::nn
