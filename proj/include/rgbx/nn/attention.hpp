#pragma once

#include "rgbx/nn/tensor.hpp"

namespace rgbx::nn {

// Scaled dot-product attention over spatial tokens. query/key/value are
// (B, h, w, C) maps whose h*w positions are the tokens; channels are split
// into `heads` equal groups. Keys and values may come from a different map
// than the query as long as the token counts match.
//
//   out = Softmax(score_scale * Q K^T) V
//
// Returns a (B, h, w, C) map laid out like the query.
Tensor spatial_attention(const Tensor& query, const Tensor& key, const Tensor& value, int heads,
                         double score_scale);

}  // namespace rgbx::nn
