#include "rgbx/decoder.hpp"

#include "rgbx/errors.hpp"

namespace rgbx::decoder {

SegmentationHead::SegmentationHead(nn::ParamList& sink, std::mt19937_64& rng, const std::array<int, 4>& channels,
                                   int num_classes) {
  nn::ParamBuilder pb(sink, rng, nn::ParamGroup::decoder, "decoder");
  const int width = channels[0];
  for (int i = 0; i < 4; ++i) {
    lateral.push_back(nn::make_conv(pb, "lateral" + std::to_string(i + 1), channels[i], width, 1));
  }
  smooth = nn::make_conv(pb, "smooth", width, width, 3, {.stride = 1, .padding = 1});
  classifier = nn::make_conv(pb, "classifier", width, num_classes, 1);
}

Tensor SegmentationHead::forward(const fusion::FusedPyramid& fused) const {
  Tensor top = lateral[3](fused[3]);
  for (int i = 2; i >= 0; --i) {
    top = nn::add(lateral[i](fused[i]), nn::upsample_nearest(top, 2));
  }
  const Tensor logits = classifier(nn::relu(smooth(top)));
  return nn::resize_bilinear(logits, 4 * logits.height(), 4 * logits.width());
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  return nn::cross_entropy(logits, labels, kIgnoreId);
}

std::vector<int> argmax_classes(const Tensor& logits) {
  const int K = logits.channels();
  const auto data = logits.data();
  std::vector<int> out(static_cast<std::size_t>(logits.size() / K));
  for (std::size_t p = 0; p < out.size(); ++p) {
    int best = 0;
    for (int k = 1; k < K; ++k) {
      if (data[p * K + k] > data[p * K + best]) best = k;
    }
    out[p] = best;
  }
  return out;
}

}  // namespace rgbx::decoder
