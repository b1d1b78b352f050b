#include "afformer/flow.hpp"

#include <string>

#include "afformer/error.hpp"
#include "afformer/random.hpp"

namespace afformer {

FlowField::FlowField(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height * width * 4) throw DimensionError("flow field data length mismatch");
}

Matrix AttentionWeights::head_mean() const {
  Matrix m(n_source_, n_target_);
  const double inv = 1.0 / static_cast<double>(heads_);
  for (std::size_t i = 0; i < n_source_; ++i) {
    for (std::size_t j = 0; j < n_target_; ++j) {
      double s = 0.0;
      for (std::size_t h = 0; h < heads_; ++h) s += at(i, j, h);
      m(i, j) = s * inv;
    }
  }
  return m;
}

FeatureMap aggregate_positions(const AttentionWeights& attn, const PositionalEncoding& pos,
                               std::size_t source_height, std::size_t source_width, int scale) {
  if (pos.positions() != attn.n_target()) {
    throw InputError("positional encoding covers " + std::to_string(pos.positions()) +
                     " targets, attention has " + std::to_string(attn.n_target()));
  }
  if (source_height * source_width != attn.n_source()) {
    throw InputError("source grid does not match attention rows");
  }
  const Matrix mean = attn.head_mean();
  FeatureMap out(source_height, source_width, pos.dim(), scale);
  for (std::size_t i = 0; i < attn.n_source(); ++i) {
    double* dst = out.data().data() + i * pos.dim();
    for (std::size_t j = 0; j < attn.n_target(); ++j) {
      const double w = mean(i, j);
      if (w == 0.0) continue;
      std::span<const double> p = pos.at(j);
      for (std::size_t c = 0; c < pos.dim(); ++c) dst[c] += w * p[c];
    }
  }
  return out;
}

FlowDecoder FlowDecoder::seeded(std::size_t in_channels, std::uint64_t seed) {
  return {Conv2d::seeded(in_channels, kHidden, derive_seed(seed, 1)),
          Conv2d::seeded(kHidden, 4, derive_seed(seed, 2))};
}

FlowDecoder FlowDecoder::zeros(std::size_t in_channels) {
  return {Conv2d::zeros(in_channels, kHidden), Conv2d::zeros(kHidden, 4)};
}

void FlowDecoder::export_to(const std::string& prefix, TensorMap& out) const {
  conv1.export_to(prefix + ".conv1", out);
  conv2.export_to(prefix + ".conv2", out);
}

FlowDecoder FlowDecoder::import_from(const std::string& prefix, const TensorMap& in) {
  return {Conv2d::import_from(prefix + ".conv1", in), Conv2d::import_from(prefix + ".conv2", in)};
}

FlowField decode_flow(const FeatureMap& aggregated, const FlowDecoder& decoder,
                      std::size_t upsample) {
  FeatureMap hidden = decoder.conv1.forward(aggregated);
  relu_inplace(hidden);
  const FeatureMap coarse = decoder.conv2.forward(hidden);
  const FeatureMap fine = upsample == 1 ? coarse : upsample_bilinear(coarse, upsample);
  FlowField flow(fine.height(), fine.width());
  for (std::size_t r = 0; r < fine.height(); ++r) {
    for (std::size_t c = 0; c < fine.width(); ++c) {
      flow.ux(r, c) = static_cast<double>(c) + fine.at(r, c, 0);
      flow.uy(r, c) = static_cast<double>(r) + fine.at(r, c, 1);
      flow.wx(r, c) = fine.at(r, c, 2);
      flow.wy(r, c) = fine.at(r, c, 3);
    }
  }
  return flow;
}

FlowField flow_oracle_from_warp(const Warp& warp, std::size_t height, std::size_t width,
                                double log_std) {
  FlowField flow(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const Vec2 t = warp.apply({static_cast<double>(c), static_cast<double>(r)});
      flow.ux(r, c) = t.x;
      flow.uy(r, c) = t.y;
      flow.wx(r, c) = log_std;
      flow.wy(r, c) = log_std;
    }
  }
  return flow;
}

Tensor flow_to_tensor(const FlowField& flow) {
  Tensor t;
  t.dims = {flow.height(), flow.width(), 4};
  t.values = flow.data();
  return t;
}

FlowField flow_from_tensor(const Tensor& t) {
  if (t.dims.size() != 3 || t.dims[2] != 4) throw DimensionError("flow tensor must be H x W x 4");
  return FlowField(t.dims[0], t.dims[1], t.values);
}

}  // namespace afformer
