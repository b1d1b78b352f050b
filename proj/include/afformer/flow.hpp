#pragma once

#include <cstdint>

#include "afformer/flow_field.hpp"
#include "afformer/grid.hpp"
#include "afformer/nn.hpp"
#include "afformer/tensor_io.hpp"
#include "afformer/warp.hpp"

namespace afformer {

// Attention probabilities, layout (source i, target j, head h).
class AttentionWeights {
 public:
  AttentionWeights() = default;
  AttentionWeights(std::size_t n_source, std::size_t n_target, std::size_t heads)
      : n_source_(n_source), n_target_(n_target), heads_(heads),
        data_(n_source * n_target * heads, 0.0) {}

  std::size_t n_source() const { return n_source_; }
  std::size_t n_target() const { return n_target_; }
  std::size_t heads() const { return heads_; }

  double& at(std::size_t i, std::size_t j, std::size_t h) {
    return data_[(i * n_target_ + j) * heads_ + h];
  }
  double at(std::size_t i, std::size_t j, std::size_t h) const {
    return data_[(i * n_target_ + j) * heads_ + h];
  }

  // Mean over heads, n_source x n_target.
  Matrix head_mean() const;

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t n_source_ = 0;
  std::size_t n_target_ = 0;
  std::size_t heads_ = 0;
  std::vector<double> data_;
};

// Row i of the result is sum_j mean_h(attn(i, j, h)) * pos(j), laid out on
// the source grid.
FeatureMap aggregate_positions(const AttentionWeights& attn, const PositionalEncoding& pos,
                               std::size_t source_height, std::size_t source_width, int scale = 32);

// Two 3x3 convolutions (hidden width 32, ReLU between) mapping aggregated
// positional features to (dx, dy, wx, wy) at 1/32 scale.
struct FlowDecoder {
  static constexpr std::size_t kHidden = 32;

  Conv2d conv1;
  Conv2d conv2;

  static FlowDecoder seeded(std::size_t in_channels, std::uint64_t seed);
  static FlowDecoder zeros(std::size_t in_channels);

  void export_to(const std::string& prefix, TensorMap& out) const;
  static FlowDecoder import_from(const std::string& prefix, const TensorMap& in);
};

// Runs the decoder at the aggregated map's resolution, bilinearly upsamples
// the four channels by `upsample` and adds each 1/8 cell's own coordinate to
// the offset channels, so a zero decoder yields the identity flow with w = 0.
FlowField decode_flow(const FeatureMap& aggregated, const FlowDecoder& decoder,
                      std::size_t upsample = 4);

// Exact warped coordinates of every cell; w channels set to `log_std`.
FlowField flow_oracle_from_warp(const Warp& warp, std::size_t height, std::size_t width,
                                double log_std = 0.0);

// height x width x 4, channel order (ux, uy, wx, wy).
Tensor flow_to_tensor(const FlowField& flow);
FlowField flow_from_tensor(const Tensor& t);

}  // namespace afformer
