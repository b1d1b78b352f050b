#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afformer/affine.hpp"
#include "afformer/flow.hpp"
#include "afformer/grid.hpp"
#include "afformer/nn.hpp"

namespace afformer {

// Projections for multi-head dot-product attention plus the feed-forward
// update F + LN(DWConv(F + MLP(m))).
struct AttentionLayer {
  std::size_t dim = 0;
  std::size_t heads = 1;
  Linear wq;
  Linear wk;
  Linear wv;
  Linear mlp1;
  Linear mlp2;
  DepthwiseConv2d dwconv;
  LayerNorm norm;

  static AttentionLayer seeded(std::size_t dim, std::size_t heads, std::uint64_t seed);
  // All weights zero; the FFN branch then reduces to LN(0) = beta.
  static AttentionLayer zeros(std::size_t dim, std::size_t heads);

  std::size_t head_dim() const { return dim / heads; }

  void export_to(const std::string& prefix, TensorMap& out) const;
  static AttentionLayer import_from(const std::string& prefix, const TensorMap& in);
};

struct AttentionOutput {
  Matrix message;            // n x dim, heads concatenated
  AttentionWeights weights;  // n x m x heads
};

// softmax(Q K^T / sqrt(d_head)) V per head. Keys with key_valid[j] == 0 are
// excluded from the softmax; rows with no valid key get a zero message.
AttentionOutput multi_head_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                                     const AttentionLayer& layer,
                                     std::span<const unsigned char> key_valid = {});

struct GlobalMessage {
  FeatureMap message;  // upsampled back to the source resolution
  AttentionWeights attn;
  std::size_t coarse_height = 0;
  std::size_t coarse_width = 0;
};

// Pools both maps twice (1/8 -> 1/32), attends source to target and
// upsamples the message x4.
GlobalMessage global_message(const FeatureMap& fs, const FeatureMap& ft, const AttentionLayer& layer);

FeatureMap ffn_update(const FeatureMap& fs, const FeatureMap& message, const AttentionLayer& layer);

struct GlobalBlockOutput {
  FeatureMap updated;
  FeatureMap message;
  AttentionWeights attn;
};

GlobalBlockOutput global_attention_block(const FeatureMap& fs, const FeatureMap& ft,
                                         const AttentionLayer& layer);

struct LocalAttentionOutput {
  FeatureMap message;
  // Per window: 0 when the window is invalid or none of its samples landed
  // inside the target map.
  std::vector<unsigned char> window_active;
};

// Each valid window's l*l source cells attend to alpha*l x alpha*l tokens
// bilinearly sampled from ft on the window's affine-projected patch.
LocalAttentionOutput local_deformable_attention(const FeatureMap& fs, const FeatureMap& ft,
                                                const AffineField& field,
                                                const AttentionLayer& layer, double alpha);

}  // namespace afformer
