#pragma once

#include <cstddef>
#include <vector>

#include "afformer/affine.hpp"
#include "afformer/flow_field.hpp"
#include "afformer/grid.hpp"
#include "afformer/tensor_io.hpp"

namespace afformer {

// Logit scales for the global (alpha) and local (beta) messages and the
// uncertainty sensitivity gamma. Not to be confused with the patch
// expansion factor used by deformable attention.
class FusionParams {
 public:
  FusionParams() = default;
  // Throws ConfigError for gamma < 0 or non-finite values.
  FusionParams(double alpha, double beta, double gamma);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }

 private:
  double alpha_ = 1.0;
  double beta_ = 1.0;
  double gamma_ = 1.0;
};

struct FusionWeight {
  double p1 = 1.0;  // global
  double p2 = 0.0;  // local
};

// [p1, p2] = softmax(alpha, beta / (1 + gamma * relu(sigma_x + sigma_y))).
FusionWeight fusion_weights(const FusionParams& params, double sigma_x, double sigma_y);

struct FusionScores {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> p1;
  std::vector<double> p2;
};

FusionScores fusion_weights(const FusionParams& params, const FlowField& flow);

// Cell validity from the windows of an affine field (and optionally the
// per-window activity of local attention). Cells outside any window are
// invalid.
std::vector<unsigned char> cell_mask_from_field(const AffineField& field, std::size_t height,
                                                std::size_t width,
                                                const std::vector<unsigned char>& window_active = {});

// m = p1 * mg + p2 * ml; cells with local_valid == 0 take p1 = 1, p2 = 0.
// The weights actually applied are written back into `scores` when given.
FeatureMap fuse_messages(const FeatureMap& mg, const FeatureMap& ml, const FusionScores& weights,
                         const std::vector<unsigned char>& local_valid,
                         FusionScores* applied = nullptr);

// height x width map of p2.
Tensor fusion_scores_to_tensor(const FusionScores& scores);

}  // namespace afformer
