#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afformer/flow_field.hpp"
#include "afformer/grid.hpp"

namespace afformer {

struct LossWeights {
  double lambda1 = 1.0;  // spatial softmax; 1 outdoor, 5 indoor
  double lambda2 = 0.1;  // flow
  double gamma_focal = 2.0;

  void validate() const;
};

// Ground-truth supervision for one pair.
struct GroundTruth {
  // One-to-one (source, target) index pairs.
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  // Per source token: ground-truth target coordinate in target cells.
  std::vector<Vec2> coords;
  std::vector<unsigned char> coord_valid;
  FlowField flow;
  std::vector<unsigned char> flow_mask;
};

enum class NegativeSet {
  kMatchedRows,  // non-gt entries sharing a row or column with a gt match
  kFullGrid,
};

struct MatrixLoss {
  double value = 0.0;
  Matrix grad;
};

inline constexpr double kFocalEps = 1e-7;

// -sum_{gt} (1-S)^g log S - sum_{neg} S^g log(1-S), S clamped to
// [eps, 1-eps]; the gradient is zero where the clamp is active.
MatrixLoss focal_loss(const Matrix& s, std::span<const std::pair<std::size_t, std::size_t>> gt,
                      double gamma_focal, NegativeSet negatives = NegativeSet::kMatchedRows);

// (1/|M|) sum_i || sum_j S(i,j) P_j - P_i^gt ||^2 over gt sources i. With
// `renormalize` each row of S is divided by its sum first.
MatrixLoss spatial_softmax_loss(const Matrix& s, std::span<const Vec2> target_coords,
                                const GroundTruth& gt, bool renormalize = false);

struct FlowLoss {
  double value = 0.0;
  FlowField grad;  // d/dux, d/duy, d/dwx, d/dwy per cell
};

// Mean over masked cells of wx + wy + 0.5 e^{-2wx} (x_gt-ux)^2 +
// 0.5 e^{-2wy} (y_gt-uy)^2. Empty mask gives zero.
FlowLoss flow_nll(const FlowField& flow, const FlowField& gt_flow,
                  const std::vector<unsigned char>& mask);

struct VectorLoss {
  double value = 0.0;
  std::vector<Vec2> grad;
};

// Mean squared Euclidean distance.
VectorLoss fine_l2_loss(std::span<const Vec2> pred, std::span<const Vec2> gt);

struct LossParts {
  double ce = 0.0;
  double fine = 0.0;
  double cs = 0.0;
  double flow = 0.0;
};

// ce + fine + lambda1 * cs + lambda2 * flow.
double total_loss(const LossParts& parts, const LossWeights& weights);

struct GradcheckRow {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central finite differences (h = 1e-5) against every analytic gradient on
// `instances` seeded random problems per loss.
std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t instances = 20);

// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

}  // namespace afformer
