#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afformer/affine.hpp"
#include "afformer/grid.hpp"
#include "afformer/losses.hpp"
#include "afformer/matching.hpp"
#include "afformer/warp.hpp"

namespace afformer {

struct WarpSpec {
  WarpKind kind = WarpKind::kAffine;
  AffineComponents components;  // affine, or left half of piecewise
  AffineComponents right;       // piecewise only
  double split_x = 0.0;         // piecewise only, in source cells
  Homography homography;
  double noise_sigma = 0.0;  // cells of feature noise (std of additive gaussian)
  std::uint64_t seed = 0;

  // Throws SpecError for out-of-box affine components or a non-invertible map.
  Warp to_warp() const;
};

struct Scenario {
  std::size_t height = 64;  // 1/8-scale cells
  std::size_t width = 64;
  std::size_t channels = 32;
  std::size_t window = 4;
  WarpSpec warp;
};

struct SyntheticPair {
  FeatureMap fa;
  FeatureMap fb;
  FlowField gt_flow;
  AffineField gt_field;
  GroundTruth gt;
};

// fa: per channel a sum of 8 seeded random 2D sinusoids (0.05 to 0.25
// cycles per cell, standard deviation 8). fb: fa bilinearly
// resampled through the inverse warp plus gaussian noise. Ground truth is
// computed from the exact warp.
SyntheticPair gen_pair(const Scenario& scenario);

struct FlowMetrics {
  double mean_epe = 0.0;
  double median_epe = 0.0;
  double pct_within_1 = 0.0;
  double pct_within_2 = 0.0;
  double pct_within_5 = 0.0;
  std::size_t count = 0;
};

// Endpoint error over cells with mask != 0. Throws MetricError on an empty mask.
FlowMetrics eval_flow(const FlowField& pred, const FlowField& gt, const std::vector<unsigned char>& mask);

struct MatchMetrics {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  // false when there were no predictions; precision is then reported as 0.
  bool precision_defined = false;
};

// A prediction is correct when its target cell lies within tol_cells of the
// ground-truth coordinate of its source.
MatchMetrics eval_matches(const MatchSet& pred, const GroundTruth& gt, double tol_cells = 2.0);
// Same, from (source cell, target cell) pairs on a grid `source_width` wide.
MatchMetrics eval_match_cells(std::span<const std::pair<Vec2, Vec2>> pairs, const GroundTruth& gt,
                              std::size_t source_width, double tol_cells = 2.0);

// JSON scenario documents; unknown keys are rejected.
Scenario scenario_from_json(const std::string& text, const std::string& source = "<scenario>");
std::string scenario_to_json(const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& path);

// Writes fa, fb, gt_flow, gt_flow_mask, gt_field, gt_matches, gt_coords as
// AFTN tensors, scenario.json and report.json.
void write_pair(const std::filesystem::path& dir, const Scenario& scenario, const SyntheticPair& pair);

struct LoadedPair {
  Scenario scenario;
  SyntheticPair pair;
};
LoadedPair read_pair(const std::filesystem::path& dir);

Tensor feature_map_to_tensor(const FeatureMap& f);
FeatureMap feature_map_from_tensor(const Tensor& t, int scale = 8);

}  // namespace afformer
