#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afformer/affine.hpp"
#include "afformer/attention.hpp"
#include "afformer/flow.hpp"
#include "afformer/fusion.hpp"
#include "afformer/losses.hpp"
#include "afformer/matching.hpp"

namespace afformer {

enum class BlockKind { kSelf, kCross };

struct PipelineConfig {
  std::size_t channels = 256;
  std::size_t heads = 8;
  std::size_t num_blocks = 4;
  std::size_t window = 4;        // l
  double alpha = 2.0;            // target patch expansion
  std::size_t refine_window = 5;  // w
  double tau = 10.0;
  double match_threshold = 0.2;
  double fusion_alpha = 1.0;
  double fusion_beta = 1.0;
  double fusion_gamma = 1.0;
  LossWeights loss;
  std::uint64_t seed = 0;
  std::vector<BlockKind> block_order{BlockKind::kSelf, BlockKind::kCross};

  // Full-size defaults above; `desk` is the 32-channel, 4-head, 2-block
  // configuration used for synthetic runs.
  static PipelineConfig desk();

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Strict JSON: "version": 1 is required and unknown keys are errors.
PipelineConfig config_from_json(const std::string& text, const std::string& source = "<config>");
std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

// All network weights, seeded from PipelineConfig::seed. Cross blocks share
// their weights between the two directions.
struct PipelineWeights {
  std::vector<AttentionLayer> self_layers;
  std::vector<AttentionLayer> cross_global;
  std::vector<AttentionLayer> cross_local;
  std::vector<FlowDecoder> decoders;
  Refiner refiner;

  static PipelineWeights seeded(const PipelineConfig& cfg);
  TensorMap export_tensors() const;
  static PipelineWeights import_tensors(const TensorMap& tensors, const PipelineConfig& cfg);
};

// Per cross block, for the A -> B direction.
struct BlockTrace {
  FlowField flow;
  AffineField field;
  FusionScores fusion;
};

struct PipelineResult {
  MatchSet coarse;
  MatchSet matches;  // refined
  std::vector<BlockTrace> blocks;
  FeatureMap final_a;
  FeatureMap final_b;
  // The 1/2-scale maps were synthesized by upsampling the 1/8 inputs.
  bool fine_maps_upsampled = false;
};

struct FineMaps {
  FeatureMap fa2;
  FeatureMap fb2;
};

PipelineResult run_pipeline(const FeatureMap& fa, const FeatureMap& fb, const PipelineConfig& cfg,
                            const std::optional<FineMaps>& fine = std::nullopt);
PipelineResult run_pipeline(const FeatureMap& fa, const FeatureMap& fb, const PipelineConfig& cfg,
                            const PipelineWeights& weights,
                            const std::optional<FineMaps>& fine = std::nullopt);

}  // namespace afformer
