#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afformer/grid.hpp"
#include "afformer/nn.hpp"

namespace afformer {

struct AssignmentMatrix {
  double tau = 1.0;
  Matrix scores;  // n x m, each entry in [0, 1]

  std::size_t n() const { return scores.rows(); }
  std::size_t m() const { return scores.cols(); }
};

enum MatchFlags : std::uint32_t {
  kMatchNone = 0,
  // Refinement window fell outside the fine map; residual left at zero.
  kMatchUnrefined = 1u << 0,
};

struct Match {
  std::size_t source_index = 0;
  std::size_t target_index = 0;
  double score = 0.0;
  Vec2 residual{};  // 1/2-scale cells
  Vec2 refined{};   // target coordinate at 1/2 scale
  std::uint32_t flags = kMatchNone;
};

// Matches sorted by source index. The widths map flat token indices back to
// (col, row) on the coarse grids.
struct MatchSet {
  std::vector<Match> matches;
  std::size_t source_width = 0;
  std::size_t target_width = 0;

  std::size_t size() const { return matches.size(); }
  Vec2 source_cell(const Match& m) const;
  Vec2 target_cell(const Match& m) const;
};

// C(i, j) = tau * <fa_i, fb_j>.
Matrix correlation(const Matrix& fa, const Matrix& fb, double tau);

// S = row_softmax(C) .* col_softmax(C).
AssignmentMatrix dual_softmax(const Matrix& c, double tau = 1.0);

// Mutual argmax (lowest index wins ties) whose score exceeds `threshold`.
MatchSet mnn_filter(const AssignmentMatrix& s, double threshold = 0.2, std::size_t source_width = 0,
                    std::size_t target_width = 0);

// correlation feature (w*w channels) -> 3x3 conv -> ReLU -> 3x3 conv -> 2
// channels; the center cell's output squashed by tanh * (w - 1) / 2.
struct Refiner {
  static constexpr std::size_t kHidden = 32;

  std::size_t window = 5;
  Conv2d conv1;
  Conv2d conv2;

  static Refiner seeded(std::size_t window, std::uint64_t seed);
  static Refiner zeros(std::size_t window);

  Vec2 predict(const FeatureMap& correlation_feature) const;

  void export_to(const std::string& prefix, TensorMap& out) const;
  static Refiner import_from(const std::string& prefix, const TensorMap& in);
};

// w x w grid over the source window; channel b of cell a is the cosine
// similarity between source cell a and target window cell b (row-major).
// Centers are integer 1/2-scale coordinates; windows must lie inside.
FeatureMap refinement_correlation(const FeatureMap& fa2, const FeatureMap& fb2, Vec2 source_center,
                                  Vec2 target_center, std::size_t window);

// Coarse cell (col, row) maps to 1/2-scale coordinate (ratio*col, ratio*row).
// Matches whose windows leave the fine maps are kept unrefined and flagged.
MatchSet fine_refine(const MatchSet& coarse, const FeatureMap& fa2, const FeatureMap& fb2,
                     const Refiner& refiner, std::size_t ratio = 4);

// One JSON object per line with coordinates in full-image pixels.
std::string match_to_json_line(const MatchSet& set, const Match& m, int coarse_scale = 8,
                               int fine_scale = 2);
void write_matches_jsonl(const std::filesystem::path& path, const MatchSet& set,
                         int coarse_scale = 8, int fine_scale = 2);

// Parsed back as coarse cells; throws FormatError with the byte offset of
// the offending line.
struct MatchRecord {
  Vec2 source_px;
  Vec2 target_px;
  double score = 0.0;
  Vec2 residual_px;
  Vec2 refined_px;
  std::vector<std::string> flags;
};
std::vector<MatchRecord> read_matches_jsonl(const std::filesystem::path& path);

}  // namespace afformer
