#pragma once

#include <array>
#include <optional>

#include "afformer/affine.hpp"

namespace afformer {

// Row-major 3x3 projective map acting on (x, y, 1).
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Vec2 apply(Vec2 p) const;
  double determinant() const;
  Homography inverse() const;
};

enum class WarpKind { kAffine, kPiecewiseAffine, kHomography };

// Ground-truth source -> target map in 1/8-scale cells. The piecewise kind
// uses `affine` for source x < split_x and `right` elsewhere.
struct Warp {
  WarpKind kind = WarpKind::kAffine;
  AffineParams affine;
  AffineParams right;
  double split_x = 0.0;
  Homography homography;

  static Warp from_affine(const AffineParams& a);
  static Warp piecewise(const AffineParams& left, const AffineParams& right, double split_x);
  static Warp from_homography(const Homography& h);

  Vec2 apply(Vec2 source) const;
  // Source point mapping onto `target`; empty when the map folds or
  // degenerates there.
  std::optional<Vec2> inverse(Vec2 target) const;
  // Throws SpecError for a non-invertible linear part.
  void validate() const;
};

}  // namespace afformer
