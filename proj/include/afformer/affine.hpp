#pragma once

#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "afformer/flow_field.hpp"
#include "afformer/grid.hpp"
#include "afformer/tensor_io.hpp"

namespace afformer {

// 2x3 affine, target = [a11 a12; a21 a22] * source + [a13; a23].
// Translation is in 1/8-scale cells.
struct AffineParams {
  double a11 = 1.0, a12 = 0.0, a13 = 0.0;
  double a21 = 0.0, a22 = 1.0, a23 = 0.0;

  static AffineParams identity() { return {}; }
  static AffineParams translation(double tx, double ty) { return {1.0, 0.0, tx, 0.0, 1.0, ty}; }

  Vec2 apply(Vec2 p) const { return {a11 * p.x + a12 * p.y + a13, a21 * p.x + a22 * p.y + a23}; }
  Vec2 apply_linear(Vec2 v) const { return {a11 * v.x + a12 * v.y, a21 * v.x + a22 * v.y}; }
  double determinant() const { return a11 * a22 - a12 * a21; }
  bool all_finite() const;

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

// Linear block = R(theta) * [1 m; 0 1] * diag(scale_x, scale_y).
struct AffineComponents {
  double theta = 0.0;
  double shear_m = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  Vec2 translation{};
};

// Clamping ranges applied by regularize_affine.
struct RegularizationBox {
  static constexpr double kScaleMin = 0.5;
  static constexpr double kScaleMax = 4.0;
  static constexpr double kShearMax = 0.5;
  static constexpr double kThetaMax = std::numbers::pi / 3.0;

  static bool contains(const AffineComponents& c);
};

struct Decomposition {
  AffineComponents components;
  // scale_y below 1e-9: shear is undefined and reported as 0.
  bool degenerate = false;
};

enum class FitStatus {
  kOk,
  kDegenerate,  // fewer than 3 usable points
  kSingular,    // centered design matrix rank deficient
};

struct AffineFit {
  AffineParams params;
  FitStatus status = FitStatus::kOk;
};

struct RegularizedAffine {
  AffineParams params;
  bool valid = true;
};

inline constexpr double kConditionLimit = 1e8;
inline constexpr double kDegenerateScale = 1e-9;

// Least-squares affine from point pairs. When `uncertainty` is non-empty only
// the lower half (ceil(n/2)) by uncertainty is used, ties broken by index.
// The linear block solves the normal equations on mean-centered coordinates
// and the translation maps the mean source point onto the mean target point.
// Singular windows fall back to the identity linear block with mean
// translation; degenerate windows to mean translation (identity if empty).
AffineFit estimate_affine(std::span<const Vec2> source, std::span<const Vec2> target,
                          std::span<const double> uncertainty = {});

// Throws InputError if a11 = a21 = 0.
Decomposition decompose_affine(const AffineParams& a);
AffineParams recompose_affine(const AffineComponents& c);

// Clamps theta, shear and scales into RegularizationBox; translation is kept.
// The result decomposes inside the box exactly and the map is idempotent.
RegularizedAffine regularize_affine(const AffineParams& a);

// Grid of per-window affines over a 1/8-scale source grid, windows of
// `window` x `window` cells, row-major.
class AffineField {
 public:
  AffineField() = default;
  AffineField(std::size_t rows, std::size_t cols, std::size_t window);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t window() const { return window_; }
  std::size_t size() const { return rows_ * cols_; }

  AffineParams& params(std::size_t r, std::size_t c) { return params_[r * cols_ + c]; }
  const AffineParams& params(std::size_t r, std::size_t c) const { return params_[r * cols_ + c]; }
  bool valid(std::size_t r, std::size_t c) const { return valid_[r * cols_ + c] != 0; }
  void set_valid(std::size_t r, std::size_t c, bool v) { valid_[r * cols_ + c] = v ? 1 : 0; }

  bool is_border(std::size_t r, std::size_t c) const {
    return r == 0 || c == 0 || r + 1 == rows_ || c + 1 == cols_;
  }

  friend bool operator==(const AffineField&, const AffineField&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t window_ = 0;
  std::vector<AffineParams> params_;
  std::vector<unsigned char> valid_;
};

struct AffineFieldOptions {
  bool regularize = true;
  bool select_low_uncertainty = true;
};

// One affine per non-overlapping window. Border windows (and any window that
// runs past the grid edge) are kept but flagged invalid, as are windows whose
// fit or regularization degenerates.
AffineField build_affine_field(const FlowField& flow, std::size_t window,
                               const AffineFieldOptions& options = {});

// alpha*l x alpha*l unit-spaced lattice centered on the affine image of the
// window center, row-major. alpha = 1 with the identity reproduces the
// window's own cell coordinates.
std::vector<Vec2> project_patch(const AffineParams& a, Vec2 window_origin, std::size_t window,
                                double alpha);

// Number of lattice points per side produced by project_patch.
std::size_t projected_side(std::size_t window, double alpha);

// rows x cols x 7: a11 a12 a13 a21 a22 a23 valid.
Tensor affine_field_to_tensor(const AffineField& field);
AffineField affine_field_from_tensor(const Tensor& t, std::size_t window);

}  // namespace afformer
