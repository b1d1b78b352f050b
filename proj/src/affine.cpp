#include "afformer/affine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "afformer/error.hpp"
#include "afformer/parallel.hpp"

namespace afformer {

bool AffineParams::all_finite() const {
  return std::isfinite(a11) && std::isfinite(a12) && std::isfinite(a13) && std::isfinite(a21) &&
         std::isfinite(a22) && std::isfinite(a23);
}

bool RegularizationBox::contains(const AffineComponents& c) {
  return c.scale_x >= kScaleMin && c.scale_x <= kScaleMax && c.scale_y >= kScaleMin &&
         c.scale_y <= kScaleMax && c.shear_m >= -kShearMax && c.shear_m <= kShearMax &&
         c.theta >= -kThetaMax && c.theta <= kThetaMax;
}

namespace {

Vec2 mean_of(std::span<const Vec2> pts, std::span<const std::size_t> idx) {
  Vec2 m{};
  for (std::size_t i : idx) {
    m.x += pts[i].x;
    m.y += pts[i].y;
  }
  const double n = static_cast<double>(idx.size());
  return {m.x / n, m.y / n};
}

}  // namespace

AffineFit estimate_affine(std::span<const Vec2> source, std::span<const Vec2> target,
                          std::span<const double> uncertainty) {
  if (source.size() != target.size()) {
    throw DimensionError("estimate_affine: " + std::to_string(source.size()) + " sources vs " +
                         std::to_string(target.size()) + " targets");
  }
  if (!uncertainty.empty() && uncertainty.size() != source.size()) {
    throw DimensionError("estimate_affine: uncertainty length mismatch");
  }

  std::vector<std::size_t> idx(source.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (!uncertainty.empty()) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return uncertainty[a] < uncertainty[b]; });
    idx.resize((idx.size() + 1) / 2);
    std::sort(idx.begin(), idx.end());
  }

  AffineFit fit;
  if (idx.empty()) {
    fit.status = FitStatus::kDegenerate;
    return fit;
  }
  const Vec2 ms = mean_of(source, idx);
  const Vec2 mt = mean_of(target, idx);
  if (idx.size() < 3) {
    fit.params = AffineParams::translation(mt.x - ms.x, mt.y - ms.y);
    fit.status = FitStatus::kDegenerate;
    return fit;
  }

  // Normal equations on centered coordinates: (C^T C) X = C^T T.
  double sxx = 0, sxy = 0, syy = 0;
  double txx = 0, txy = 0, tyx = 0, tyy = 0;  // t<target><source>
  for (std::size_t i : idx) {
    const double x = source[i].x - ms.x;
    const double y = source[i].y - ms.y;
    const double u = target[i].x - mt.x;
    const double v = target[i].y - mt.y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
    txx += u * x;
    txy += u * y;
    tyx += v * x;
    tyy += v * y;
  }
  const double half_tr = 0.5 * (sxx + syy);
  const double disc = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  const double lmax = half_tr + disc;
  const double lmin = half_tr - disc;
  const double det = sxx * syy - sxy * sxy;
  if (!(lmax > 0.0) || !(lmin > 0.0) || lmax > kConditionLimit * lmin || det <= 0.0) {
    fit.params = AffineParams::translation(mt.x - ms.x, mt.y - ms.y);
    fit.status = FitStatus::kSingular;
    return fit;
  }
  // A_lin = (T^T C) (C^T C)^{-1}
  const double i11 = syy / det, i12 = -sxy / det, i22 = sxx / det;
  AffineParams& a = fit.params;
  a.a11 = txx * i11 + txy * i12;
  a.a12 = txx * i12 + txy * i22;
  a.a21 = tyx * i11 + tyy * i12;
  a.a22 = tyx * i12 + tyy * i22;
  a.a13 = mt.x - (a.a11 * ms.x + a.a12 * ms.y);
  a.a23 = mt.y - (a.a21 * ms.x + a.a22 * ms.y);
  return fit;
}

Decomposition decompose_affine(const AffineParams& a) {
  const double sx = std::hypot(a.a11, a.a21);
  if (!(sx > 0.0)) throw InputError("decompose_affine: first column is zero");
  Decomposition d;
  AffineComponents& c = d.components;
  c.theta = std::atan2(a.a21, a.a11);
  c.scale_x = sx;
  const double ct = std::cos(c.theta);
  const double st = std::sin(c.theta);
  c.scale_y = std::abs(a.a22 * ct - a.a12 * st);
  if (c.scale_y < kDegenerateScale) {
    c.shear_m = 0.0;
    d.degenerate = true;
  } else {
    c.shear_m = (a.a12 * ct + a.a22 * st) / c.scale_y;
  }
  c.translation = {a.a13, a.a23};
  return d;
}

AffineParams recompose_affine(const AffineComponents& c) {
  const double ct = std::cos(c.theta);
  const double st = std::sin(c.theta);
  // R * [[sx, m*sy], [0, sy]]
  AffineParams a;
  a.a11 = ct * c.scale_x;
  a.a21 = st * c.scale_x;
  a.a12 = (ct * c.shear_m - st) * c.scale_y;
  a.a22 = (st * c.shear_m + ct) * c.scale_y;
  a.a13 = c.translation.x;
  a.a23 = c.translation.y;
  return a;
}

namespace {

// Pulls `value` one ulp towards the inside of [lo, hi] when the recomputed
// component landed outside.
void nudge_inside(double& value, double observed, double lo, double hi) {
  if (observed > hi) value = std::nextafter(value, lo);
  if (observed < lo) value = std::nextafter(value, hi);
}

}  // namespace

RegularizedAffine regularize_affine(const AffineParams& a) {
  using Box = RegularizationBox;
  const double sx = std::hypot(a.a11, a.a21);
  if (!(sx > kDegenerateScale) || !a.all_finite()) {
    return {AffineParams::translation(a.a13, a.a23), false};
  }
  const Decomposition d = decompose_affine(a);
  if (d.degenerate) return {AffineParams::translation(a.a13, a.a23), false};

  AffineComponents c = d.components;
  c.theta = std::clamp(c.theta, -Box::kThetaMax, Box::kThetaMax);
  c.shear_m = std::clamp(c.shear_m, -Box::kShearMax, Box::kShearMax);
  c.scale_x = std::clamp(c.scale_x, Box::kScaleMin, Box::kScaleMax);
  c.scale_y = std::clamp(c.scale_y, Box::kScaleMin, Box::kScaleMax);

  // Rounding in recompose can push a clamped component a few ulps past its
  // bound when decomposed again; step it inwards until it decomposes inside.
  AffineParams out = recompose_affine(c);
  for (int iter = 0; iter < 256; ++iter) {
    const AffineComponents r = decompose_affine(out).components;
    if (Box::contains(r)) break;
    nudge_inside(c.theta, r.theta, -Box::kThetaMax, Box::kThetaMax);
    nudge_inside(c.shear_m, r.shear_m, -Box::kShearMax, Box::kShearMax);
    nudge_inside(c.scale_x, r.scale_x, Box::kScaleMin, Box::kScaleMax);
    nudge_inside(c.scale_y, r.scale_y, Box::kScaleMin, Box::kScaleMax);
    out = recompose_affine(c);
  }
  out.a13 = a.a13;
  out.a23 = a.a23;
  return {out, true};
}

AffineField::AffineField(std::size_t rows, std::size_t cols, std::size_t window)
    : rows_(rows), cols_(cols), window_(window), params_(rows * cols), valid_(rows * cols, 0) {}

AffineField build_affine_field(const FlowField& flow, std::size_t window,
                               const AffineFieldOptions& options) {
  if (window == 0) throw ConfigError("affine window size must be positive");
  const std::size_t rows = (flow.height() + window - 1) / window;
  const std::size_t cols = (flow.width() + window - 1) / window;
  AffineField field(rows, cols, window);

  parallel_for(rows * cols, [&](std::size_t k) {
    const std::size_t wr = k / cols;
    const std::size_t wc = k % cols;
    std::vector<Vec2> src;
    std::vector<Vec2> dst;
    std::vector<double> unc;
    const std::size_t r_end = std::min(flow.height(), (wr + 1) * window);
    const std::size_t c_end = std::min(flow.width(), (wc + 1) * window);
    for (std::size_t r = wr * window; r < r_end; ++r) {
      for (std::size_t c = wc * window; c < c_end; ++c) {
        src.push_back({static_cast<double>(c), static_cast<double>(r)});
        dst.push_back(flow.target(r, c));
        unc.push_back(flow.sigma_x(r, c) + flow.sigma_y(r, c));
      }
    }
    const bool padded = (r_end - wr * window) != window || (c_end - wc * window) != window;
    const AffineFit fit = estimate_affine(
        src, dst, options.select_low_uncertainty ? std::span<const double>(unc) : std::span<const double>{});
    bool valid = fit.status == FitStatus::kOk && !padded && !field.is_border(wr, wc);
    AffineParams params = fit.params;
    if (options.regularize && fit.status == FitStatus::kOk) {
      const RegularizedAffine reg = regularize_affine(params);
      params = reg.params;
      valid = valid && reg.valid;
    }
    field.params(wr, wc) = params;
    field.set_valid(wr, wc, valid);
  });
  return field;
}

std::size_t projected_side(std::size_t window, double alpha) {
  if (!(alpha >= 1.0)) throw ConfigError("expansion factor alpha must be >= 1");
  return static_cast<std::size_t>(std::lround(alpha * static_cast<double>(window)));
}

std::vector<Vec2> project_patch(const AffineParams& a, Vec2 window_origin, std::size_t window,
                                double alpha) {
  const std::size_t side = projected_side(window, alpha);
  const double half_src = 0.5 * (static_cast<double>(window) - 1.0);
  const double half_dst = 0.5 * (static_cast<double>(side) - 1.0);
  const Vec2 center = a.apply({window_origin.x + half_src, window_origin.y + half_src});
  std::vector<Vec2> pts;
  pts.reserve(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const Vec2 off =
          a.apply_linear({static_cast<double>(c) - half_dst, static_cast<double>(r) - half_dst});
      pts.push_back({center.x + off.x, center.y + off.y});
    }
  }
  return pts;
}

Tensor affine_field_to_tensor(const AffineField& field) {
  Tensor t;
  t.dims = {field.rows(), field.cols(), 7};
  t.values.reserve(field.size() * 7);
  for (std::size_t r = 0; r < field.rows(); ++r) {
    for (std::size_t c = 0; c < field.cols(); ++c) {
      const AffineParams& a = field.params(r, c);
      t.values.insert(t.values.end(),
                      {a.a11, a.a12, a.a13, a.a21, a.a22, a.a23, field.valid(r, c) ? 1.0 : 0.0});
    }
  }
  return t;
}

AffineField affine_field_from_tensor(const Tensor& t, std::size_t window) {
  if (t.dims.size() != 3 || t.dims[2] != 7) throw DimensionError("affine field tensor must be rows x cols x 7");
  AffineField field(t.dims[0], t.dims[1], window);
  for (std::size_t r = 0; r < field.rows(); ++r) {
    for (std::size_t c = 0; c < field.cols(); ++c) {
      const double* v = t.values.data() + (r * field.cols() + c) * 7;
      field.params(r, c) = {v[0], v[1], v[2], v[3], v[4], v[5]};
      field.set_valid(r, c, v[6] != 0.0);
    }
  }
  return field;
}

}  // namespace afformer
