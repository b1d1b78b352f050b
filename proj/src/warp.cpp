#include "afformer/warp.hpp"

#include <cmath>

#include "afformer/error.hpp"

namespace afformer {

namespace {

constexpr double kMinDet = 1e-12;

std::optional<Vec2> invert_affine(const AffineParams& a, Vec2 t) {
  const double det = a.determinant();
  if (std::abs(det) < kMinDet) return std::nullopt;
  const double dx = t.x - a.a13;
  const double dy = t.y - a.a23;
  return Vec2{(a.a22 * dx - a.a12 * dy) / det, (-a.a21 * dx + a.a11 * dy) / det};
}

}  // namespace

Vec2 Homography::apply(Vec2 p) const {
  const double w = h[6] * p.x + h[7] * p.y + h[8];
  return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

double Homography::determinant() const {
  return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
         h[2] * (h[3] * h[7] - h[4] * h[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (std::abs(det) < kMinDet) throw SpecError("homography is not invertible");
  Homography inv;
  inv.h = {(h[4] * h[8] - h[5] * h[7]) / det, (h[2] * h[7] - h[1] * h[8]) / det,
           (h[1] * h[5] - h[2] * h[4]) / det, (h[5] * h[6] - h[3] * h[8]) / det,
           (h[0] * h[8] - h[2] * h[6]) / det, (h[2] * h[3] - h[0] * h[5]) / det,
           (h[3] * h[7] - h[4] * h[6]) / det, (h[1] * h[6] - h[0] * h[7]) / det,
           (h[0] * h[4] - h[1] * h[3]) / det};
  return inv;
}

Warp Warp::from_affine(const AffineParams& a) {
  Warp w;
  w.kind = WarpKind::kAffine;
  w.affine = a;
  return w;
}

Warp Warp::piecewise(const AffineParams& left, const AffineParams& right, double split_x) {
  Warp w;
  w.kind = WarpKind::kPiecewiseAffine;
  w.affine = left;
  w.right = right;
  w.split_x = split_x;
  return w;
}

Warp Warp::from_homography(const Homography& h) {
  Warp w;
  w.kind = WarpKind::kHomography;
  w.homography = h;
  return w;
}

Vec2 Warp::apply(Vec2 s) const {
  switch (kind) {
    case WarpKind::kAffine:
      return affine.apply(s);
    case WarpKind::kPiecewiseAffine:
      return s.x < split_x ? affine.apply(s) : right.apply(s);
    case WarpKind::kHomography:
      return homography.apply(s);
  }
  return s;
}

std::optional<Vec2> Warp::inverse(Vec2 t) const {
  switch (kind) {
    case WarpKind::kAffine:
      return invert_affine(affine, t);
    case WarpKind::kPiecewiseAffine: {
      if (auto s = invert_affine(affine, t); s && s->x < split_x) return s;
      if (auto s = invert_affine(right, t); s && s->x >= split_x) return s;
      return std::nullopt;
    }
    case WarpKind::kHomography: {
      const Homography inv = homography.inverse();
      const double w = inv.h[6] * t.x + inv.h[7] * t.y + inv.h[8];
      if (std::abs(w) < kMinDet) return std::nullopt;
      return inv.apply(t);
    }
  }
  return std::nullopt;
}

void Warp::validate() const {
  auto check = [](const AffineParams& a) {
    if (!a.all_finite() || std::abs(a.determinant()) < kMinDet) {
      throw SpecError("warp has a non-invertible linear part");
    }
  };
  switch (kind) {
    case WarpKind::kAffine:
      check(affine);
      break;
    case WarpKind::kPiecewiseAffine:
      check(affine);
      check(right);
      break;
    case WarpKind::kHomography:
      if (std::abs(homography.determinant()) < kMinDet) {
        throw SpecError("homography is not invertible");
      }
      break;
  }
}

}  // namespace afformer
