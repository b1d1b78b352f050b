#include "afformer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "afformer/error.hpp"
#include "afformer/random.hpp"

namespace afformer {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(gamma_focal >= 0.0)) {
    throw ConfigError("loss weights and focal exponent must be non-negative");
  }
}

MatrixLoss focal_loss(const Matrix& s, std::span<const std::pair<std::size_t, std::size_t>> gt,
                      double gamma_focal, NegativeSet negatives) {
  const std::size_t n = s.rows();
  const std::size_t m = s.cols();
  std::vector<unsigned char> positive(n * m, 0);
  std::vector<unsigned char> row_has(n, 0), col_has(m, 0);
  for (auto [i, j] : gt) {
    if (i >= n || j >= m) throw InputError("focal_loss: gt match outside the assignment matrix");
    positive[i * m + j] = 1;
    row_has[i] = 1;
    col_has[j] = 1;
  }
  MatrixLoss out{0.0, Matrix(n, m)};
  const double g = gamma_focal;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double raw = s(i, j);
      const double v = std::clamp(raw, kFocalEps, 1.0 - kFocalEps);
      const bool clamped = v != raw;
      if (positive[i * m + j]) {
        const double q = 1.0 - v;
        out.value -= std::pow(q, g) * std::log(v);
        if (!clamped) {
          const double dq = g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0);
          out.grad(i, j) = dq * std::log(v) - std::pow(q, g) / v;
        }
      } else {
        if (negatives == NegativeSet::kMatchedRows && !row_has[i] && !col_has[j]) continue;
        out.value -= std::pow(v, g) * std::log(1.0 - v);
        if (!clamped) {
          const double dv = g == 0.0 ? 0.0 : g * std::pow(v, g - 1.0);
          out.grad(i, j) = -dv * std::log(1.0 - v) + std::pow(v, g) / (1.0 - v);
        }
      }
    }
  }
  return out;
}

MatrixLoss spatial_softmax_loss(const Matrix& s, std::span<const Vec2> target_coords,
                                const GroundTruth& gt, bool renormalize) {
  const std::size_t n = s.rows();
  const std::size_t m = s.cols();
  if (target_coords.size() != m) throw DimensionError("spatial_softmax_loss: one coordinate per target");
  MatrixLoss out{0.0, Matrix(n, m)};
  if (gt.matches.empty()) return out;
  const double inv_count = 1.0 / static_cast<double>(gt.matches.size());
  for (auto [i, j_gt] : gt.matches) {
    if (i >= n || j_gt >= m) throw InputError("spatial_softmax_loss: gt match outside S");
    const Vec2 target = i < gt.coords.size() && (gt.coord_valid.empty() || gt.coord_valid[i])
                            ? gt.coords[i]
                            : target_coords[j_gt];
    double row_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) row_sum += s(i, j);
    const double norm = renormalize ? row_sum : 1.0;
    if (!(norm > 0.0)) throw InputError("spatial_softmax_loss: zero row under renormalization");
    Vec2 expect{};
    for (std::size_t j = 0; j < m; ++j) {
      expect.x += s(i, j) * target_coords[j].x;
      expect.y += s(i, j) * target_coords[j].y;
    }
    expect.x /= norm;
    expect.y /= norm;
    const double ex = expect.x - target.x;
    const double ey = expect.y - target.y;
    out.value += inv_count * (ex * ex + ey * ey);
    for (std::size_t j = 0; j < m; ++j) {
      // d expect / d S(i,j) = (P_j - expect) / norm under renormalization.
      const double dx = renormalize ? (target_coords[j].x - expect.x) / norm : target_coords[j].x;
      const double dy = renormalize ? (target_coords[j].y - expect.y) / norm : target_coords[j].y;
      out.grad(i, j) += 2.0 * inv_count * (ex * dx + ey * dy);
    }
  }
  return out;
}

FlowLoss flow_nll(const FlowField& flow, const FlowField& gt_flow,
                  const std::vector<unsigned char>& mask) {
  if (flow.height() != gt_flow.height() || flow.width() != gt_flow.width() ||
      mask.size() != flow.cells()) {
    throw DimensionError("flow_nll: flow, ground truth and mask differ in size");
  }
  FlowLoss out{0.0, FlowField(flow.height(), flow.width())};
  std::size_t count = 0;
  for (unsigned char v : mask) count += v != 0;
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t r = 0; r < flow.height(); ++r) {
    for (std::size_t c = 0; c < flow.width(); ++c) {
      if (!mask[r * flow.width() + c]) continue;
      const double rx = gt_flow.ux(r, c) - flow.ux(r, c);
      const double ry = gt_flow.uy(r, c) - flow.uy(r, c);
      const double ix = std::exp(-2.0 * flow.wx(r, c));
      const double iy = std::exp(-2.0 * flow.wy(r, c));
      out.value += inv * (flow.wx(r, c) + flow.wy(r, c) + 0.5 * ix * rx * rx + 0.5 * iy * ry * ry);
      out.grad.ux(r, c) = -inv * ix * rx;
      out.grad.uy(r, c) = -inv * iy * ry;
      out.grad.wx(r, c) = inv * (1.0 - ix * rx * rx);
      out.grad.wy(r, c) = inv * (1.0 - iy * ry * ry);
    }
  }
  return out;
}

VectorLoss fine_l2_loss(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.size() != gt.size()) {
    throw InputError("fine_l2_loss: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " targets");
  }
  VectorLoss out{0.0, std::vector<Vec2>(pred.size())};
  if (pred.empty()) return out;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double dx = pred[k].x - gt[k].x;
    const double dy = pred[k].y - gt[k].y;
    out.value += inv * (dx * dx + dy * dy);
    out.grad[k] = {2.0 * inv * dx, 2.0 * inv * dy};
  }
  return out;
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  for (double v : {parts.ce, parts.fine, parts.cs, parts.flow}) {
    if (!std::isfinite(v)) throw InputError("total_loss: non-finite loss part");
  }
  return parts.ce + parts.fine + weights.lambda1 * parts.cs + weights.lambda2 * parts.flow;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-5;

// Max relative error of `grad` against central differences of `loss` over
// every coordinate of `params`.
double check_vector(std::vector<double>& params, const std::vector<double>& grad,
                    const std::function<double()>& loss) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + kStep;
    const double up = loss();
    params[k] = saved - kStep;
    const double down = loss();
    params[k] = saved;
    worst = std::max(worst, relative_error(grad[k], (up - down) / (2.0 * kStep)));
  }
  return worst;
}

struct RandomAssignment {
  Matrix s;
  GroundTruth gt;
  std::vector<Vec2> target_coords;
};

RandomAssignment random_assignment(Rng& rng) {
  const std::size_t n = 3 + rng.below(4);
  const std::size_t m = 3 + rng.below(4);
  RandomAssignment r;
  r.s = Matrix(n, m);
  for (double& v : r.s.data()) v = rng.uniform(0.05, 0.95);
  // A random partial one-to-one matching.
  std::vector<std::size_t> cols(m);
  for (std::size_t j = 0; j < m; ++j) cols[j] = j;
  for (std::size_t j = m; j > 1; --j) std::swap(cols[j - 1], cols[rng.below(j)]);
  const std::size_t k = 1 + rng.below(std::min(n, m));
  for (std::size_t i = 0; i < k; ++i) r.gt.matches.emplace_back(i, cols[i]);
  r.target_coords.resize(m);
  for (auto& p : r.target_coords) p = {rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
  r.gt.coords.resize(n);
  r.gt.coord_valid.assign(n, 1);
  for (auto& p : r.gt.coords) p = {rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0)};
  return r;
}

GradcheckRow focal_rows(Rng& rng, std::size_t instances, NegativeSet negatives, const char* name) {
  GradcheckRow row{name, instances, 0.0, kTolerance, false};
  for (std::size_t t = 0; t < instances; ++t) {
    RandomAssignment r = random_assignment(rng);
    const MatrixLoss l = focal_loss(r.s, r.gt.matches, 2.0, negatives);
    row.max_rel_error = std::max(row.max_rel_error, check_vector(r.s.data(), l.grad.data(), [&] {
      return focal_loss(r.s, r.gt.matches, 2.0, negatives).value;
    }));
  }
  row.passed = row.max_rel_error <= row.tolerance;
  return row;
}

GradcheckRow spatial_rows(Rng& rng, std::size_t instances, bool renormalize, const char* name) {
  GradcheckRow row{name, instances, 0.0, kTolerance, false};
  for (std::size_t t = 0; t < instances; ++t) {
    RandomAssignment r = random_assignment(rng);
    const MatrixLoss l = spatial_softmax_loss(r.s, r.target_coords, r.gt, renormalize);
    row.max_rel_error = std::max(row.max_rel_error, check_vector(r.s.data(), l.grad.data(), [&] {
      return spatial_softmax_loss(r.s, r.target_coords, r.gt, renormalize).value;
    }));
  }
  row.passed = row.max_rel_error <= row.tolerance;
  return row;
}

GradcheckRow flow_rows(Rng& rng, std::size_t instances) {
  GradcheckRow row{"flow_nll", instances, 0.0, kTolerance, false};
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t h = 2 + rng.below(3);
    const std::size_t w = 2 + rng.below(3);
    FlowField flow(h, w), gt(h, w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        flow.ux(r, c) = rng.uniform(-3.0, 3.0);
        flow.uy(r, c) = rng.uniform(-3.0, 3.0);
        flow.wx(r, c) = rng.uniform(-1.0, 1.0);
        flow.wy(r, c) = rng.uniform(-1.0, 1.0);
        gt.ux(r, c) = rng.uniform(-3.0, 3.0);
        gt.uy(r, c) = rng.uniform(-3.0, 3.0);
      }
    }
    std::vector<unsigned char> mask(h * w);
    for (auto& v : mask) v = rng.uniform() < 0.8 ? 1 : 0;
    mask[0] = 1;
    const FlowLoss l = flow_nll(flow, gt, mask);
    row.max_rel_error = std::max(row.max_rel_error, check_vector(flow.data(), l.grad.data(), [&] {
      return flow_nll(flow, gt, mask).value;
    }));
  }
  row.passed = row.max_rel_error <= row.tolerance;
  return row;
}

GradcheckRow fine_rows(Rng& rng, std::size_t instances) {
  GradcheckRow row{"fine_l2", instances, 0.0, kTolerance, false};
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<Vec2> pred(n), gt(n);
    for (std::size_t k = 0; k < n; ++k) {
      pred[k] = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
      gt[k] = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    }
    const VectorLoss l = fine_l2_loss(pred, gt);
    std::vector<double> flat, grad;
    for (std::size_t k = 0; k < n; ++k) {
      flat.insert(flat.end(), {pred[k].x, pred[k].y});
      grad.insert(grad.end(), {l.grad[k].x, l.grad[k].y});
    }
    row.max_rel_error = std::max(row.max_rel_error, check_vector(flat, grad, [&] {
      std::vector<Vec2> p(n);
      for (std::size_t k = 0; k < n; ++k) p[k] = {flat[2 * k], flat[2 * k + 1]};
      return fine_l2_loss(p, gt).value;
    }));
  }
  row.passed = row.max_rel_error <= row.tolerance;
  return row;
}

}  // namespace

std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t instances) {
  std::vector<GradcheckRow> rows;
  Rng focal_rng(derive_seed(seed, 1));
  rows.push_back(focal_rows(focal_rng, instances, NegativeSet::kMatchedRows, "focal"));
  Rng focal_full_rng(derive_seed(seed, 2));
  rows.push_back(focal_rows(focal_full_rng, instances, NegativeSet::kFullGrid, "focal_full_grid"));
  Rng spatial_rng(derive_seed(seed, 3));
  rows.push_back(spatial_rows(spatial_rng, instances, false, "spatial_softmax"));
  Rng spatial_norm_rng(derive_seed(seed, 4));
  rows.push_back(spatial_rows(spatial_norm_rng, instances, true, "spatial_softmax_renorm"));
  Rng flow_rng(derive_seed(seed, 5));
  rows.push_back(flow_rows(flow_rng, instances));
  Rng fine_rng(derive_seed(seed, 6));
  rows.push_back(fine_rows(fine_rng, instances));
  return rows;
}

}  // namespace afformer
