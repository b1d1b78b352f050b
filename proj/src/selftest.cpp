#include "afformer/selftest.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "afformer/affine.hpp"
#include "afformer/attention.hpp"
#include "afformer/error.hpp"
#include "afformer/flow.hpp"
#include "afformer/fusion.hpp"
#include "afformer/losses.hpp"
#include "afformer/matching.hpp"
#include "afformer/random.hpp"
#include "afformer/tensor_io.hpp"
#include "afformer/warp.hpp"

namespace afformer {

namespace {

AffineComponents random_components(Rng& rng, double margin) {
  using Box = RegularizationBox;
  AffineComponents c;
  c.theta = rng.uniform(-Box::kThetaMax + margin, Box::kThetaMax - margin);
  c.shear_m = rng.uniform(-Box::kShearMax + margin, Box::kShearMax - margin);
  c.scale_x = rng.uniform(Box::kScaleMin + margin, Box::kScaleMax - margin);
  c.scale_y = rng.uniform(Box::kScaleMin + margin, Box::kScaleMax - margin);
  c.translation = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
  return c;
}

double max_coeff_diff(const AffineParams& a, const AffineParams& b) {
  return std::max({std::abs(a.a11 - b.a11), std::abs(a.a12 - b.a12), std::abs(a.a13 - b.a13),
                   std::abs(a.a21 - b.a21), std::abs(a.a22 - b.a22), std::abs(a.a23 - b.a23)});
}

SuiteResult affine_recovery(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const AffineParams a = recompose_affine(random_components(rng, 1e-3));
    const FlowField flow = flow_oracle_from_warp(Warp::from_affine(a), 16, 16);
    const AffineField field = build_affine_field(flow, 4);
    for (std::size_t r = 1; r + 1 < field.rows(); ++r) {
      for (std::size_t c = 1; c + 1 < field.cols(); ++c) {
        worst = std::max(worst, max_coeff_diff(field.params(r, c), a));
      }
    }
  }
  std::ostringstream d;
  d << "max coefficient error " << worst;
  return {"affine_recovery", worst <= 1e-6, d.str()};
}

SuiteResult decompose_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const AffineComponents c = random_components(rng, 0.0);
    const AffineComponents r = decompose_affine(recompose_affine(c)).components;
    worst = std::max({worst, std::abs(r.theta - c.theta), std::abs(r.shear_m - c.shear_m),
                      std::abs(r.scale_x - c.scale_x), std::abs(r.scale_y - c.scale_y)});
  }
  std::ostringstream d;
  d << "max component error " << worst;
  return {"decompose_roundtrip", worst <= 1e-9, d.str()};
}

SuiteResult regularize_box(std::uint64_t seed) {
  Rng rng(seed);
  std::size_t outside = 0;
  double worst_idem = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    AffineComponents c;
    c.theta = rng.uniform(-3.0, 3.0);
    c.shear_m = rng.uniform(-3.0, 3.0);
    c.scale_x = rng.uniform(0.05, 10.0);
    c.scale_y = rng.uniform(0.05, 10.0);
    const RegularizedAffine once = regularize_affine(recompose_affine(c));
    if (!RegularizationBox::contains(decompose_affine(once.params).components)) ++outside;
    const RegularizedAffine twice = regularize_affine(once.params);
    worst_idem = std::max(worst_idem, max_coeff_diff(once.params, twice.params));
  }
  std::ostringstream d;
  d << outside << " outside box, idempotence error " << worst_idem;
  return {"regularize_box", outside == 0 && worst_idem <= 1e-12, d.str()};
}

SuiteResult fusion_properties(std::uint64_t seed) {
  Rng rng(seed);
  double worst_sum = 0.0;
  std::size_t non_monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const FusionParams p(rng.uniform(-3, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3));
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
      const double s = 0.01 + 0.05 * k;
      const FusionWeight w = fusion_weights(p, 0.5 * s, 0.5 * s);
      worst_sum = std::max(worst_sum, std::abs(w.p1 + w.p2 - 1.0));
      if (!(w.p2 < prev)) ++non_monotone;
      prev = w.p2;
    }
  }
  std::ostringstream d;
  d << "sum error " << worst_sum << ", " << non_monotone << " monotonicity violations";
  return {"fusion_properties", worst_sum <= 1e-12 && non_monotone == 0, d.str()};
}

SuiteResult loss_gradients(std::uint64_t seed) {
  bool ok = true;
  std::ostringstream d;
  for (const GradcheckRow& row : run_gradcheck(seed, 20)) {
    ok = ok && row.passed;
    d << row.name << "=" << row.max_rel_error << " ";
  }
  return {"loss_gradients", ok, d.str()};
}

SuiteResult loss_values(std::uint64_t) {
  FlowField flow(1, 1);
  FlowField gt(1, 1);
  gt.ux(0, 0) = 1.0;
  gt.uy(0, 0) = 1.0;
  const double nll = flow_nll(flow, gt, {1}).value;
  const Matrix s(1, 1, 0.5);
  const std::pair<std::size_t, std::size_t> m{0, 0};
  const double focal = focal_loss(s, std::span(&m, 1), 2.0).value;
  const double total = total_loss({1, 1, 1, 1}, LossWeights{});
  const bool ok = nll == 1.0 && std::abs(focal - 0.25 * std::log(2.0)) <= 1e-12 &&
                  std::abs(total - 3.1) <= 1e-12;
  std::ostringstream d;
  d << "nll=" << nll << " focal=" << focal << " total=" << total;
  return {"loss_values", ok, d.str()};
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

SuiteResult attention_oracle(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 8;
    const std::size_t heads = 2;
    const std::size_t n = 1 + rng.below(16);
    const std::size_t m = 1 + rng.below(16);
    const AttentionLayer layer = AttentionLayer::seeded(dim, heads, rng.next());
    const Matrix q = random_matrix(rng, n, dim, 1.0);
    const Matrix kv = random_matrix(rng, m, dim, 1.0);
    const AttentionOutput out = multi_head_attention(q, kv, kv, layer);
    const Matrix qp = layer.wq.apply(q);
    const Matrix kp = layer.wk.apply(kv);
    const Matrix vp = layer.wv.apply(kv);
    const std::size_t hd = dim / heads;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> logits(m);
        for (std::size_t j = 0; j < m; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += qp(i, h * hd + c) * kp(j, h * hd + c);
          logits[j] = dot / std::sqrt(static_cast<double>(hd));
        }
        const std::vector<double> p = softmax_stable(logits);
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += p[j] * vp(j, h * hd + c);
          worst = std::max(worst, std::abs(acc - out.message(i, h * hd + c)));
        }
      }
    }
  }
  std::ostringstream d;
  d << "max message error " << worst;
  return {"attention_oracle", worst <= 1e-10, d.str()};
}

SuiteResult matching_oracle(std::uint64_t seed) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const std::size_t m = 1 + rng.below(12);
    const Matrix c = random_matrix(rng, n, m, 4.0);
    const AssignmentMatrix s = dual_softmax(c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double row = 0.0;
        double col = 0.0;
        for (std::size_t k = 0; k < m; ++k) row += std::exp(c(i, k) - c(i, j));
        for (std::size_t k = 0; k < n; ++k) col += std::exp(c(k, j) - c(i, j));
        worst = std::max(worst, std::abs(s.scores(i, j) - 1.0 / (row * col)));
      }
    }
    std::vector<std::pair<std::size_t, std::size_t>> expected;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bj = 0;
      for (std::size_t j = 1; j < m; ++j) if (s.scores(i, j) > s.scores(i, bj)) bj = j;
      std::size_t bi = 0;
      for (std::size_t k = 1; k < n; ++k) if (s.scores(k, bj) > s.scores(bi, bj)) bi = k;
      if (bi == i && s.scores(i, bj) > 0.2) expected.emplace_back(i, bj);
    }
    const MatchSet got = mnn_filter(s, 0.2, m, m);
    if (got.size() != expected.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (got.matches[k].source_index != expected[k].first ||
          got.matches[k].target_index != expected[k].second) {
        ++mismatches;
        break;
      }
    }
  }
  std::ostringstream d;
  d << mismatches << " mnn mismatches, dual softmax error " << worst;
  return {"matching_oracle", mismatches == 0 && worst <= 1e-12, d.str()};
}

SuiteResult tensor_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  Tensor t;
  t.dims = {3, 4, 5};
  for (int i = 0; i < 60; ++i) t.values.push_back(rng.normal());
  const Tensor back = decode_tensor(encode_tensor(t));
  bool ok = back.dims == t.dims && back.values == t.values;
  std::vector<std::uint8_t> bad = encode_tensor(t);
  bad.resize(bad.size() - 1);
  try {
    decode_tensor(bad);
    ok = false;
  } catch (const FormatError&) {
  }
  return {"tensor_roundtrip", ok, ok ? "bit-exact" : "mismatch"};
}

}  // namespace

std::vector<SuiteResult> run_selftest(std::uint64_t seed) {
  const std::vector<std::function<SuiteResult(std::uint64_t)>> suites{
      affine_recovery, decompose_roundtrip, regularize_box,  fusion_properties, loss_gradients,
      loss_values,     attention_oracle,    matching_oracle, tensor_roundtrip};
  std::vector<SuiteResult> out;
  for (std::size_t k = 0; k < suites.size(); ++k) {
    try {
      out.push_back(suites[k](derive_seed(seed, k)));
    } catch (const std::exception& e) {
      out.push_back({"suite" + std::to_string(k), false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace afformer
