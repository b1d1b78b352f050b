#include "afformer/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "afformer/error.hpp"

namespace afformer {

FusionParams::FusionParams(double alpha, double beta, double gamma)
    : alpha_(alpha), beta_(beta), gamma_(gamma) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma)) {
    throw ConfigError("fusion parameters must be finite");
  }
  if (gamma < 0.0) throw ConfigError("fusion gamma must be >= 0");
}

FusionWeight fusion_weights(const FusionParams& params, double sigma_x, double sigma_y) {
  const double spread = std::max(sigma_x + sigma_y, 0.0);
  const double local_logit = params.beta() / (1.0 + params.gamma() * spread);
  const double global_logit = params.alpha();
  // Two-way softmax written so p1 + p2 rounds to one.
  const double hi = std::max(global_logit, local_logit);
  const double e1 = std::exp(global_logit - hi);
  const double e2 = std::exp(local_logit - hi);
  FusionWeight w;
  w.p2 = e2 / (e1 + e2);
  w.p1 = 1.0 - w.p2;
  return w;
}

FusionScores fusion_weights(const FusionParams& params, const FlowField& flow) {
  FusionScores s{flow.height(), flow.width(), std::vector<double>(flow.cells()),
                 std::vector<double>(flow.cells())};
  for (std::size_t r = 0; r < flow.height(); ++r) {
    for (std::size_t c = 0; c < flow.width(); ++c) {
      const FusionWeight w = fusion_weights(params, flow.sigma_x(r, c), flow.sigma_y(r, c));
      s.p1[r * flow.width() + c] = w.p1;
      s.p2[r * flow.width() + c] = w.p2;
    }
  }
  return s;
}

std::vector<unsigned char> cell_mask_from_field(const AffineField& field, std::size_t height,
                                                std::size_t width,
                                                const std::vector<unsigned char>& window_active) {
  std::vector<unsigned char> mask(height * width, 0);
  const std::size_t l = field.window();
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t wr = r / l;
      const std::size_t wc = c / l;
      if (wr >= field.rows() || wc >= field.cols()) continue;
      bool ok = field.valid(wr, wc);
      if (!window_active.empty()) ok = ok && window_active[wr * field.cols() + wc] != 0;
      mask[r * width + c] = ok ? 1 : 0;
    }
  }
  return mask;
}

FeatureMap fuse_messages(const FeatureMap& mg, const FeatureMap& ml, const FusionScores& weights,
                         const std::vector<unsigned char>& local_valid, FusionScores* applied) {
  if (mg.height() != ml.height() || mg.width() != ml.width() || mg.channels() != ml.channels() ||
      weights.height != mg.height() || weights.width != mg.width() ||
      weights.p1.size() != mg.cells() || weights.p2.size() != mg.cells() ||
      local_valid.size() != mg.cells()) {
    throw InputError("fuse_messages: grid dimensions differ");
  }
  FeatureMap out(mg.height(), mg.width(), mg.channels(), mg.scale());
  FusionScores used = weights;
  for (std::size_t i = 0; i < mg.cells(); ++i) {
    if (local_valid[i] == 0) {
      used.p1[i] = 1.0;
      used.p2[i] = 0.0;
    }
    const double p1 = used.p1[i];
    const double p2 = used.p2[i];
    const std::size_t base = i * mg.channels();
    for (std::size_t ch = 0; ch < mg.channels(); ++ch) {
      out.data()[base + ch] = p1 * mg.data()[base + ch] + p2 * ml.data()[base + ch];
    }
  }
  if (applied != nullptr) *applied = std::move(used);
  return out;
}

Tensor fusion_scores_to_tensor(const FusionScores& scores) {
  Tensor t;
  t.dims = {scores.height, scores.width};
  t.values = scores.p2;
  return t;
}

}  // namespace afformer
