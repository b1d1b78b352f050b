#pragma once

// Brute-force reference implementations used by the unit suites and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "afformer/attention.hpp"
#include "afformer/grid.hpp"
#include "afformer/nn.hpp"

namespace oracle {

inline std::vector<double> project(const afformer::Linear& lin, std::span<const double> x) {
  std::vector<double> y(lin.out, 0.0);
  for (std::size_t o = 0; o < lin.out; ++o) {
    for (std::size_t i = 0; i < lin.in; ++i) y[o] += lin.weight[o * lin.in + i] * x[i];
    y[o] += lin.bias[o];
  }
  return y;
}

// Explicit exp / sum per (query, head); masked keys are skipped and a query
// with no unmasked key gets a zero message.
inline afformer::Matrix attention(const afformer::Matrix& q, const afformer::Matrix& kv,
                                  const afformer::AttentionLayer& layer,
                                  const std::vector<unsigned char>& mask = {}) {
  const std::size_t dh = layer.dim / layer.heads;
  afformer::Matrix out(q.rows(), layer.dim);
  std::vector<std::vector<double>> ks, vs;
  for (std::size_t j = 0; j < kv.rows(); ++j) {
    ks.push_back(project(layer.wk, kv.row(j)));
    vs.push_back(project(layer.wv, kv.row(j)));
  }
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::vector<double> qi = project(layer.wq, q.row(i));
    for (std::size_t h = 0; h < layer.heads; ++h) {
      std::vector<double> logit(kv.rows(), 0.0);
      double mx = -1e300;
      bool any = false;
      for (std::size_t j = 0; j < kv.rows(); ++j) {
        if (!mask.empty() && !mask[j]) continue;
        for (std::size_t c = 0; c < dh; ++c) logit[j] += qi[h * dh + c] * ks[j][h * dh + c];
        logit[j] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logit[j]);
        any = true;
      }
      if (!any) continue;
      double z = 0.0;
      for (std::size_t j = 0; j < kv.rows(); ++j) {
        if (mask.empty() || mask[j]) z += std::exp(logit[j] - mx);
      }
      for (std::size_t j = 0; j < kv.rows(); ++j) {
        if (!mask.empty() && !mask[j]) continue;
        const double p = std::exp(logit[j] - mx) / z;
        for (std::size_t c = 0; c < dh; ++c) out(i, h * dh + c) += p * vs[j][h * dh + c];
      }
    }
  }
  return out;
}

// l x l tokens of window (wr, wc), shifted dx columns.
inline afformer::Matrix window_tokens(const afformer::FeatureMap& f, std::size_t l, std::size_t wr,
                                      std::size_t wc, long dx = 0) {
  afformer::Matrix m(l * l, f.channels());
  for (std::size_t r = 0; r < l; ++r) {
    for (std::size_t c = 0; c < l; ++c) {
      auto cell = f.cell(wr * l + r, static_cast<std::size_t>(static_cast<long>(wc * l + c) + dx));
      std::copy(cell.begin(), cell.end(), m.row(r * l + c).begin());
    }
  }
  return m;
}

// Windowed cross-attention: every source window attends to the same window
// of the target. Equals deformable attention under an identity field with
// expansion 1.
inline afformer::FeatureMap windowed_attention(const afformer::FeatureMap& fs, const afformer::FeatureMap& ft,
                                               const afformer::AttentionLayer& layer, std::size_t l) {
  afformer::FeatureMap out(fs.height(), fs.width(), layer.dim, fs.scale());
  for (std::size_t wr = 0; wr < fs.height() / l; ++wr) {
    for (std::size_t wc = 0; wc < fs.width() / l; ++wc) {
      const afformer::Matrix m = attention(window_tokens(fs, l, wr, wc), window_tokens(ft, l, wr, wc), layer);
      for (std::size_t r = 0; r < l; ++r) {
        for (std::size_t c = 0; c < l; ++c) {
          std::copy(m.row(r * l + c).begin(), m.row(r * l + c).end(), out.cell(wr * l + r, wc * l + c).begin());
        }
      }
    }
  }
  return out;
}

inline afformer::Matrix dual_softmax(const afformer::Matrix& c) {
  afformer::Matrix s(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      double row = 0.0, col = 0.0;
      for (std::size_t k = 0; k < c.cols(); ++k) row += std::exp(c(i, k) - c(i, j));
      for (std::size_t k = 0; k < c.rows(); ++k) col += std::exp(c(k, j) - c(i, j));
      s(i, j) = (1.0 / row) * (1.0 / col);
    }
  }
  return s;
}

// Mutual argmax with lowest-index ties, score strictly above threshold.
inline std::vector<std::pair<std::size_t, std::size_t>> mnn(const afformer::Matrix& s, double threshold) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < s.cols(); ++j) {
      if (s(i, j) > s(i, best_j)) best_j = j;
    }
    std::size_t best_i = 0;
    for (std::size_t k = 1; k < s.rows(); ++k) {
      if (s(k, best_j) > s(best_i, best_j)) best_i = k;
    }
    if (best_i == i && s(i, best_j) > threshold) out.emplace_back(i, best_j);
  }
  return out;
}

}  // namespace oracle
