#include "afformer/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "afformer/error.hpp"
#include "afformer/parallel.hpp"
#include "afformer/random.hpp"

namespace afformer {

AttentionLayer AttentionLayer::seeded(std::size_t dim, std::size_t heads, std::uint64_t seed) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionLayer l;
  l.dim = dim;
  l.heads = heads;
  l.wq = Linear::seeded(dim, dim, derive_seed(seed, 1), false);
  l.wk = Linear::seeded(dim, dim, derive_seed(seed, 2), false);
  l.wv = Linear::seeded(dim, dim, derive_seed(seed, 3), false);
  l.mlp1 = Linear::seeded(dim, dim, derive_seed(seed, 4));
  l.mlp2 = Linear::seeded(dim, dim, derive_seed(seed, 5));
  l.dwconv = DepthwiseConv2d::seeded(dim, derive_seed(seed, 6));
  l.norm = LayerNorm::identity(dim);
  return l;
}

AttentionLayer AttentionLayer::zeros(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) throw ConfigError("attention dim not divisible by heads");
  AttentionLayer l;
  l.dim = dim;
  l.heads = heads;
  l.wq = Linear::zeros(dim, dim);
  l.wk = Linear::zeros(dim, dim);
  l.wv = Linear::zeros(dim, dim);
  l.mlp1 = Linear::zeros(dim, dim);
  l.mlp2 = Linear::zeros(dim, dim);
  l.dwconv = DepthwiseConv2d::zeros(dim);
  l.norm = LayerNorm::identity(dim);
  return l;
}

void AttentionLayer::export_to(const std::string& prefix, TensorMap& out) const {
  wq.export_to(prefix + ".wq", out);
  wk.export_to(prefix + ".wk", out);
  wv.export_to(prefix + ".wv", out);
  mlp1.export_to(prefix + ".mlp1", out);
  mlp2.export_to(prefix + ".mlp2", out);
  dwconv.export_to(prefix + ".dwconv", out);
  norm.export_to(prefix + ".norm", out);
  Tensor h;
  h.dims = {1};
  h.values = {static_cast<double>(heads)};
  out[prefix + ".heads"] = h;
}

AttentionLayer AttentionLayer::import_from(const std::string& prefix, const TensorMap& in) {
  AttentionLayer l;
  l.wq = Linear::import_from(prefix + ".wq", in);
  l.wk = Linear::import_from(prefix + ".wk", in);
  l.wv = Linear::import_from(prefix + ".wv", in);
  l.mlp1 = Linear::import_from(prefix + ".mlp1", in);
  l.mlp2 = Linear::import_from(prefix + ".mlp2", in);
  l.dwconv = DepthwiseConv2d::import_from(prefix + ".dwconv", in);
  l.norm = LayerNorm::import_from(prefix + ".norm", in);
  l.dim = l.wq.out;
  l.heads = static_cast<std::size_t>(require_tensor(in, prefix + ".heads", {1}).values[0]);
  if (l.heads == 0 || l.dim % l.heads != 0) throw ConfigError("imported layer has invalid heads");
  return l;
}

AttentionOutput multi_head_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                                     const AttentionLayer& layer,
                                     std::span<const unsigned char> key_valid) {
  if (queries.rows() == 0 || keys.rows() == 0) throw InputError("attention over an empty token set");
  if (keys.rows() != values.rows()) throw DimensionError("key and value counts differ");
  if (queries.cols() != layer.dim || keys.cols() != layer.dim || values.cols() != layer.dim) {
    throw DimensionError("token dim does not match layer dim " + std::to_string(layer.dim));
  }
  if (!key_valid.empty() && key_valid.size() != keys.rows()) {
    throw DimensionError("key mask length mismatch");
  }
  const Matrix q = layer.wq.apply(queries);
  const Matrix k = layer.wk.apply(keys);
  const Matrix v = layer.wv.apply(values);
  const std::size_t n = q.rows();
  const std::size_t m = k.rows();
  const std::size_t dh = layer.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionOutput out{Matrix(n, layer.dim), AttentionWeights(n, m, layer.heads)};
  std::vector<double> logits(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < layer.heads; ++h) {
      const std::size_t off = h * dh;
      double max_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        if (!key_valid.empty() && key_valid[j] == 0) {
          logits[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(i, off + c) * k(j, off + c);
        logits[j] = dot * scale;
        max_logit = std::max(max_logit, logits[j]);
      }
      if (!std::isfinite(max_logit)) continue;  // every key masked
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double e = std::isfinite(logits[j]) ? std::exp(logits[j] - max_logit) : 0.0;
        out.weights.at(i, j, h) = e;
        sum += e;
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double p = out.weights.at(i, j, h) / sum;
        out.weights.at(i, j, h) = p;
        if (p == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) out.message(i, off + c) += p * v(j, off + c);
      }
    }
  }
  return out;
}

GlobalMessage global_message(const FeatureMap& fs, const FeatureMap& ft, const AttentionLayer& layer) {
  if (fs.height() % 4 != 0 || fs.width() % 4 != 0 || ft.height() % 4 != 0 || ft.width() % 4 != 0) {
    throw DimensionError("global attention needs dimensions divisible by 4");
  }
  const FeatureMap fs_coarse = avg_pool2(avg_pool2(fs));
  const FeatureMap ft_coarse = avg_pool2(avg_pool2(ft));
  const Matrix kv = ft_coarse.tokens();
  AttentionOutput att = multi_head_attention(fs_coarse.tokens(), kv, kv, layer);
  const FeatureMap coarse =
      FeatureMap::from_tokens(att.message, fs_coarse.height(), fs_coarse.width(), fs_coarse.scale());
  return {upsample_bilinear(coarse, 4), std::move(att.weights), fs_coarse.height(), fs_coarse.width()};
}

FeatureMap ffn_update(const FeatureMap& fs, const FeatureMap& message, const AttentionLayer& layer) {
  if (fs.height() != message.height() || fs.width() != message.width() ||
      fs.channels() != message.channels()) {
    throw DimensionError("ffn_update: feature and message shapes differ");
  }
  const Matrix hidden = layer.mlp1.apply(message.tokens());
  Matrix relu = hidden;
  for (double& v : relu.data()) v = std::max(v, 0.0);
  const Matrix mlp = layer.mlp2.apply(relu);
  FeatureMap mixed = fs;
  for (std::size_t i = 0; i < mixed.data().size(); ++i) mixed.data()[i] += mlp.data()[i];
  const FeatureMap normed = layer.norm.forward(layer.dwconv.forward(mixed));
  FeatureMap out = fs;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += normed.data()[i];
  return out;
}

GlobalBlockOutput global_attention_block(const FeatureMap& fs, const FeatureMap& ft,
                                         const AttentionLayer& layer) {
  GlobalMessage g = global_message(fs, ft, layer);
  FeatureMap updated = ffn_update(fs, g.message, layer);
  return {std::move(updated), std::move(g.message), std::move(g.attn)};
}

LocalAttentionOutput local_deformable_attention(const FeatureMap& fs, const FeatureMap& ft,
                                                const AffineField& field,
                                                const AttentionLayer& layer, double alpha) {
  const std::size_t l = field.window();
  if (field.rows() * l != fs.height() || field.cols() * l != fs.width()) {
    throw DimensionError("affine field windows do not tile the source map");
  }
  if (fs.channels() != ft.channels()) throw DimensionError("source/target channel mismatch");
  const std::size_t side = projected_side(l, alpha);

  LocalAttentionOutput out{FeatureMap(fs.height(), fs.width(), fs.channels(), fs.scale()),
                           std::vector<unsigned char>(field.size(), 0)};
  parallel_for(field.size(), [&](std::size_t k) {
    const std::size_t wr = k / field.cols();
    const std::size_t wc = k % field.cols();
    if (!field.valid(wr, wc)) return;
    const Vec2 origin{static_cast<double>(wc * l), static_cast<double>(wr * l)};
    const std::vector<Vec2> pts = project_patch(field.params(wr, wc), origin, l, alpha);
    Matrix kv(side * side, ft.channels());
    std::vector<unsigned char> mask(pts.size(), 0);
    bool any = false;
    for (std::size_t s = 0; s < pts.size(); ++s) {
      Sample smp = bilinear_sample(ft, pts[s]);
      mask[s] = smp.valid ? 1 : 0;
      any = any || smp.valid;
      std::copy(smp.value.begin(), smp.value.end(), kv.row(s).begin());
    }
    if (!any) return;
    Matrix q(l * l, fs.channels());
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t c = 0; c < l; ++c) {
        auto src = fs.cell(wr * l + r, wc * l + c);
        std::copy(src.begin(), src.end(), q.row(r * l + c).begin());
      }
    }
    const AttentionOutput att = multi_head_attention(q, kv, kv, layer, mask);
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t c = 0; c < l; ++c) {
        auto dst = out.message.cell(wr * l + r, wc * l + c);
        auto msg = att.message.row(r * l + c);
        std::copy(msg.begin(), msg.end(), dst.begin());
      }
    }
    out.window_active[k] = 1;
  });
  return out;
}

}  // namespace afformer
