#include "afformer/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "afformer/error.hpp"

namespace afformer {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

bool is_valid_scale(int scale) {
  // 2, 8 and 32 are the working resolutions; 4 and 16 appear between
  // successive 2x pooling/upsampling steps.
  return scale == 2 || scale == 4 || scale == 8 || scale == 16 || scale == 32;
}

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t channels, int scale)
    : height_(height), width_(width), channels_(channels), scale_(scale),
      data_(height * width * channels, 0.0) {
  if (!is_valid_scale(scale)) throw DimensionError("invalid scale 1/" + std::to_string(scale));
}

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t channels, int scale,
                       std::vector<double> data)
    : height_(height), width_(width), channels_(channels), scale_(scale),
      data_(std::move(data)) {
  if (!is_valid_scale(scale)) throw DimensionError("invalid scale 1/" + std::to_string(scale));
  if (data_.size() != height * width * channels) {
    throw DimensionError("feature map data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(height) + "x" + std::to_string(width) + "x" +
                         std::to_string(channels));
  }
  if (!all_finite()) throw InputError("feature map contains non-finite values");
}

FeatureMap FeatureMap::from_tokens(const Matrix& tokens, std::size_t height, std::size_t width,
                                   int scale) {
  if (tokens.rows() != height * width) {
    throw DimensionError("token count " + std::to_string(tokens.rows()) + " != " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  return FeatureMap(height, width, tokens.cols(), scale, tokens.data());
}

bool FeatureMap::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

FeatureMap avg_pool2(const FeatureMap& f) {
  if (f.height() % 2 != 0 || f.width() % 2 != 0) {
    throw DimensionError("avg_pool2 needs even dimensions, got " + std::to_string(f.height()) +
                         "x" + std::to_string(f.width()));
  }
  FeatureMap out(f.height() / 2, f.width() / 2, f.channels(), f.scale() * 2);
  for (std::size_t r = 0; r < out.height(); ++r) {
    for (std::size_t c = 0; c < out.width(); ++c) {
      for (std::size_t ch = 0; ch < f.channels(); ++ch) {
        const double sum = f.at(2 * r, 2 * c, ch) + f.at(2 * r, 2 * c + 1, ch) +
                           f.at(2 * r + 1, 2 * c, ch) + f.at(2 * r + 1, 2 * c + 1, ch);
        out.at(r, c, ch) = 0.25 * sum;
      }
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

// Source taps for one output index under the half-pixel convention.
Tap half_pixel_tap(std::size_t out_index, std::size_t factor, std::size_t in_size) {
  double src = (static_cast<double>(out_index) + 0.5) / static_cast<double>(factor) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

FeatureMap upsample_bilinear(const FeatureMap& f, std::size_t factor) {
  if (factor == 0 || f.scale() % static_cast<int>(factor) != 0) {
    throw DimensionError("upsample factor " + std::to_string(factor) + " incompatible with 1/" +
                         std::to_string(f.scale()));
  }
  FeatureMap out(f.height() * factor, f.width() * factor, f.channels(),
                 f.scale() / static_cast<int>(factor));
  if (f.cells() == 0) return out;
  std::vector<Tap> col_taps(out.width());
  for (std::size_t c = 0; c < out.width(); ++c) col_taps[c] = half_pixel_tap(c, factor, f.width());
  for (std::size_t r = 0; r < out.height(); ++r) {
    const Tap ty = half_pixel_tap(r, factor, f.height());
    for (std::size_t c = 0; c < out.width(); ++c) {
      const Tap& tx = col_taps[c];
      for (std::size_t ch = 0; ch < f.channels(); ++ch) {
        const double top = (1.0 - tx.frac) * f.at(ty.lo, tx.lo, ch) + tx.frac * f.at(ty.lo, tx.hi, ch);
        const double bot = (1.0 - tx.frac) * f.at(ty.hi, tx.lo, ch) + tx.frac * f.at(ty.hi, tx.hi, ch);
        out.at(r, c, ch) = (1.0 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
  return out;
}

FeatureMap upsample2(const FeatureMap& f) { return upsample_bilinear(f, 2); }

Sample bilinear_sample(const FeatureMap& f, Vec2 p) {
  if (std::isnan(p.x) || std::isnan(p.y)) throw InputError("bilinear_sample: NaN coordinate");
  Sample s;
  s.value.assign(f.channels(), 0.0);
  const double max_x = static_cast<double>(f.width()) - 1.0;
  const double max_y = static_cast<double>(f.height()) - 1.0;
  if (f.cells() == 0 || !(p.x >= 0.0 && p.x <= max_x && p.y >= 0.0 && p.y <= max_y)) {
    return s;
  }
  s.valid = true;
  const auto x0 = static_cast<std::size_t>(std::floor(p.x));
  const auto y0 = static_cast<std::size_t>(std::floor(p.y));
  const std::size_t x1 = std::min(x0 + 1, f.width() - 1);
  const std::size_t y1 = std::min(y0 + 1, f.height() - 1);
  const double fx = p.x - static_cast<double>(x0);
  const double fy = p.y - static_cast<double>(y0);
  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w01 = fx * (1.0 - fy);
  const double w10 = (1.0 - fx) * fy;
  const double w11 = fx * fy;
  for (std::size_t ch = 0; ch < f.channels(); ++ch) {
    s.value[ch] = w00 * f.at(y0, x0, ch) + w01 * f.at(y0, x1, ch) + w10 * f.at(y1, x0, ch) +
                  w11 * f.at(y1, x1, ch);
  }
  return s;
}

std::vector<Sample> bilinear_sample(const FeatureMap& f, std::span<const Vec2> points) {
  std::vector<Sample> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(bilinear_sample(f, p));
  return out;
}

std::vector<double> softmax_stable(std::span<const double> logits) {
  if (logits.empty()) return {};
  double max_logit = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw InputError("softmax_stable: non-finite logit");
    max_logit = std::max(max_logit, v);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

PositionalEncoding sinusoidal_encoding(std::size_t height, std::size_t width, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw ConfigError("positional encoding dim must be a positive multiple of 4, got " +
                      std::to_string(dim));
  }
  const std::size_t bands = dim / 4;
  std::vector<double> freq(bands);
  for (std::size_t k = 0; k < bands; ++k) {
    freq[k] = std::exp(-std::log(10000.0) * static_cast<double>(4 * k) / static_cast<double>(dim));
  }
  std::vector<double> data(height * width * dim);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double* v = data.data() + (r * width + c) * dim;
      for (std::size_t k = 0; k < bands; ++k) {
        const double ax = static_cast<double>(c) * freq[k];
        const double ay = static_cast<double>(r) * freq[k];
        v[4 * k + 0] = std::sin(ax);
        v[4 * k + 1] = std::cos(ax);
        v[4 * k + 2] = std::sin(ay);
        v[4 * k + 3] = std::cos(ay);
      }
    }
  }
  return PositionalEncoding(height, width, dim, std::move(data));
}

void add_positional_encoding(FeatureMap& f, const PositionalEncoding& pe) {
  if (pe.height() != f.height() || pe.width() != f.width() || pe.dim() != f.channels()) {
    throw DimensionError("positional encoding does not cover the feature map");
  }
  for (std::size_t i = 0; i < f.data().size(); ++i) f.data()[i] += pe.data()[i];
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double norm2 = 0.0;
    for (double v : m.row(r)) norm2 += v * v;
    if (norm2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : out.row(r)) v *= inv;
  }
  return out;
}

}  // namespace afformer
