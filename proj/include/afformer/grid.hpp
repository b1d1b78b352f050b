#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace afformer {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

// Dense row-major matrix of doubles. Token sets are matrices with one token
// per row.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// H x W x C grid of feature vectors at pyramid scale 1/scale. Stored
// row-major as (row, col, channel), so the data is also an (H*W) x C token
// matrix.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels, int scale);
  // Validates length, scale and finiteness.
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels, int scale,
             std::vector<double> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t cells() const { return height_ * width_; }
  int scale() const { return scale_; }

  double& at(std::size_t r, std::size_t c, std::size_t ch) {
    return data_[(r * width_ + c) * channels_ + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[(r * width_ + c) * channels_ + ch];
  }

  std::span<double> cell(std::size_t r, std::size_t c) {
    return {data_.data() + (r * width_ + c) * channels_, channels_};
  }
  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return {data_.data() + (r * width_ + c) * channels_, channels_};
  }
  std::span<const double> cell(std::size_t index) const {
    return {data_.data() + index * channels_, channels_};
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix tokens() const { return Matrix(cells(), channels_, data_); }
  static FeatureMap from_tokens(const Matrix& tokens, std::size_t height, std::size_t width,
                                int scale);

  bool all_finite() const;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  int scale_ = 8;
  std::vector<double> data_;
};

// Precomputed 2D sinusoidal table; same layout as a FeatureMap.
class PositionalEncoding {
 public:
  PositionalEncoding(std::size_t height, std::size_t width, std::size_t dim,
                     std::vector<double> data)
      : height_(height), width_(width), dim_(dim), data_(std::move(data)) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t dim() const { return dim_; }
  std::size_t positions() const { return height_ * width_; }

  std::span<const double> at(std::size_t index) const {
    return {data_.data() + index * dim_, dim_};
  }
  std::span<const double> at(std::size_t r, std::size_t c) const { return at(r * width_ + c); }

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t dim_;
  std::vector<double> data_;
};

struct Sample {
  std::vector<double> value;
  bool valid = false;
};

bool is_valid_scale(int scale);

// Mean of each 2x2 block; halves both dimensions and doubles the scale
// denominator.
FeatureMap avg_pool2(const FeatureMap& f);

// Bilinear upsampling by an integer factor with the half-pixel
// (align-corners = false) convention and border clamping. Constants are
// preserved exactly.
FeatureMap upsample_bilinear(const FeatureMap& f, std::size_t factor);
FeatureMap upsample2(const FeatureMap& f);

// Bilinear read at continuous (x = column, y = row) coordinates. Points
// outside [0, W-1] x [0, H-1] give the zero vector with valid = false.
std::vector<Sample> bilinear_sample(const FeatureMap& f, std::span<const Vec2> points);
Sample bilinear_sample(const FeatureMap& f, Vec2 point);

// Max-shifted softmax. Throws InputError on non-finite logits.
std::vector<double> softmax_stable(std::span<const double> logits);

// dim/4 frequency bands; channel 4k holds sin(x w_k), 4k+1 cos(x w_k),
// 4k+2 sin(y w_k), 4k+3 cos(y w_k) with w_k = 10000^(-4k/dim).
PositionalEncoding sinusoidal_encoding(std::size_t height, std::size_t width, std::size_t dim);

// Adds the encoding in place (element-wise summation onto features).
void add_positional_encoding(FeatureMap& f, const PositionalEncoding& pe);

// L2-normalizes every row; zero rows stay zero.
Matrix l2_normalize_rows(const Matrix& m);

}  // namespace afformer
