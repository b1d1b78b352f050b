#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "afformer/grid.hpp"

namespace afformer {

// Per-cell correspondence estimate at 1/8 scale: absolute target coordinates
// (ux, uy) in target cells and log standard deviations (wx, wy).
// Stored interleaved as (ux, uy, wx, wy) per cell, row-major.
class FlowField {
 public:
  FlowField() = default;
  FlowField(std::size_t height, std::size_t width)
      : height_(height), width_(width), data_(height * width * 4, 0.0) {}
  FlowField(std::size_t height, std::size_t width, std::vector<double> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t cells() const { return height_ * width_; }

  double& ux(std::size_t r, std::size_t c) { return data_[(r * width_ + c) * 4 + 0]; }
  double& uy(std::size_t r, std::size_t c) { return data_[(r * width_ + c) * 4 + 1]; }
  double& wx(std::size_t r, std::size_t c) { return data_[(r * width_ + c) * 4 + 2]; }
  double& wy(std::size_t r, std::size_t c) { return data_[(r * width_ + c) * 4 + 3]; }
  double ux(std::size_t r, std::size_t c) const { return data_[(r * width_ + c) * 4 + 0]; }
  double uy(std::size_t r, std::size_t c) const { return data_[(r * width_ + c) * 4 + 1]; }
  double wx(std::size_t r, std::size_t c) const { return data_[(r * width_ + c) * 4 + 2]; }
  double wy(std::size_t r, std::size_t c) const { return data_[(r * width_ + c) * 4 + 3]; }

  Vec2 target(std::size_t r, std::size_t c) const { return {ux(r, c), uy(r, c)}; }
  double sigma_x(std::size_t r, std::size_t c) const { return std::exp(wx(r, c)); }
  double sigma_y(std::size_t r, std::size_t c) const { return std::exp(wy(r, c)); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

}  // namespace afformer
