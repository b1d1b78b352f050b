#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "afformer/grid.hpp"
#include "afformer/tensor_io.hpp"

namespace afformer {

using TensorMap = std::map<std::string, Tensor>;

// Fills `n` values uniformly in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
std::vector<double> seeded_uniform(std::size_t n, std::size_t fan_in, std::uint64_t seed);

struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in
  std::vector<double> bias;    // out

  static Linear seeded(std::size_t in, std::size_t out, std::uint64_t seed, bool with_bias = true);
  static Linear zeros(std::size_t in, std::size_t out);

  void apply(std::span<const double> x, std::span<double> y) const;
  Matrix apply(const Matrix& x) const;

  void export_to(const std::string& prefix, TensorMap& out) const;
  static Linear import_from(const std::string& prefix, const TensorMap& in);
};

// 3x3 convolution with replicate padding.
struct Conv2d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in x 3 x 3
  std::vector<double> bias;

  static Conv2d seeded(std::size_t in, std::size_t out, std::uint64_t seed);
  static Conv2d zeros(std::size_t in, std::size_t out);

  FeatureMap forward(const FeatureMap& x) const;

  void export_to(const std::string& prefix, TensorMap& out) const;
  static Conv2d import_from(const std::string& prefix, const TensorMap& in);
};

// Per-channel 3x3 convolution with replicate padding.
struct DepthwiseConv2d {
  std::size_t channels = 0;
  std::vector<double> weight;  // channels x 3 x 3
  std::vector<double> bias;

  static DepthwiseConv2d seeded(std::size_t channels, std::uint64_t seed);
  static DepthwiseConv2d zeros(std::size_t channels);

  FeatureMap forward(const FeatureMap& x) const;

  void export_to(const std::string& prefix, TensorMap& out) const;
  static DepthwiseConv2d import_from(const std::string& prefix, const TensorMap& in);
};

// Normalizes each cell over channels. eps sits inside the variance
// denominator so constant inputs map to beta instead of NaN.
struct LayerNorm {
  std::size_t dim = 0;
  double eps = 1e-6;
  std::vector<double> gamma;
  std::vector<double> beta;

  static LayerNorm identity(std::size_t dim);

  void apply_inplace(std::span<double> x) const;
  FeatureMap forward(const FeatureMap& x) const;

  void export_to(const std::string& prefix, TensorMap& out) const;
  static LayerNorm import_from(const std::string& prefix, const TensorMap& in);
};

void relu_inplace(FeatureMap& f);

// Writes every tensor as <role>.aftn plus manifest.json mapping role -> file.
void save_tensor_directory(const std::filesystem::path& dir, const TensorMap& tensors);
TensorMap load_tensor_directory(const std::filesystem::path& dir);

const Tensor& require_tensor(const TensorMap& in, const std::string& name,
                             std::initializer_list<std::uint64_t> dims);

}  // namespace afformer
