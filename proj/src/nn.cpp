#include "afformer/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "afformer/error.hpp"
#include "afformer/random.hpp"

namespace afformer {

std::vector<double> seeded_uniform(std::size_t n, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

namespace {

Tensor make_tensor(std::vector<std::uint64_t> dims, const std::vector<double>& values) {
  Tensor t;
  t.dims = std::move(dims);
  t.values = values;
  return t;
}

// Replicate padding: clamp the neighbor index into the grid.
inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

}  // namespace

const Tensor& require_tensor(const TensorMap& in, const std::string& name,
                             std::initializer_list<std::uint64_t> dims) {
  auto it = in.find(name);
  if (it == in.end()) throw InputError("missing weight tensor '" + name + "'");
  if (!std::equal(it->second.dims.begin(), it->second.dims.end(), dims.begin(), dims.end())) {
    throw DimensionError("weight tensor '" + name + "' has unexpected shape");
  }
  return it->second;
}

Linear Linear::seeded(std::size_t in, std::size_t out, std::uint64_t seed, bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = seeded_uniform(in * out, in, derive_seed(seed, 0));
  l.bias = with_bias ? seeded_uniform(out, in, derive_seed(seed, 1)) : std::vector<double>(out, 0.0);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return Linear{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
}

void Linear::apply(std::span<const double> x, std::span<double> y) const {
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = weight.data() + o * in;
    double acc = bias[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

Matrix Linear::apply(const Matrix& x) const {
  if (x.cols() != in) throw DimensionError("linear layer expects " + std::to_string(in) + " inputs");
  Matrix y(x.rows(), out);
  for (std::size_t r = 0; r < x.rows(); ++r) apply(x.row(r), y.row(r));
  return y;
}

void Linear::export_to(const std::string& prefix, TensorMap& out_map) const {
  out_map[prefix + ".weight"] = make_tensor({out, in}, weight);
  out_map[prefix + ".bias"] = make_tensor({out}, bias);
}

Linear Linear::import_from(const std::string& prefix, const TensorMap& in_map) {
  auto it = in_map.find(prefix + ".weight");
  if (it == in_map.end() || it->second.dims.size() != 2) {
    throw InputError("missing weight tensor '" + prefix + ".weight'");
  }
  Linear l;
  l.out = it->second.dims[0];
  l.in = it->second.dims[1];
  l.weight = it->second.values;
  l.bias = require_tensor(in_map, prefix + ".bias", {l.out}).values;
  return l;
}

Conv2d Conv2d::seeded(std::size_t in, std::size_t out, std::uint64_t seed) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.weight = seeded_uniform(out * in * 9, in * 9, derive_seed(seed, 0));
  c.bias = seeded_uniform(out, in * 9, derive_seed(seed, 1));
  return c;
}

Conv2d Conv2d::zeros(std::size_t in, std::size_t out) {
  return Conv2d{in, out, std::vector<double>(out * in * 9, 0.0), std::vector<double>(out, 0.0)};
}

FeatureMap Conv2d::forward(const FeatureMap& x) const {
  if (x.channels() != in) {
    throw DimensionError("conv expects " + std::to_string(in) + " channels, got " +
                         std::to_string(x.channels()));
  }
  FeatureMap y(x.height(), x.width(), out, x.scale());
  const auto h = static_cast<std::ptrdiff_t>(x.height());
  const auto w = static_cast<std::ptrdiff_t>(x.width());
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      std::span<double> dst = y.cell(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      for (std::size_t o = 0; o < out; ++o) dst[o] = bias[o];
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
        const std::size_t sr = clamp_index(r + ky - 1, x.height());
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const std::size_t sc = clamp_index(c + kx - 1, x.width());
          std::span<const double> src = x.cell(sr, sc);
          const std::size_t tap = static_cast<std::size_t>(ky * 3 + kx);
          for (std::size_t o = 0; o < out; ++o) {
            const double* wrow = weight.data() + o * in * 9 + tap;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += wrow[i * 9] * src[i];
            dst[o] += acc;
          }
        }
      }
    }
  }
  return y;
}

void Conv2d::export_to(const std::string& prefix, TensorMap& out_map) const {
  out_map[prefix + ".weight"] = make_tensor({out, in, 3, 3}, weight);
  out_map[prefix + ".bias"] = make_tensor({out}, bias);
}

Conv2d Conv2d::import_from(const std::string& prefix, const TensorMap& in_map) {
  auto it = in_map.find(prefix + ".weight");
  if (it == in_map.end() || it->second.dims.size() != 4) {
    throw InputError("missing weight tensor '" + prefix + ".weight'");
  }
  Conv2d c;
  c.out = it->second.dims[0];
  c.in = it->second.dims[1];
  require_tensor(in_map, prefix + ".weight", {c.out, c.in, 3, 3});
  c.weight = it->second.values;
  c.bias = require_tensor(in_map, prefix + ".bias", {c.out}).values;
  return c;
}

DepthwiseConv2d DepthwiseConv2d::seeded(std::size_t channels, std::uint64_t seed) {
  DepthwiseConv2d d;
  d.channels = channels;
  d.weight = seeded_uniform(channels * 9, 9, derive_seed(seed, 0));
  d.bias = seeded_uniform(channels, 9, derive_seed(seed, 1));
  return d;
}

DepthwiseConv2d DepthwiseConv2d::zeros(std::size_t channels) {
  return DepthwiseConv2d{channels, std::vector<double>(channels * 9, 0.0),
                         std::vector<double>(channels, 0.0)};
}

FeatureMap DepthwiseConv2d::forward(const FeatureMap& x) const {
  if (x.channels() != channels) throw DimensionError("depthwise conv channel mismatch");
  FeatureMap y(x.height(), x.width(), channels, x.scale());
  const auto h = static_cast<std::ptrdiff_t>(x.height());
  const auto w = static_cast<std::ptrdiff_t>(x.width());
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      std::span<double> dst = y.cell(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = bias[ch];
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
        const std::size_t sr = clamp_index(r + ky - 1, x.height());
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const std::size_t sc = clamp_index(c + kx - 1, x.width());
          std::span<const double> src = x.cell(sr, sc);
          const std::size_t tap = static_cast<std::size_t>(ky * 3 + kx);
          for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] += weight[ch * 9 + tap] * src[ch];
        }
      }
    }
  }
  return y;
}

void DepthwiseConv2d::export_to(const std::string& prefix, TensorMap& out_map) const {
  out_map[prefix + ".weight"] = make_tensor({channels, 3, 3}, weight);
  out_map[prefix + ".bias"] = make_tensor({channels}, bias);
}

DepthwiseConv2d DepthwiseConv2d::import_from(const std::string& prefix, const TensorMap& in_map) {
  auto it = in_map.find(prefix + ".bias");
  if (it == in_map.end() || it->second.dims.size() != 1) {
    throw InputError("missing weight tensor '" + prefix + ".bias'");
  }
  DepthwiseConv2d d;
  d.channels = it->second.dims[0];
  d.bias = it->second.values;
  d.weight = require_tensor(in_map, prefix + ".weight", {d.channels, 3, 3}).values;
  return d;
}

LayerNorm LayerNorm::identity(std::size_t dim) {
  LayerNorm ln;
  ln.dim = dim;
  ln.gamma.assign(dim, 1.0);
  ln.beta.assign(dim, 0.0);
  return ln;
}

void LayerNorm::apply_inplace(std::span<double> x) const {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(dim);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(dim);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < dim; ++i) x[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
}

FeatureMap LayerNorm::forward(const FeatureMap& x) const {
  if (x.channels() != dim) throw DimensionError("layer norm channel mismatch");
  FeatureMap y = x;
  for (std::size_t r = 0; r < y.height(); ++r) {
    for (std::size_t c = 0; c < y.width(); ++c) apply_inplace(y.cell(r, c));
  }
  return y;
}

void LayerNorm::export_to(const std::string& prefix, TensorMap& out_map) const {
  out_map[prefix + ".gamma"] = make_tensor({dim}, gamma);
  out_map[prefix + ".beta"] = make_tensor({dim}, beta);
}

LayerNorm LayerNorm::import_from(const std::string& prefix, const TensorMap& in_map) {
  auto it = in_map.find(prefix + ".gamma");
  if (it == in_map.end() || it->second.dims.size() != 1) {
    throw InputError("missing weight tensor '" + prefix + ".gamma'");
  }
  LayerNorm ln;
  ln.dim = it->second.dims[0];
  ln.gamma = it->second.values;
  ln.beta = require_tensor(in_map, prefix + ".beta", {ln.dim}).values;
  return ln;
}

void relu_inplace(FeatureMap& f) {
  for (double& v : f.data()) v = std::max(v, 0.0);
}

void save_tensor_directory(const std::filesystem::path& dir, const TensorMap& tensors) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::ordered_json::object();
  for (const auto& [role, tensor] : tensors) {
    const std::string file = role + ".aftn";
    write_tensor(dir / file, tensor);
    manifest["tensors"][role] = file;
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

TensorMap load_tensor_directory(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(manifest_path.string(), 0, "cannot open manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string(), e.byte, e.what());
  }
  if (manifest.value("version", 0) != 1 || !manifest.contains("tensors")) {
    throw FormatError(manifest_path.string(), 0, "unsupported manifest");
  }
  TensorMap out;
  for (const auto& [role, file] : manifest["tensors"].items()) {
    out[role] = read_tensor(dir / file.get<std::string>());
  }
  return out;
}

}  // namespace afformer
