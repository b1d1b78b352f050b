#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "afformer/grid.hpp"
#include "afformer/random.hpp"
#include "afformer/tensor_io.hpp"

namespace testing {

inline afformer::Matrix random_matrix(afformer::Rng& rng, std::size_t rows, std::size_t cols,
                                      double lo = -1.0, double hi = 1.0) {
  afformer::Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline afformer::FeatureMap random_map(afformer::Rng& rng, std::size_t h, std::size_t w, std::size_t c,
                                       int scale = 8) {
  afformer::FeatureMap f(h, w, c, scale);
  for (double& v : f.data()) v = rng.uniform(-1.0, 1.0);
  return f;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("afformer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Compares `bytes` with a stored golden file. Setting AFFORMER_UPDATE_GOLDEN
// rewrites the file instead.
inline bool matches_golden(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const std::filesystem::path path = std::filesystem::path(AFFORMER_GOLDEN_DIR) / name;
  if (std::getenv("AFFORMER_UPDATE_GOLDEN") != nullptr) {
    afformer::write_file_bytes(path, bytes);
    return true;
  }
  return afformer::read_file_bytes(path) == bytes;
}

}  // namespace testing
