#include "afformer/matching.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "afformer/error.hpp"
#include "afformer/parallel.hpp"
#include "afformer/random.hpp"

namespace afformer {

Vec2 MatchSet::source_cell(const Match& m) const {
  return {static_cast<double>(m.source_index % source_width),
          static_cast<double>(m.source_index / source_width)};
}

Vec2 MatchSet::target_cell(const Match& m) const {
  return {static_cast<double>(m.target_index % target_width),
          static_cast<double>(m.target_index / target_width)};
}

Matrix correlation(const Matrix& fa, const Matrix& fb, double tau) {
  if (fa.cols() != fb.cols()) throw InputError("correlation: channel dims differ");
  if (!(tau > 0.0)) throw InputError("correlation: tau must be positive");
  Matrix c(fa.rows(), fb.rows());
  parallel_for(fa.rows(), [&](std::size_t i) {
    auto a = fa.row(i);
    for (std::size_t j = 0; j < fb.rows(); ++j) {
      auto b = fb.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      c(i, j) = tau * dot;
    }
  });
  return c;
}

AssignmentMatrix dual_softmax(const Matrix& c, double tau) {
  const std::size_t n = c.rows();
  const std::size_t m = c.cols();
  for (double v : c.data()) {
    if (!std::isfinite(v)) throw InputError("dual_softmax: non-finite correlation");
  }
  std::vector<double> row_max(n, -INFINITY), row_sum(n, 0.0);
  std::vector<double> col_max(m, -INFINITY), col_sum(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      row_max[i] = std::max(row_max[i], c(i, j));
      col_max[j] = std::max(col_max[j], c(i, j));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      row_sum[i] += std::exp(c(i, j) - row_max[i]);
      col_sum[j] += std::exp(c(i, j) - col_max[j]);
    }
  }
  AssignmentMatrix s{tau, Matrix(n, m)};
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double pr = std::exp(c(i, j) - row_max[i]) / row_sum[i];
      const double pc = std::exp(c(i, j) - col_max[j]) / col_sum[j];
      s.scores(i, j) = pr * pc;
    }
  });
  return s;
}

MatchSet mnn_filter(const AssignmentMatrix& s, double threshold, std::size_t source_width,
                    std::size_t target_width) {
  const std::size_t n = s.n();
  const std::size_t m = s.m();
  std::vector<std::size_t> row_arg(n, 0), col_arg(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < m; ++j) {
      if (s.scores(i, j) > s.scores(i, row_arg[i])) row_arg[i] = j;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 1; i < n; ++i) {
      if (s.scores(i, j) > s.scores(col_arg[j], j)) col_arg[j] = i;
    }
  }
  MatchSet out;
  out.source_width = source_width;
  out.target_width = target_width;
  if (m == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_arg[i];
    const double score = s.scores(i, j);
    if (col_arg[j] == i && score > threshold) {
      Match match;
      match.source_index = i;
      match.target_index = j;
      match.score = score;
      out.matches.push_back(match);
    }
  }
  return out;
}

Refiner Refiner::seeded(std::size_t window, std::uint64_t seed) {
  if (window == 0 || window % 2 == 0) throw ConfigError("refine window must be odd");
  return {window, Conv2d::seeded(window * window, kHidden, derive_seed(seed, 1)),
          Conv2d::seeded(kHidden, 2, derive_seed(seed, 2))};
}

Refiner Refiner::zeros(std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("refine window must be odd");
  return {window, Conv2d::zeros(window * window, kHidden), Conv2d::zeros(kHidden, 2)};
}

Vec2 Refiner::predict(const FeatureMap& feature) const {
  FeatureMap hidden = conv1.forward(feature);
  relu_inplace(hidden);
  const FeatureMap out = conv2.forward(hidden);
  const std::size_t c = window / 2;
  const double bound = 0.5 * (static_cast<double>(window) - 1.0);
  return {bound * std::tanh(out.at(c, c, 0)), bound * std::tanh(out.at(c, c, 1))};
}

void Refiner::export_to(const std::string& prefix, TensorMap& out) const {
  conv1.export_to(prefix + ".conv1", out);
  conv2.export_to(prefix + ".conv2", out);
}

Refiner Refiner::import_from(const std::string& prefix, const TensorMap& in) {
  Refiner r;
  r.conv1 = Conv2d::import_from(prefix + ".conv1", in);
  r.conv2 = Conv2d::import_from(prefix + ".conv2", in);
  r.window = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(r.conv1.in))));
  if (r.window * r.window != r.conv1.in || r.conv2.out != 2) {
    throw DimensionError("refiner weights have inconsistent shapes");
  }
  return r;
}

namespace {

bool window_inside(const FeatureMap& f, Vec2 center, std::size_t window) {
  const double half = static_cast<double>(window / 2);
  return center.x - half >= 0.0 && center.y - half >= 0.0 &&
         center.x + half <= static_cast<double>(f.width()) - 1.0 &&
         center.y + half <= static_cast<double>(f.height()) - 1.0;
}

std::vector<std::vector<double>> crop_normalized(const FeatureMap& f, Vec2 center,
                                                 std::size_t window) {
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto cx = static_cast<std::ptrdiff_t>(center.x);
  const auto cy = static_cast<std::ptrdiff_t>(center.y);
  std::vector<std::vector<double>> cells;
  cells.reserve(window * window);
  for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
    for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
      auto v = f.cell(static_cast<std::size_t>(cy + dy), static_cast<std::size_t>(cx + dx));
      std::vector<double> cell(v.begin(), v.end());
      double norm2 = 0.0;
      for (double x : cell) norm2 += x * x;
      if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& x : cell) x *= inv;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace

FeatureMap refinement_correlation(const FeatureMap& fa2, const FeatureMap& fb2, Vec2 source_center,
                                  Vec2 target_center, std::size_t window) {
  if (fa2.channels() != fb2.channels()) throw DimensionError("fine maps differ in channels");
  if (!window_inside(fa2, source_center, window) || !window_inside(fb2, target_center, window)) {
    throw InputError("refinement window leaves the fine map");
  }
  const auto src = crop_normalized(fa2, source_center, window);
  const auto dst = crop_normalized(fb2, target_center, window);
  const std::size_t cells = window * window;
  FeatureMap feat(window, window, cells, 2);
  for (std::size_t a = 0; a < cells; ++a) {
    for (std::size_t b = 0; b < cells; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < fa2.channels(); ++k) dot += src[a][k] * dst[b][k];
      feat.data()[a * cells + b] = dot;
    }
  }
  return feat;
}

MatchSet fine_refine(const MatchSet& coarse, const FeatureMap& fa2, const FeatureMap& fb2,
                     const Refiner& refiner, std::size_t ratio) {
  MatchSet out = coarse;
  const double k = static_cast<double>(ratio);
  parallel_for(out.matches.size(), [&](std::size_t idx) {
    Match& m = out.matches[idx];
    const Vec2 sc = coarse.source_cell(m);
    const Vec2 tc = coarse.target_cell(m);
    const Vec2 src_center{sc.x * k, sc.y * k};
    const Vec2 dst_center{tc.x * k, tc.y * k};
    m.residual = {0.0, 0.0};
    m.refined = dst_center;
    if (!window_inside(fa2, src_center, refiner.window) ||
        !window_inside(fb2, dst_center, refiner.window)) {
      m.flags |= kMatchUnrefined;
      return;
    }
    m.flags &= ~static_cast<std::uint32_t>(kMatchUnrefined);
    const FeatureMap feat = refinement_correlation(fa2, fb2, src_center, dst_center, refiner.window);
    m.residual = refiner.predict(feat);
    m.refined = {dst_center.x + m.residual.x, dst_center.y + m.residual.y};
  });
  return out;
}

std::string match_to_json_line(const MatchSet& set, const Match& m, int coarse_scale,
                               int fine_scale) {
  const Vec2 s = set.source_cell(m);
  const Vec2 t = set.target_cell(m);
  nlohmann::ordered_json j;
  j["src"] = {s.x * coarse_scale, s.y * coarse_scale};
  j["dst"] = {t.x * coarse_scale, t.y * coarse_scale};
  j["score"] = m.score;
  j["residual"] = {m.residual.x * fine_scale, m.residual.y * fine_scale};
  j["refined"] = {m.refined.x * fine_scale, m.refined.y * fine_scale};
  j["flags"] = nlohmann::json::array();
  if (m.flags & kMatchUnrefined) j["flags"].push_back("unrefined");
  return j.dump();
}

void write_matches_jsonl(const std::filesystem::path& path, const MatchSet& set, int coarse_scale,
                         int fine_scale) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const Match& m : set.matches) out << match_to_json_line(set, m, coarse_scale, fine_scale) << '\n';
}

namespace {

Vec2 read_pair(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string(key) + " must be [x, y]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

std::vector<MatchRecord> read_matches_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  std::vector<MatchRecord> records;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MatchRecord r;
      r.source_px = read_pair(j, "src");
      r.target_px = read_pair(j, "dst");
      r.score = j.at("score").get<double>();
      r.residual_px = read_pair(j, "residual");
      r.refined_px = read_pair(j, "refined");
      for (const auto& f : j.at("flags")) r.flags.push_back(f.get<std::string>());
      records.push_back(std::move(r));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string(), line_start + (e.byte > 0 ? e.byte - 1 : 0), e.what());
    } catch (const std::exception& e) {
      throw FormatError(path.string(), line_start, e.what());
    }
  }
  return records;
}

}  // namespace afformer
