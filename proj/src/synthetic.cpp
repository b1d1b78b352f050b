#include "afformer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "afformer/error.hpp"
#include "afformer/flow.hpp"
#include "afformer/random.hpp"

namespace afformer {

namespace {

constexpr std::size_t kSinusoidsPerChannel = 8;
constexpr double kMinFrequency = 0.05;  // cycles per cell
constexpr double kMaxFrequency = 0.25;
// Per-channel standard deviation. Backbone activations are large next to the
// unit-amplitude positional table and the layer-normalized updates; at unit
// scale those shared terms swamp the content and the assignment scores never
// clear the match threshold.
constexpr double kFeatureStd = 8.0;

void check_box(const AffineComponents& c, const char* which) {
  if (!RegularizationBox::contains(c)) {
    throw SpecError(std::string(which) + " affine components lie outside the regularization box");
  }
}

bool in_bounds(Vec2 p, std::size_t height, std::size_t width) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= static_cast<double>(width) - 1.0 &&
         p.y <= static_cast<double>(height) - 1.0;
}

FeatureMap smooth_features(std::size_t height, std::size_t width, std::size_t channels,
                           std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap f(height, width, channels, 8);
  struct Wave {
    double amp, kx, ky, phase;
  };
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::vector<Wave> waves(kSinusoidsPerChannel);
    double power = 0.0;
    for (Wave& w : waves) {
      w.amp = rng.uniform(0.5, 1.0);
      const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double freq = rng.uniform(kMinFrequency, kMaxFrequency);
      w.kx = 2.0 * std::numbers::pi * freq * std::cos(dir);
      w.ky = 2.0 * std::numbers::pi * freq * std::sin(dir);
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      power += 0.5 * w.amp * w.amp;
    }
    const double norm = kFeatureStd / std::sqrt(power);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        double v = 0.0;
        for (const Wave& w : waves) {
          v += w.amp * std::sin(w.kx * static_cast<double>(c) + w.ky * static_cast<double>(r) + w.phase);
        }
        f.at(r, c, ch) = v * norm;
      }
    }
  }
  return f;
}

}  // namespace

Warp WarpSpec::to_warp() const {
  Warp w;
  switch (kind) {
    case WarpKind::kAffine:
      check_box(components, "warp");
      w = Warp::from_affine(recompose_affine(components));
      break;
    case WarpKind::kPiecewiseAffine:
      w = Warp::piecewise(recompose_affine(components), recompose_affine(right), split_x);
      break;
    case WarpKind::kHomography:
      w = Warp::from_homography(homography);
      break;
  }
  w.validate();
  return w;
}

SyntheticPair gen_pair(const Scenario& s) {
  if (s.height % 4 != 0 || s.width % 4 != 0) throw SpecError("scenario dims must be divisible by 4");
  if (s.window == 0 || s.height % s.window != 0 || s.width % s.window != 0) {
    throw SpecError("scenario dims must be divisible by the window size");
  }
  if (s.channels == 0) throw SpecError("scenario needs at least one channel");
  if (!(s.warp.noise_sigma >= 0.0)) throw SpecError("noise_sigma must be non-negative");
  const Warp warp = s.warp.to_warp();

  SyntheticPair pair;
  pair.fa = smooth_features(s.height, s.width, s.channels, derive_seed(s.warp.seed, 1));
  pair.fb = FeatureMap(s.height, s.width, s.channels, 8);
  Rng noise(derive_seed(s.warp.seed, 2));
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      const auto src = warp.inverse({static_cast<double>(c), static_cast<double>(r)});
      if (src) {
        const Sample smp = bilinear_sample(pair.fa, *src);
        std::copy(smp.value.begin(), smp.value.end(), pair.fb.cell(r, c).begin());
      }
      if (s.warp.noise_sigma > 0.0) {
        for (double& v : pair.fb.cell(r, c)) v += s.warp.noise_sigma * noise.normal();
      }
    }
  }

  pair.gt_flow = flow_oracle_from_warp(warp, s.height, s.width, 0.0);
  GroundTruth& gt = pair.gt;
  gt.flow = pair.gt_flow;
  gt.flow_mask.assign(s.height * s.width, 0);
  gt.coords.resize(s.height * s.width);
  gt.coord_valid.assign(s.height * s.width, 0);
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      const std::size_t i = r * s.width + c;
      const Vec2 t = pair.gt_flow.target(r, c);
      gt.coords[i] = t;
      const bool inside = in_bounds(t, s.height, s.width);
      gt.flow_mask[i] = inside ? 1 : 0;
      gt.coord_valid[i] = inside ? 1 : 0;
    }
  }
  // Mutual nearest cells under the warp and its inverse.
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      const std::size_t i = r * s.width + c;
      if (!gt.coord_valid[i]) continue;
      const Vec2 t = gt.coords[i];
      const auto tc = static_cast<std::size_t>(std::lround(t.x));
      const auto tr = static_cast<std::size_t>(std::lround(t.y));
      const auto back = warp.inverse({static_cast<double>(tc), static_cast<double>(tr)});
      if (!back) continue;
      if (std::lround(back->x) == static_cast<long>(c) && std::lround(back->y) == static_cast<long>(r)) {
        gt.matches.emplace_back(i, tr * s.width + tc);
      }
    }
  }

  if (s.warp.kind == WarpKind::kAffine) {
    pair.gt_field = AffineField(s.height / s.window, s.width / s.window, s.window);
    for (std::size_t r = 0; r < pair.gt_field.rows(); ++r) {
      for (std::size_t c = 0; c < pair.gt_field.cols(); ++c) {
        pair.gt_field.params(r, c) = warp.affine;
        pair.gt_field.set_valid(r, c, !pair.gt_field.is_border(r, c));
      }
    }
  } else {
    AffineFieldOptions exact;
    exact.regularize = false;
    exact.select_low_uncertainty = false;
    pair.gt_field = build_affine_field(pair.gt_flow, s.window, exact);
  }
  return pair;
}

FlowMetrics eval_flow(const FlowField& pred, const FlowField& gt, const std::vector<unsigned char>& mask) {
  if (pred.height() != gt.height() || pred.width() != gt.width() || mask.size() != gt.cells()) {
    throw DimensionError("eval_flow: prediction, ground truth and mask differ in size");
  }
  std::vector<double> epe;
  for (std::size_t r = 0; r < gt.height(); ++r) {
    for (std::size_t c = 0; c < gt.width(); ++c) {
      if (!mask[r * gt.width() + c]) continue;
      epe.push_back(std::hypot(pred.ux(r, c) - gt.ux(r, c), pred.uy(r, c) - gt.uy(r, c)));
    }
  }
  if (epe.empty()) throw MetricError("eval_flow: empty mask");
  FlowMetrics m;
  m.count = epe.size();
  double sum = 0.0;
  std::size_t w1 = 0, w2 = 0, w5 = 0;
  for (double e : epe) {
    sum += e;
    w1 += e <= 1.0;
    w2 += e <= 2.0;
    w5 += e <= 5.0;
  }
  const double n = static_cast<double>(epe.size());
  m.mean_epe = sum / n;
  m.pct_within_1 = 100.0 * static_cast<double>(w1) / n;
  m.pct_within_2 = 100.0 * static_cast<double>(w2) / n;
  m.pct_within_5 = 100.0 * static_cast<double>(w5) / n;
  std::sort(epe.begin(), epe.end());
  const std::size_t mid = epe.size() / 2;
  m.median_epe = epe.size() % 2 == 1 ? epe[mid] : 0.5 * (epe[mid - 1] + epe[mid]);
  return m;
}

MatchMetrics eval_match_cells(std::span<const std::pair<Vec2, Vec2>> pairs, const GroundTruth& gt,
                              std::size_t source_width, double tol_cells) {
  MatchMetrics m;
  m.count = pairs.size();
  for (const auto& [src, dst] : pairs) {
    const auto i = static_cast<std::size_t>(std::lround(src.y)) * source_width +
                   static_cast<std::size_t>(std::lround(src.x));
    if (i >= gt.coords.size() || (!gt.coord_valid.empty() && !gt.coord_valid[i])) continue;
    if (std::hypot(dst.x - gt.coords[i].x, dst.y - gt.coords[i].y) <= tol_cells) ++m.correct;
  }
  m.precision_defined = m.count > 0;
  m.precision = m.count > 0 ? static_cast<double>(m.correct) / static_cast<double>(m.count) : 0.0;
  m.recall = gt.matches.empty() ? 0.0
                                : static_cast<double>(m.correct) / static_cast<double>(gt.matches.size());
  return m;
}

MatchMetrics eval_matches(const MatchSet& pred, const GroundTruth& gt, double tol_cells) {
  std::vector<std::pair<Vec2, Vec2>> pairs;
  pairs.reserve(pred.size());
  for (const Match& m : pred.matches) pairs.emplace_back(pred.source_cell(m), pred.target_cell(m));
  return eval_match_cells(pairs, gt, pred.source_width, tol_cells);
}

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& source,
                const std::string& where) {
  if (!obj.is_object()) throw FormatError(source, 0, where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) throw FormatError(source, 0, "unknown key '" + key + "' in " + where);
  }
}

AffineComponents components_from_json(const json& j, const std::string& source, const std::string& where) {
  check_keys(j, {"theta", "shear", "scale_x", "scale_y", "tx", "ty"}, source, where);
  AffineComponents c;
  c.theta = j.value("theta", 0.0);
  c.shear_m = j.value("shear", 0.0);
  c.scale_x = j.value("scale_x", 1.0);
  c.scale_y = j.value("scale_y", 1.0);
  c.translation = {j.value("tx", 0.0), j.value("ty", 0.0)};
  return c;
}

json components_to_json(const AffineComponents& c) {
  return json{{"theta", c.theta}, {"shear", c.shear_m}, {"scale_x", c.scale_x},
              {"scale_y", c.scale_y}, {"tx", c.translation.x}, {"ty", c.translation.y}};
}

}  // namespace

Scenario scenario_from_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(source, e.byte, e.what());
  }
  try {
    check_keys(j, {"version", "height", "width", "channels", "window", "warp", "noise_sigma", "seed"},
               source, "scenario");
    if (j.value("version", 0) != 1) throw FormatError(source, 0, "scenario version must be 1");
    Scenario s;
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.channels = j.value("channels", s.channels);
    s.window = j.value("window", s.window);
    s.warp.noise_sigma = j.value("noise_sigma", 0.0);
    s.warp.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("warp")) {
      const json& w = j.at("warp");
      if (!w.is_object() || !w.contains("kind")) throw FormatError(source, 0, "warp needs a kind");
      const std::string kind = w.at("kind").get<std::string>();
      if (kind == "affine") {
        json rest = w;
        rest.erase("kind");
        s.warp.kind = WarpKind::kAffine;
        s.warp.components = components_from_json(rest, source, "warp");
      } else if (kind == "piecewise-affine") {
        check_keys(w, {"kind", "left", "right", "split_x"}, source, "warp");
        s.warp.kind = WarpKind::kPiecewiseAffine;
        s.warp.components = components_from_json(w.at("left"), source, "warp.left");
        s.warp.right = components_from_json(w.at("right"), source, "warp.right");
        s.warp.split_x = w.value("split_x", static_cast<double>(s.width) / 2.0);
      } else if (kind == "homography") {
        check_keys(w, {"kind", "h"}, source, "warp");
        s.warp.kind = WarpKind::kHomography;
        const auto h = w.at("h").get<std::vector<double>>();
        if (h.size() != 9) throw FormatError(source, 0, "homography needs 9 values");
        std::copy(h.begin(), h.end(), s.warp.homography.h.begin());
      } else {
        throw FormatError(source, 0, "unknown warp kind '" + kind + "'");
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(source, 0, e.what());
  }
}

std::string scenario_to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["height"] = s.height;
  j["width"] = s.width;
  j["channels"] = s.channels;
  j["window"] = s.window;
  json w;
  switch (s.warp.kind) {
    case WarpKind::kAffine:
      w = components_to_json(s.warp.components);
      w["kind"] = "affine";
      break;
    case WarpKind::kPiecewiseAffine:
      w = json{{"kind", "piecewise-affine"},
               {"left", components_to_json(s.warp.components)},
               {"right", components_to_json(s.warp.right)},
               {"split_x", s.warp.split_x}};
      break;
    case WarpKind::kHomography:
      w = json{{"kind", "homography"},
               {"h", std::vector<double>(s.warp.homography.h.begin(), s.warp.homography.h.end())}};
      break;
  }
  j["warp"] = w;
  j["noise_sigma"] = s.warp.noise_sigma;
  j["seed"] = s.warp.seed;
  return j.dump(2);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "cannot open scenario");
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str(), path.string());
}

Tensor feature_map_to_tensor(const FeatureMap& f) {
  Tensor t;
  t.dims = {f.height(), f.width(), f.channels()};
  t.values = f.data();
  return t;
}

FeatureMap feature_map_from_tensor(const Tensor& t, int scale) {
  if (t.dims.size() != 3) throw DimensionError("feature tensor must be H x W x C");
  return FeatureMap(t.dims[0], t.dims[1], t.dims[2], scale, t.values);
}

namespace {

Tensor mask_tensor(const std::vector<unsigned char>& mask, std::size_t h, std::size_t w) {
  Tensor t;
  t.dims = {h, w};
  t.values.assign(mask.begin(), mask.end());
  return t;
}

}  // namespace

void write_pair(const std::filesystem::path& dir, const Scenario& scenario, const SyntheticPair& pair) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "fa.aftn", feature_map_to_tensor(pair.fa));
  write_tensor(dir / "fb.aftn", feature_map_to_tensor(pair.fb));
  write_tensor(dir / "gt_flow.aftn", flow_to_tensor(pair.gt_flow));
  write_tensor(dir / "gt_flow_mask.aftn",
               mask_tensor(pair.gt.flow_mask, pair.gt_flow.height(), pair.gt_flow.width()));
  write_tensor(dir / "gt_field.aftn", affine_field_to_tensor(pair.gt_field));
  Tensor matches;
  matches.dims = {pair.gt.matches.size(), 2};
  for (auto [i, j] : pair.gt.matches) {
    matches.values.push_back(static_cast<double>(i));
    matches.values.push_back(static_cast<double>(j));
  }
  write_tensor(dir / "gt_matches.aftn", matches);
  Tensor coords;
  coords.dims = {pair.gt.coords.size(), 3};
  for (std::size_t i = 0; i < pair.gt.coords.size(); ++i) {
    coords.values.insert(coords.values.end(),
                         {pair.gt.coords[i].x, pair.gt.coords[i].y, pair.gt.coord_valid[i] ? 1.0 : 0.0});
  }
  write_tensor(dir / "gt_coords.aftn", coords);
  {
    std::ofstream out(dir / "scenario.json", std::ios::binary | std::ios::trunc);
    out << scenario_to_json(scenario) << '\n';
  }
  nlohmann::ordered_json report;
  report["gt_matches"] = pair.gt.matches.size();
  std::size_t valid = 0;
  for (auto v : pair.gt.flow_mask) valid += v != 0;
  report["gt_flow_valid_cells"] = valid;
  report["cells"] = pair.gt_flow.cells();
  std::ofstream out(dir / "report.json", std::ios::binary | std::ios::trunc);
  out << report.dump(2) << '\n';
}

LoadedPair read_pair(const std::filesystem::path& dir) {
  LoadedPair lp;
  lp.scenario = load_scenario(dir / "scenario.json");
  SyntheticPair& p = lp.pair;
  p.fa = feature_map_from_tensor(read_tensor(dir / "fa.aftn"));
  p.fb = feature_map_from_tensor(read_tensor(dir / "fb.aftn"));
  p.gt_flow = flow_from_tensor(read_tensor(dir / "gt_flow.aftn"));
  p.gt_field = affine_field_from_tensor(read_tensor(dir / "gt_field.aftn"), lp.scenario.window);
  const Tensor mask = read_tensor(dir / "gt_flow_mask.aftn");
  if (mask.values.size() != p.gt_flow.cells()) {
    throw FormatError((dir / "gt_flow_mask.aftn").string(), 8, "mask size does not match flow");
  }
  p.gt.flow = p.gt_flow;
  p.gt.flow_mask.assign(mask.values.begin(), mask.values.end());
  const Tensor matches = read_tensor(dir / "gt_matches.aftn");
  if (matches.dims.size() != 2 || matches.dims[1] != 2) {
    throw FormatError((dir / "gt_matches.aftn").string(), 8, "gt matches must be K x 2");
  }
  for (std::size_t k = 0; k < matches.dims[0]; ++k) {
    p.gt.matches.emplace_back(static_cast<std::size_t>(matches.values[2 * k]),
                              static_cast<std::size_t>(matches.values[2 * k + 1]));
  }
  const Tensor coords = read_tensor(dir / "gt_coords.aftn");
  if (coords.dims.size() != 2 || coords.dims[1] != 3) {
    throw FormatError((dir / "gt_coords.aftn").string(), 8, "gt coords must be N x 3");
  }
  for (std::size_t k = 0; k < coords.dims[0]; ++k) {
    p.gt.coords.push_back({coords.values[3 * k], coords.values[3 * k + 1]});
    p.gt.coord_valid.push_back(coords.values[3 * k + 2] != 0.0 ? 1 : 0);
  }
  return lp;
}

}  // namespace afformer
