// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "afformer/affine.hpp"
#include "afformer/attention.hpp"
#include "afformer/flow.hpp"
#include "afformer/fusion.hpp"
#include "afformer/losses.hpp"
#include "afformer/matching.hpp"
#include "afformer/parallel.hpp"
#include "afformer/pipeline.hpp"
#include "afformer/random.hpp"
#include "afformer/synthetic.hpp"
#include "afformer/tensor_io.hpp"
#include "afformer/warp.hpp"
#include "oracles.hpp"

using namespace afformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double coeff_diff(const AffineParams& a, const AffineParams& b) {
  return std::max({std::abs(a.a11 - b.a11), std::abs(a.a12 - b.a12), std::abs(a.a13 - b.a13),
                   std::abs(a.a21 - b.a21), std::abs(a.a22 - b.a22), std::abs(a.a23 - b.a23)});
}

AffineComponents in_box(Rng& rng, double margin) {
  using Box = RegularizationBox;
  AffineComponents c;
  c.theta = rng.uniform(-Box::kThetaMax + margin, Box::kThetaMax - margin);
  c.shear_m = rng.uniform(-Box::kShearMax + margin, Box::kShearMax - margin);
  c.scale_x = rng.uniform(Box::kScaleMin + margin, Box::kScaleMax - margin);
  c.scale_y = rng.uniform(Box::kScaleMin + margin, Box::kScaleMax - margin);
  c.translation = {rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)};
  return c;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

FeatureMap random_map(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  FeatureMap f(h, w, c, 8);
  for (double& v : f.data()) v = rng.uniform(-1.0, 1.0);
  return f;
}

Outcome affine_recovery() {
  Rng rng(1001);
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t windows = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const AffineParams a = recompose_affine(in_box(rng, 1e-3));
    const AffineField field = build_affine_field(flow_oracle_from_warp(Warp::from_affine(a), 24, 24), 4);
    for (std::size_t r = 1; r + 1 < field.rows(); ++r) {
      for (std::size_t c = 1; c + 1 < field.cols(); ++c) {
        worst = std::max(worst, coeff_diff(field.params(r, c), a));
        ++windows;
      }
    }
  }
  const double elapsed = seconds_since(start);
  std::ostringstream d;
  d << "1000 warps, " << windows << " interior windows, max coefficient error " << worst << ", "
    << elapsed << " s";
  return {worst <= 1e-6 && elapsed < 5.0, d.str()};
}

Outcome decompose_roundtrip() {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const AffineComponents c = in_box(rng, 0.0);
    const AffineComponents r = decompose_affine(recompose_affine(c)).components;
    worst = std::max({worst, std::abs(r.theta - c.theta), std::abs(r.shear_m - c.shear_m),
                      std::abs(r.scale_x - c.scale_x), std::abs(r.scale_y - c.scale_y),
                      std::abs(r.translation.x - c.translation.x), std::abs(r.translation.y - c.translation.y)});
  }
  std::ostringstream d;
  d << "10000 samples, max component error " << worst;
  return {worst <= 1e-9, d.str()};
}

Outcome regularize_box() {
  Rng rng(1003);
  std::size_t outside = 0;
  double idem = 0.0;
  int tested = 0;
  while (tested < 10000) {
    AffineComponents c;
    c.theta = rng.uniform(-3.0, 3.0);
    c.shear_m = rng.uniform(-2.0, 2.0);
    c.scale_x = rng.uniform(0.05, 10.0);
    c.scale_y = rng.uniform(0.05, 10.0);
    if (RegularizationBox::contains(c)) continue;
    ++tested;
    const RegularizedAffine once = regularize_affine(recompose_affine(c));
    if (!RegularizationBox::contains(decompose_affine(once.params).components)) ++outside;
    idem = std::max(idem, coeff_diff(once.params, regularize_affine(once.params).params));
  }
  std::ostringstream d;
  d << "10000 out-of-box affines, " << outside << " outside after clamping, idempotence error " << idem;
  return {outside == 0 && idem <= 1e-12, d.str()};
}

Outcome fusion() {
  Rng rng(1004);
  double worst = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const FusionParams p(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0, 5));
    const FusionWeight w = fusion_weights(p, std::exp(rng.uniform(-6, 6)), std::exp(rng.uniform(-6, 6)));
    worst = std::max(worst, std::abs(w.p1 + w.p2 - 1.0));
  }
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const FusionParams p(rng.uniform(-3, 3), rng.uniform(0.05, 3), rng.uniform(0.05, 3));
    double prev = 2.0;
    for (int k = 0; k < 100; ++k) {
      const double sigma = 0.01 + 0.1 * k;
      const double p2 = fusion_weights(p, 0.5 * sigma, 0.5 * sigma).p2;
      if (!(p2 < prev)) ++violations;
      prev = p2;
    }
  }
  std::ostringstream d;
  d << "sum error " << worst << " over 1e6 cells, " << violations << " monotonicity violations";
  return {worst <= 1e-12 && violations == 0, d.str()};
}

Outcome loss_gradients() {
  bool ok = true;
  std::ostringstream d;
  for (const GradcheckRow& row : run_gradcheck(1005, 20)) {
    ok = ok && row.passed && row.instances >= 20;
    d << row.name << " " << row.max_rel_error << "; ";
  }
  double stationarity = 0.0;
  Rng rng(1005);
  for (int k = 0; k < 100; ++k) {
    FlowField f(1, 1), g(1, 1);
    g.ux(0, 0) = rng.uniform(0.1, 5.0);
    g.uy(0, 0) = -rng.uniform(0.1, 5.0);
    f.wx(0, 0) = std::log(std::abs(g.ux(0, 0)));
    f.wy(0, 0) = std::log(std::abs(g.uy(0, 0)));
    const FlowLoss l = flow_nll(f, g, {1});
    stationarity = std::max({stationarity, std::abs(l.grad.wx(0, 0)), std::abs(l.grad.wy(0, 0))});
  }
  d << "w-stationarity " << stationarity;
  return {ok && stationarity <= 1e-6, d.str()};
}

Outcome loss_values() {
  FlowField flow(1, 1), gt(1, 1);
  gt.ux(0, 0) = 1.0;
  gt.uy(0, 0) = 1.0;
  const double nll = flow_nll(flow, gt, {1}).value;
  const std::pair<std::size_t, std::size_t> m{0, 0};
  const double focal = focal_loss(Matrix(1, 1, 0.5), std::span(&m, 1), 2.0).value;
  const double total = total_loss({1, 1, 1, 1}, LossWeights{});
  std::ostringstream d;
  d.precision(17);
  d << "nll " << nll << ", focal " << focal << ", total " << total;
  return {nll == 1.0 && std::abs(focal - 0.25 * std::log(2.0)) <= 1e-12 && std::abs(total - 3.1) <= 1e-12, d.str()};
}

Outcome attention_oracle() {
  Rng rng(1007);
  double worst_global = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t heads = 1 + rng.below(4);
    const std::size_t dim = heads * (1 + rng.below(4));
    const AttentionLayer layer = AttentionLayer::seeded(dim, heads, rng.next());
    const Matrix q = random_matrix(rng, 1 + rng.below(16), dim, -2, 2);
    const Matrix kv = random_matrix(rng, 1 + rng.below(16), dim, -2, 2);
    const Matrix got = multi_head_attention(q, kv, kv, layer).message;
    const Matrix expect = oracle::attention(q, kv, layer);
    for (std::size_t i = 0; i < got.data().size(); ++i) {
      worst_global = std::max(worst_global, std::abs(got.data()[i] - expect.data()[i]));
    }
  }
  double worst_local = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t side = 4 * (1 + rng.below(4));
    const AttentionLayer layer = AttentionLayer::seeded(8, 2, rng.next());
    const FeatureMap fs = random_map(rng, side, side, 8);
    const FeatureMap ft = random_map(rng, side, side, 8);
    AffineField field(side / 4, side / 4, 4);
    for (std::size_t r = 0; r < field.rows(); ++r) {
      for (std::size_t c = 0; c < field.cols(); ++c) field.set_valid(r, c, true);
    }
    const FeatureMap got = local_deformable_attention(fs, ft, field, layer, 1.0).message;
    const FeatureMap expect = oracle::windowed_attention(fs, ft, layer, 4);
    for (std::size_t i = 0; i < got.data().size(); ++i) {
      worst_local = std::max(worst_local, std::abs(got.data()[i] - expect.data()[i]));
    }
  }
  std::ostringstream d;
  d << "global max error " << worst_global << ", local max error " << worst_local;
  return {worst_global <= 1e-10 && worst_local <= 1e-10, d.str()};
}

Outcome matching_oracle() {
  Rng rng(1008);
  double worst = 0.0, worst_shift = 0.0;
  std::size_t mismatched = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(32), m = 1 + rng.below(32);
    const Matrix c = random_matrix(rng, n, m, -6, 6);
    const AssignmentMatrix s = dual_softmax(c, 10.0);
    const Matrix expect = oracle::dual_softmax(c);
    Matrix shifted = c;
    for (double& v : shifted.data()) v -= 4.5;
    const Matrix s_shift = dual_softmax(shifted).scores;
    for (std::size_t k = 0; k < expect.data().size(); ++k) {
      worst = std::max(worst, std::abs(s.scores.data()[k] - expect.data()[k]));
      worst_shift = std::max(worst_shift, std::abs(s.scores.data()[k] - s_shift.data()[k]));
    }
    const MatchSet got = mnn_filter(s, 0.2);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const Match& x : got.matches) pairs.emplace_back(x.source_index, x.target_index);
    if (pairs != oracle::mnn(s.scores, 0.2)) ++mismatched;
    total += pairs.size();
  }
  std::ostringstream d;
  d << "dual-softmax max error " << worst << ", shift error " << worst_shift << ", " << mismatched
    << " of 1000 MNN sets differ (" << total << " matches)";
  return {worst <= 1e-12 && worst_shift <= 1e-12 && mismatched == 0, d.str()};
}

Scenario desk_scenario(std::uint64_t seed) {
  Scenario s;
  s.height = 64;
  s.width = 64;
  s.channels = 32;
  s.window = 4;
  s.warp.seed = seed;
  return s;
}

Outcome end_to_end() {
  const PipelineConfig cfg = PipelineConfig::desk();
  std::ostringstream d;

  set_thread_count(1);
  const SyntheticPair identity = gen_pair(desk_scenario(7));
  const auto start = Clock::now();
  const PipelineResult id_run = run_pipeline(identity.fa, identity.fb, cfg);
  const double elapsed = seconds_since(start);
  set_thread_count(0);
  const MatchMetrics id_metrics = eval_matches(id_run.coarse, identity.gt, 2.0);
  const bool precision_ok = id_metrics.count > 0 && id_metrics.precision >= 0.95;
  d << "identity: " << id_metrics.count << " matches, precision " << id_metrics.precision << "; ";

  Scenario warped = desk_scenario(7);
  warped.warp.components = {0.1, 0.05, 1.1, 0.95, {1.5, -1.5}};
  const SyntheticPair pair = gen_pair(warped);
  const PipelineResult run = run_pipeline(pair.fa, pair.fb, cfg);
  const AffineField& est = run.blocks.back().field;
  double sum = 0.0, worst = 0.0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r < est.rows(); ++r) {
    for (std::size_t c = 0; c < est.cols(); ++c) {
      if (est.is_border(r, c) || !pair.gt_field.valid(r, c)) continue;
      const AffineParams& a = est.params(r, c);
      const AffineParams& g = pair.gt_field.params(r, c);
      const double e = std::hypot(a.a13 - g.a13, a.a23 - g.a23);
      sum += e;
      worst = std::max(worst, e);
      ++windows;
    }
  }
  const double mean = windows > 0 ? sum / static_cast<double>(windows) : INFINITY;
  const bool translation_ok = windows > 0 && mean <= 0.5;
  const MatchMetrics warp_metrics = eval_matches(run.coarse, pair.gt, 2.0);
  d << "affine: translation error mean " << mean << " max " << worst << " cells over " << windows
    << " interior windows (target <= 0.5), match precision " << warp_metrics.precision << "; ";
  d << "single-thread 64x64x32 run " << elapsed << " s";
  return {precision_ok && translation_ok && elapsed < 10.0, d.str()};
}

int run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = read_file_bytes(entry.path());
  }
  return files;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "afformer_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path spec = base / "scenario.json";
  {
    Scenario s;
    s.height = 32;
    s.width = 32;
    s.channels = 32;
    s.warp.components = {0.1, 0.05, 1.1, 0.95, {1.5, -1.5}};
    s.warp.noise_sigma = 0.05;
    s.warp.seed = 21;
    std::ofstream(spec) << scenario_to_json(s);
  }
  const std::string cli = AFFORMER_CLI_PATH;
  std::vector<std::map<std::string, std::vector<std::uint8_t>>> runs;
  for (const char* threads : {"1", "4"}) {
    const fs::path out = base / (std::string("threads_") + threads);
    fs::create_directories(out);
    const std::string env = std::string("AFFORMER_THREADS=") + threads + " ";
    const std::string q = "\"";
    const std::string cmd = env + q + cli + q + " synth --spec " + q + spec.string() + q + " --out " + q +
                            (out / "pair").string() + q + " 2>/dev/null && " + env + q + cli + q +
                            " match --pair " + q + (out / "pair").string() + q + " --out " + q +
                            (out / "matches.jsonl").string() + q + " 2>/dev/null && " + env + q + cli + q +
                            " eval --pred " + q + (out / "matches.jsonl").string() + q + " --gt " + q +
                            (out / "pair").string() + q + " > " + q + (out / "eval.json").string() + q;
    if (run_command(cmd) != 0) return {false, std::string("CLI run failed with AFFORMER_THREADS=") + threads};
    runs.push_back(snapshot(out));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  if (runs[0].size() != runs[1].size()) ++differing;
  std::ostringstream d;
  d << runs[0].size() << " files compared across AFFORMER_THREADS=1 and 4, " << differing << " differ";
  fs::remove_all(base);
  return {differing == 0 && !runs[0].empty(), d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"affine recovery", affine_recovery},
      {"decompose/recompose round trip", decompose_roundtrip},
      {"regularization box", regularize_box},
      {"fusion weights", fusion},
      {"loss gradient checks", loss_gradients},
      {"hand-verifiable loss values", loss_values},
      {"attention oracle equivalence", attention_oracle},
      {"matching oracle equivalence", matching_oracle},
      {"end-to-end synthetic", end_to_end},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.passed) ++failed;
    std::cout << "criterion " << (k + 1) << " [" << (o.passed ? "PASS" : "FAIL") << "] " << criteria[k].first
              << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
