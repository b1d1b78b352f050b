#include "afformer/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "afformer/error.hpp"
#include "afformer/pipeline.hpp"
#include "afformer/selftest.hpp"
#include "afformer/synthetic.hpp"

namespace afformer {

namespace fs = std::filesystem;

namespace {

int run_synth(const fs::path& spec, const fs::path& out) {
  const Scenario scenario = load_scenario(spec);
  const SyntheticPair pair = gen_pair(scenario);
  write_pair(out, scenario, pair);
  std::cerr << "wrote " << out.string() << " (" << pair.gt.matches.size() << " gt matches)\n";
  return 0;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string(), 0, "cannot open for writing");
  out << text;
}

int run_match(const fs::path& pair_dir, const std::string& config_path, const fs::path& out,
              std::string dump_dir) {
  const LoadedPair loaded = read_pair(pair_dir);
  PipelineConfig cfg;
  if (config_path.empty()) {
    cfg = PipelineConfig::desk();
    cfg.channels = loaded.pair.fa.channels();
    if (cfg.channels % cfg.heads != 0) cfg.heads = 1;
  } else {
    cfg = load_config(config_path);
  }
  const PipelineResult result = run_pipeline(loaded.pair.fa, loaded.pair.fb, cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_matches_jsonl(out, result.matches);

  const fs::path dump = dump_dir.empty() ? fs::path(out.string() + ".dump") : fs::path(dump_dir);
  fs::create_directories(dump);
  for (std::size_t k = 0; k < result.blocks.size(); ++k) {
    const BlockTrace& b = result.blocks[k];
    const std::string idx = std::to_string(k);
    write_tensor(dump / ("flow_block" + idx + ".aftn"), flow_to_tensor(b.flow));
    write_tensor(dump / ("affine_block" + idx + ".aftn"), affine_field_to_tensor(b.field));
    write_tensor(dump / ("fusion_block" + idx + ".aftn"), fusion_scores_to_tensor(b.fusion));
  }
  nlohmann::ordered_json meta;
  meta["version"] = 1;
  meta["config"] = nlohmann::json::parse(config_to_json(cfg));
  meta["coarse_matches"] = result.coarse.size();
  meta["matches"] = result.matches.size();
  meta["cross_blocks"] = result.blocks.size();
  meta["fine_maps_upsampled"] = result.fine_maps_upsampled;
  write_text(dump / "meta.json", meta.dump(2) + "\n");
  std::cerr << "wrote " << result.matches.size() << " matches to " << out.string() << "\n";
  return 0;
}

int run_eval(const fs::path& pred, const fs::path& gt_dir, double tol) {
  const LoadedPair loaded = read_pair(gt_dir);
  const std::vector<MatchRecord> records = read_matches_jsonl(pred);
  std::vector<std::pair<Vec2, Vec2>> pairs;
  pairs.reserve(records.size());
  constexpr double kCoarse = 8.0;
  for (const MatchRecord& r : records) {
    pairs.emplace_back(Vec2{r.source_px.x / kCoarse, r.source_px.y / kCoarse},
                       Vec2{r.target_px.x / kCoarse, r.target_px.y / kCoarse});
  }
  const MatchMetrics m = eval_match_cells(pairs, loaded.pair.gt, loaded.pair.fa.width(), tol);
  nlohmann::ordered_json j;
  j["precision"] = m.precision;
  j["precision_defined"] = m.precision_defined;
  j["recall"] = m.recall;
  j["count"] = m.count;
  j["correct"] = m.correct;
  j["gt_matches"] = loaded.pair.gt.matches.size();
  j["tol_cells"] = tol;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_gradcheck_cmd(std::uint64_t seed) {
  const std::vector<GradcheckRow> rows = run_gradcheck(seed);
  bool ok = true;
  std::cout << std::left << std::setw(26) << "loss" << std::setw(12) << "instances" << std::setw(16)
            << "max_rel_error" << std::setw(12) << "tolerance" << "result\n";
  for (const GradcheckRow& r : rows) {
    std::cout << std::left << std::setw(26) << r.name << std::setw(12) << r.instances << std::setw(16)
              << std::setprecision(3) << std::scientific << r.max_rel_error << std::setw(12)
              << r.tolerance << std::defaultfloat << (r.passed ? "pass" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int run_selftest_cmd(std::uint64_t seed) {
  bool ok = true;
  for (const SuiteResult& r : run_selftest(seed)) {
    std::cout << (r.passed ? "pass " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Semi-dense feature matching with affine-guided local attention"};
  app.require_subcommand(1);

  fs::path synth_spec;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic feature pair");
  synth->add_option("--spec", synth_spec, "scenario JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  fs::path match_pair;
  std::string match_config;
  fs::path match_out;
  std::string match_dump;
  auto* match = app.add_subcommand("match", "run the matcher on a pair directory");
  match->add_option("--pair", match_pair, "pair directory from synth")->required();
  match->add_option("--config", match_config, "pipeline config JSON (default: desk preset)");
  match->add_option("--out", match_out, "output JSONL")->required();
  match->add_option("--dump", match_dump, "directory for per-block tensors (default: <out>.dump)");

  fs::path eval_pred;
  fs::path eval_gt;
  double eval_tol = 2.0;
  auto* eval = app.add_subcommand("eval", "score matches against ground truth");
  eval->add_option("--pred", eval_pred, "matches JSONL")->required();
  eval->add_option("--gt", eval_gt, "pair directory")->required();
  eval->add_option("--tol", eval_tol, "tolerance in coarse cells")->check(CLI::NonNegativeNumber);

  std::uint64_t grad_seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of loss gradients");
  grad->add_option("--seed", grad_seed, "seed");

  std::uint64_t self_seed = 0;
  auto* self = app.add_subcommand("selftest", "run the property suites");
  self->add_option("--seed", self_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_spec, synth_out);
    if (match->parsed()) return run_match(match_pair, match_config, match_out, match_dump);
    if (eval->parsed()) return run_eval(eval_pred, eval_gt, eval_tol);
    if (grad->parsed()) return run_gradcheck_cmd(grad_seed);
    if (self->parsed()) return run_selftest_cmd(self_seed);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}

}  // namespace afformer
