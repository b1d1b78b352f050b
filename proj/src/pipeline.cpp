#include "afformer/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "afformer/error.hpp"
#include "afformer/random.hpp"

namespace afformer {

PipelineConfig PipelineConfig::desk() {
  PipelineConfig cfg;
  cfg.channels = 32;
  cfg.heads = 4;
  cfg.num_blocks = 2;
  return cfg;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  if (channels == 0 || channels % 4 != 0) fail("channels must be a positive multiple of 4");
  if (heads == 0 || channels % heads != 0) fail("channels must be divisible by heads");
  if (num_blocks == 0) fail("num_blocks must be positive");
  if (window == 0) fail("window must be positive");
  if (!(alpha >= 1.0)) fail("alpha must be >= 1");
  if (refine_window == 0 || refine_window % 2 == 0) fail("refine_window must be odd");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(match_threshold >= 0.0 && match_threshold < 1.0)) fail("match_threshold must lie in [0, 1)");
  if (!(fusion_gamma >= 0.0)) fail("fusion.gamma must be >= 0");
  if (block_order.empty()) fail("block_order must not be empty");
  loss.validate();
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

}  // namespace

PipelineConfig config_from_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(source, e.byte, e.what());
  }
  PipelineConfig cfg;
  try {
    check_keys(j,
               {"version", "channels", "heads", "num_blocks", "window", "alpha", "refine_window", "tau",
                "match_threshold", "fusion", "loss", "seed", "block_order"},
               source, "config");
    if (!j.contains("version") || j.at("version") != 1) {
      throw FormatError(source, 0, "config version must be 1");
    }
    cfg.channels = j.value("channels", cfg.channels);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
    cfg.window = j.value("window", cfg.window);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.refine_window = j.value("refine_window", cfg.refine_window);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.match_threshold = j.value("match_threshold", cfg.match_threshold);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("fusion")) {
      const json& f = j.at("fusion");
      check_keys(f, {"alpha", "beta", "gamma"}, source, "fusion");
      cfg.fusion_alpha = f.value("alpha", cfg.fusion_alpha);
      cfg.fusion_beta = f.value("beta", cfg.fusion_beta);
      cfg.fusion_gamma = f.value("gamma", cfg.fusion_gamma);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      check_keys(l, {"lambda1", "lambda2", "gamma_focal"}, source, "loss");
      cfg.loss.lambda1 = l.value("lambda1", cfg.loss.lambda1);
      cfg.loss.lambda2 = l.value("lambda2", cfg.loss.lambda2);
      cfg.loss.gamma_focal = l.value("gamma_focal", cfg.loss.gamma_focal);
    }
    if (j.contains("block_order")) {
      cfg.block_order.clear();
      for (const auto& k : j.at("block_order")) {
        const std::string name = k.get<std::string>();
        if (name == "self") {
          cfg.block_order.push_back(BlockKind::kSelf);
        } else if (name == "cross") {
          cfg.block_order.push_back(BlockKind::kCross);
        } else {
          throw FormatError(source, 0, "unknown block kind '" + name + "'");
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(source, 0, e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["channels"] = cfg.channels;
  j["heads"] = cfg.heads;
  j["num_blocks"] = cfg.num_blocks;
  j["window"] = cfg.window;
  j["alpha"] = cfg.alpha;
  j["refine_window"] = cfg.refine_window;
  j["tau"] = cfg.tau;
  j["match_threshold"] = cfg.match_threshold;
  j["fusion"] = {{"alpha", cfg.fusion_alpha}, {"beta", cfg.fusion_beta}, {"gamma", cfg.fusion_gamma}};
  j["loss"] = {{"lambda1", cfg.loss.lambda1},
               {"lambda2", cfg.loss.lambda2},
               {"gamma_focal", cfg.loss.gamma_focal}};
  j["seed"] = cfg.seed;
  j["block_order"] = json::array();
  for (BlockKind k : cfg.block_order) j["block_order"].push_back(k == BlockKind::kSelf ? "self" : "cross");
  return j.dump(2);
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), path.string());
}

PipelineWeights PipelineWeights::seeded(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineWeights w;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::uint64_t block_seed = derive_seed(cfg.seed, 100 + b);
    w.self_layers.push_back(AttentionLayer::seeded(cfg.channels, cfg.heads, derive_seed(block_seed, 1)));
    w.cross_global.push_back(AttentionLayer::seeded(cfg.channels, cfg.heads, derive_seed(block_seed, 2)));
    w.cross_local.push_back(AttentionLayer::seeded(cfg.channels, cfg.heads, derive_seed(block_seed, 3)));
    w.decoders.push_back(FlowDecoder::seeded(cfg.channels, derive_seed(block_seed, 4)));
  }
  w.refiner = Refiner::seeded(cfg.refine_window, derive_seed(cfg.seed, 7));
  return w;
}

TensorMap PipelineWeights::export_tensors() const {
  TensorMap out;
  for (std::size_t b = 0; b < self_layers.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    self_layers[b].export_to(p + ".self", out);
    cross_global[b].export_to(p + ".cross_global", out);
    cross_local[b].export_to(p + ".cross_local", out);
    decoders[b].export_to(p + ".decoder", out);
  }
  refiner.export_to("refiner", out);
  return out;
}

PipelineWeights PipelineWeights::import_tensors(const TensorMap& tensors, const PipelineConfig& cfg) {
  PipelineWeights w;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    w.self_layers.push_back(AttentionLayer::import_from(p + ".self", tensors));
    w.cross_global.push_back(AttentionLayer::import_from(p + ".cross_global", tensors));
    w.cross_local.push_back(AttentionLayer::import_from(p + ".cross_local", tensors));
    w.decoders.push_back(FlowDecoder::import_from(p + ".decoder", tensors));
  }
  w.refiner = Refiner::import_from("refiner", tensors);
  return w;
}

namespace {

struct CrossUpdate {
  FeatureMap updated;
  BlockTrace trace;
};

CrossUpdate cross_update(const FeatureMap& src, const FeatureMap& tgt, const PipelineConfig& cfg,
                         const PipelineWeights& w, std::size_t b, const PositionalEncoding& coarse_pos,
                         const FusionParams& fusion) {
  GlobalMessage g = global_message(src, tgt, w.cross_global[b]);
  const FeatureMap agg = aggregate_positions(g.attn, coarse_pos, g.coarse_height, g.coarse_width);
  CrossUpdate out;
  out.trace.flow = decode_flow(agg, w.decoders[b]);
  out.trace.field = build_affine_field(out.trace.flow, cfg.window);
  const LocalAttentionOutput local =
      local_deformable_attention(src, tgt, out.trace.field, w.cross_local[b], cfg.alpha);
  const FusionScores scores = fusion_weights(fusion, out.trace.flow);
  const auto mask = cell_mask_from_field(out.trace.field, src.height(), src.width(), local.window_active);
  const FeatureMap fused = fuse_messages(g.message, local.message, scores, mask, &out.trace.fusion);
  out.updated = ffn_update(src, fused, w.cross_global[b]);
  return out;
}

}  // namespace

PipelineResult run_pipeline(const FeatureMap& fa, const FeatureMap& fb, const PipelineConfig& cfg,
                            const std::optional<FineMaps>& fine) {
  cfg.validate();
  return run_pipeline(fa, fb, cfg, PipelineWeights::seeded(cfg), fine);
}

PipelineResult run_pipeline(const FeatureMap& fa_in, const FeatureMap& fb_in, const PipelineConfig& cfg,
                            const PipelineWeights& w, const std::optional<FineMaps>& fine) {
  cfg.validate();
  if (fa_in.channels() != cfg.channels || fb_in.channels() != cfg.channels) {
    throw ConfigError("config: channels = " + std::to_string(cfg.channels) +
                      " but the feature maps have " + std::to_string(fa_in.channels()));
  }
  if (fa_in.height() != fb_in.height() || fa_in.width() != fb_in.width()) {
    throw DimensionError("source and target maps must share dimensions");
  }
  const std::size_t h = fa_in.height();
  const std::size_t wd = fa_in.width();
  if (h % 4 != 0 || wd % 4 != 0) throw DimensionError("map dimensions must be divisible by 4");
  if (h % cfg.window != 0 || wd % cfg.window != 0) {
    throw DimensionError("map dimensions must be divisible by the window size");
  }
  if (w.self_layers.size() < cfg.num_blocks) throw ConfigError("weights cover fewer blocks than configured");
  if (fine && (fine->fa2.channels() != cfg.channels || fine->fb2.channels() != cfg.channels)) {
    throw ConfigError("fine maps must have the configured channel count");
  }
  const FusionParams fusion(cfg.fusion_alpha, cfg.fusion_beta, cfg.fusion_gamma);

  FeatureMap fa = fa_in;
  FeatureMap fb = fb_in;
  const PositionalEncoding pos = sinusoidal_encoding(h, wd, cfg.channels);
  add_positional_encoding(fa, pos);
  add_positional_encoding(fb, pos);
  const PositionalEncoding coarse_pos = sinusoidal_encoding(h / 4, wd / 4, cfg.channels);

  PipelineResult result;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    for (BlockKind kind : cfg.block_order) {
      if (kind == BlockKind::kSelf) {
        FeatureMap na = global_attention_block(fa, fa, w.self_layers[b]).updated;
        FeatureMap nb = global_attention_block(fb, fb, w.self_layers[b]).updated;
        fa = std::move(na);
        fb = std::move(nb);
      } else {
        CrossUpdate ab = cross_update(fa, fb, cfg, w, b, coarse_pos, fusion);
        CrossUpdate ba = cross_update(fb, fa, cfg, w, b, coarse_pos, fusion);
        fa = std::move(ab.updated);
        fb = std::move(ba.updated);
        result.blocks.push_back(std::move(ab.trace));
      }
    }
  }

  {
    const Matrix c = correlation(l2_normalize_rows(fa.tokens()), l2_normalize_rows(fb.tokens()), cfg.tau);
    const AssignmentMatrix s = dual_softmax(c, cfg.tau);
    result.coarse = mnn_filter(s, cfg.match_threshold, wd, wd);
  }

  FineMaps maps;
  if (fine) {
    maps = *fine;
  } else {
    maps = {upsample_bilinear(fa_in, 4), upsample_bilinear(fb_in, 4)};
    result.fine_maps_upsampled = true;
  }
  result.matches = fine_refine(result.coarse, maps.fa2, maps.fb2, w.refiner, 4);
  result.final_a = std::move(fa);
  result.final_b = std::move(fb);
  return result;
}

}  // namespace afformer
