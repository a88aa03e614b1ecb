#include "seedet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "seedet/error.hpp"

namespace seedet {

using nlohmann::json;

NetworkConfig desk_network() {
  NetworkConfig c;
  c.encoder_channels = {8, 16, 32};
  c.blocks_per_stage = 1;
  c.decoder_channels = {32};
  c.output_stride = 4;
  return c;
}

RunConfig RunConfig::desk_scale() {
  RunConfig c;
  c.network = desk_network();
  c.batch_size = 4;
  c.train_patch = 64;
  c.eval_patch = 96;
  c.cls_normalization = "positives";
  return c;
}

DetectionLossOptions RunConfig::loss_options(std::uint64_t sample_seed) const {
  DetectionLossOptions o;
  o.focal = focal;
  o.use_focal = network.use_focal;
  o.negative_ratio = negative_ratio;
  o.sample_seed = sample_seed;
  o.cls_normalization = parse_cls_normalization(cls_normalization);
  return o;
}

void RunConfig::validate() const {
  network.validate();
  focal.validate();
  const auto fail = [](const std::string& msg) { throw ConfigError("run config: " + msg); };
  if (!(optimizer.lr > 0)) fail("lr must be positive");
  if (!(optimizer.momentum >= 0 && optimizer.momentum < 1)) fail("momentum must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(optimizer.lr_gamma > 0)) fail("lr_gamma must be positive");
  if (batch_size == 0) fail("batch_size must be >= 1");
  const std::size_t S = network.deepest_stride();
  if (train_patch == 0 || train_patch % S != 0)
    fail("train_patch must be a positive multiple of " + std::to_string(S));
  if (eval_patch == 0 || eval_patch % S != 0)
    fail("eval_patch must be a positive multiple of " + std::to_string(S));
  if (eval_overlap >= eval_patch) fail("eval_overlap must be smaller than eval_patch");
  if (!(clip_high > clip_low)) fail("clip range is empty");
  if (anchor_sizes.size() != network.num_anchors)
    fail("anchor_sizes has " + std::to_string(anchor_sizes.size()) + " entries, network expects " +
         std::to_string(network.num_anchors));
  for (double s : anchor_sizes)
    if (!(s > 0)) fail("anchor sizes must be positive");
  if (!(neg_iou >= 0 && neg_iou <= pos_iou && pos_iou <= 1)) fail("need 0 <= neg_iou <= pos_iou <= 1");
  if (!(nodule_crop_probability >= 0 && nodule_crop_probability <= 1))
    fail("nodule_crop_probability must lie in [0, 1]");
  if (!(flip_probability >= 0 && flip_probability <= 1)) fail("flip_probability must lie in [0, 1]");
  if (!(scale_min > 0 && scale_min <= scale_max)) fail("invalid scale range");
  if (!(nms_iou >= 0 && nms_iou <= 1)) fail("nms_iou must lie in [0, 1]");
  if (!(prob_cutoff >= 0 && prob_cutoff < 1)) fail("prob_cutoff must lie in [0, 1)");
  if (top_k == 0) fail("top_k must be >= 1");
  if (fp_rates.empty()) fail("fp_rates is empty");
  if (epochs == 0) fail("epochs must be >= 1");
  if (log_every == 0) fail("log_every must be >= 1");
  parse_cls_normalization(cls_normalization);
  parse_ablation(ablation);
}

RunConfig with_ablation(RunConfig config, const std::string& name) {
  const Ablation a = parse_ablation(name);
  config.network = ablation_variant(config.network, a);
  // Plain cross-entropy keeps a 3:1 negative:positive cap.
  if (!config.network.use_focal && config.negative_ratio == 0) config.negative_ratio = kNoFocalNegativeRatio;
  config.ablation = ablation_name(a);
  return config;
}

namespace {

json network_json(const NetworkConfig& n) {
  return json{{"encoder_channels", n.encoder_channels},
              {"blocks_per_stage", n.blocks_per_stage},
              {"decoder_channels", n.decoder_channels},
              {"num_anchors", n.num_anchors},
              {"output_stride", n.output_stride},
              {"se_reduction", n.se_reduction},
              {"use_se", n.use_se},
              {"use_focal", n.use_focal},
              {"norm_eps", n.norm_eps},
              {"norm_momentum", n.norm_momentum}};
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

NetworkConfig network_from(const json& j, NetworkConfig n) {
  check_keys(j,
             {"encoder_channels", "blocks_per_stage", "decoder_channels", "num_anchors", "output_stride",
              "se_reduction", "use_se", "use_focal", "norm_eps", "norm_momentum"},
             "network");
  read(j, "encoder_channels", n.encoder_channels);
  read(j, "blocks_per_stage", n.blocks_per_stage);
  read(j, "decoder_channels", n.decoder_channels);
  read(j, "num_anchors", n.num_anchors);
  read(j, "output_stride", n.output_stride);
  read(j, "se_reduction", n.se_reduction);
  read(j, "use_se", n.use_se);
  read(j, "use_focal", n.use_focal);
  read(j, "norm_eps", n.norm_eps);
  read(j, "norm_momentum", n.norm_momentum);
  return n;
}

}  // namespace

std::string to_json(const RunConfig& c) {
  json j{{"network", network_json(c.network)},
         {"focal", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
         {"optimizer",
          {{"lr", c.optimizer.lr},
           {"momentum", c.optimizer.momentum},
           {"weight_decay", c.optimizer.weight_decay},
           {"lr_milestones", c.optimizer.lr_milestones},
           {"lr_gamma", c.optimizer.lr_gamma}}},
         {"batch_size", c.batch_size},
         {"train_patch", c.train_patch},
         {"eval_patch", c.eval_patch},
         {"eval_overlap", c.eval_overlap},
         {"clip_low", c.clip_low},
         {"clip_high", c.clip_high},
         {"anchor_sizes", c.anchor_sizes},
         {"pos_iou", c.pos_iou},
         {"neg_iou", c.neg_iou},
         {"force_best", c.force_best},
         {"negative_ratio", c.negative_ratio},
         {"cls_normalization", c.cls_normalization},
         {"nodule_crop_probability", c.nodule_crop_probability},
         {"crop_margin", c.crop_margin},
         {"augment", c.augment},
         {"flip_probability", c.flip_probability},
         {"scale_min", c.scale_min},
         {"scale_max", c.scale_max},
         {"nms_iou", c.nms_iou},
         {"prob_cutoff", c.prob_cutoff},
         {"top_k", c.top_k},
         {"fp_rates", c.fp_rates},
         {"epochs", c.epochs},
         {"steps_per_epoch", c.steps_per_epoch},
         {"log_every", c.log_every},
         {"checkpoint_every", c.checkpoint_every},
         {"seed", c.seed},
         {"ablation", c.ablation}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const RunConfig& base) {
  RunConfig c = base;
  try {
    const json j = json::parse(text);
    check_keys(j,
               {"network", "focal", "optimizer", "batch_size", "train_patch", "eval_patch", "eval_overlap",
                "clip_low", "clip_high", "anchor_sizes", "pos_iou", "neg_iou", "force_best", "negative_ratio", "cls_normalization",
                "nodule_crop_probability", "crop_margin", "augment", "flip_probability", "scale_min", "scale_max",
                "nms_iou", "prob_cutoff", "top_k", "fp_rates", "epochs", "steps_per_epoch", "log_every",
                "checkpoint_every", "seed", "ablation"},
               "run config");
    if (j.contains("network")) c.network = network_from(j.at("network"), c.network);
    if (j.contains("focal")) {
      const auto& f = j.at("focal");
      check_keys(f, {"alpha", "gamma"}, "focal");
      read(f, "alpha", c.focal.alpha);
      read(f, "gamma", c.focal.gamma);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, {"lr", "momentum", "weight_decay", "lr_milestones", "lr_gamma"}, "optimizer");
      read(o, "lr", c.optimizer.lr);
      read(o, "momentum", c.optimizer.momentum);
      read(o, "weight_decay", c.optimizer.weight_decay);
      read(o, "lr_milestones", c.optimizer.lr_milestones);
      read(o, "lr_gamma", c.optimizer.lr_gamma);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "train_patch", c.train_patch);
    read(j, "eval_patch", c.eval_patch);
    read(j, "eval_overlap", c.eval_overlap);
    read(j, "clip_low", c.clip_low);
    read(j, "clip_high", c.clip_high);
    read(j, "anchor_sizes", c.anchor_sizes);
    read(j, "pos_iou", c.pos_iou);
    read(j, "neg_iou", c.neg_iou);
    read(j, "force_best", c.force_best);
    read(j, "negative_ratio", c.negative_ratio);
    read(j, "cls_normalization", c.cls_normalization);
    read(j, "nodule_crop_probability", c.nodule_crop_probability);
    read(j, "crop_margin", c.crop_margin);
    read(j, "augment", c.augment);
    read(j, "flip_probability", c.flip_probability);
    read(j, "scale_min", c.scale_min);
    read(j, "scale_max", c.scale_max);
    read(j, "nms_iou", c.nms_iou);
    read(j, "prob_cutoff", c.prob_cutoff);
    read(j, "top_k", c.top_k);
    read(j, "fp_rates", c.fp_rates);
    read(j, "epochs", c.epochs);
    read(j, "steps_per_epoch", c.steps_per_epoch);
    read(j, "log_every", c.log_every);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "seed", c.seed);
    read(j, "ablation", c.ablation);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str(), base);
}

}  // namespace seedet
