#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seedet/boxes.hpp"
#include "seedet/losses.hpp"
#include "seedet/network.hpp"
#include "seedet/patches.hpp"

namespace seedet {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Step schedule: lr is multiplied by lr_gamma at each listed step.
  std::vector<std::size_t> lr_milestones;
  double lr_gamma = 0.1;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Everything a training or detection run needs. Default values are the
/// published constants; desk_scale() swaps in CPU-sized ones.
struct RunConfig {
  NetworkConfig network;
  FocalParams focal;
  OptimizerConfig optimizer;

  std::size_t batch_size = 40;
  std::size_t train_patch = 128;
  std::size_t eval_patch = 208;
  std::size_t eval_overlap = 32;

  double clip_low = kClipLow;
  double clip_high = kClipHigh;

  std::vector<double> anchor_sizes{5.0, 10.0, 20.0};
  double pos_iou = 0.5;
  double neg_iou = 0.02;
  bool force_best = true;
  std::size_t negative_ratio = 0;
  /// "anchors" (mean over positives and negatives) or "positives".
  std::string cls_normalization = "anchors";

  double nodule_crop_probability = 0.7;
  std::size_t crop_margin = 8;
  bool augment = true;
  double flip_probability = 0.5;
  double scale_min = 0.75;
  double scale_max = 1.25;

  double nms_iou = 0.1;
  double prob_cutoff = 0.1;
  std::size_t top_k = 100;
  std::vector<double> fp_rates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

  std::size_t epochs = 100;
  /// 0 derives one epoch as ceil(n_volumes / batch_size) steps.
  std::size_t steps_per_epoch = 0;
  std::size_t log_every = 1;
  /// 0 disables intermediate checkpoints.
  std::size_t checkpoint_every = 0;

  std::uint64_t seed = 0;
  std::string ablation = "none";

  /// CPU-sized patches, batch and network; classification loss normalized
  /// by the positive count.
  static RunConfig desk_scale();

  LabelParams label_params() const { return {pos_iou, neg_iou, force_best}; }
  CropParams crop_params() const { return {train_patch, nodule_crop_probability, crop_margin}; }
  AugmentRanges augment_ranges() const { return {flip_probability, scale_min, scale_max}; }
  DetectionLossOptions loss_options(std::uint64_t sample_seed) const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Channel plan used at desk scale: encoder [8,16,32], decoder [32].
NetworkConfig desk_network();

inline constexpr std::size_t kNoFocalNegativeRatio = 3;

/// Applies a named ablation (none, no_se, no_focal, baseline) and records
/// it. Variants without focal loss also cap negatives per patch at
/// kNoFocalNegativeRatio per positive unless a cap is already set.
RunConfig with_ablation(RunConfig config, const std::string& name);

std::string to_json(const RunConfig& config);
/// Keys absent from the document keep the values of `base`. Unknown keys
/// are rejected.
RunConfig run_config_from_json(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

}  // namespace seedet
