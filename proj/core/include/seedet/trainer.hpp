#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seedet/checkpoint.hpp"
#include "seedet/config.hpp"
#include "seedet/losses.hpp"
#include "seedet/network.hpp"
#include "seedet/volume.hpp"

namespace seedet {

/// Preprocessed training volumes with their annotations.
struct TrainingData {
  std::vector<Volume> volumes;
  std::vector<std::vector<NoduleAnnotation>> annotations;  // parallel to volumes
};

/// Loads and preprocesses every volume of a dataset directory. Throws
/// ConfigError when no volume carries an annotation.
TrainingData load_training_data(const std::filesystem::path& dir, const RunConfig& config);

/// One mini-batch: input [B, 1, P, P, P] and per-sample anchor targets.
struct Batch {
  Tensor<float> input;
  std::vector<AnchorTargets> targets;
};

/// Builds the batch of `step`. Sample i draws its volume, crop and
/// augmentation from its own stream derive_seed(seed, step, i), so batches
/// do not depend on what came before.
Batch make_batch(const RunConfig& config, const TrainingData& data, std::size_t step);

/// Anchor labels and regression targets of one patch.
AnchorTargets make_targets(const RunConfig& config, std::size_t grid, std::span<const NoduleAnnotation> nodules);

struct StepLog {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0;
};

/// CSV rows: step,l_cls,l_reg,total,n_pos,n_neg.
std::string loss_log_header();
std::string loss_log_row(const StepLog& row);

/// SGD with momentum and decoupled-from-loss L2 weight decay:
/// v = momentum * v + (g + wd * w); w -= lr * v.
class SgdMomentum {
 public:
  explicit SgdMomentum(OptimizerConfig config) : config_(std::move(config)) {}

  double lr_at(std::size_t step) const;
  void step(Detector<float>& net, std::size_t step_index);

  std::map<std::string, StoredArray> state() const;
  void load_state(const std::map<std::string, StoredArray>& arrays);

 private:
  OptimizerConfig config_;
  std::map<std::string, std::vector<float>> velocity_;
};

struct TrainOptions {
  /// Steps to run; 0 uses epochs * steps_per_epoch.
  std::size_t max_steps = 0;
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> log_path;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  CheckpointFile checkpoint;
  std::vector<StepLog> log;
};

std::size_t total_steps(const RunConfig& config, std::size_t n_volumes);

/// Runs the optimization loop from a fresh network. A non-finite loss or
/// gradient raises NumericError naming the step. Bit-reproducible for equal
/// inputs on a fixed thread count.
TrainResult train(const RunConfig& config, const TrainingData& data, const TrainOptions& options = {});

/// Network weights and statistics, optimizer velocity (under "optim."),
/// and metadata {config, step, seed}.
CheckpointFile make_checkpoint(const RunConfig& config, Detector<float>& net, const SgdMomentum& optimizer,
                               std::size_t step);

/// A trained network with the configuration it was trained under.
struct LoadedModel {
  RunConfig config;
  std::size_t step = 0;
  Detector<float> net;
};

LoadedModel load_model(const CheckpointFile& file);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace seedet
