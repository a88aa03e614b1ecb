#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seedet/config.hpp"
#include "seedet/detect.hpp"
#include "seedet/trainer.hpp"

namespace seedet {

struct ExperimentOptions {
  TrainOptions train;
  std::size_t bootstrap = 0;
  std::optional<std::filesystem::path> candidates_path;
};

struct ExperimentResult {
  RunConfig config;
  FrocReport report;
  std::vector<Candidate> candidates;
  std::vector<StepLog> log;
  double train_seconds = 0;
  double detect_seconds = 0;
};

/// Trains on `train_dir`, detects on every volume of `test_dir` and scores
/// the candidates against its annotations.
ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& train_dir,
                                const std::filesystem::path& test_dir, const ExperimentOptions& options = {});

/// Runs every test volume of a dataset directory through a network.
std::vector<Candidate> detect_dataset(Detector<float>& net, const RunConfig& config, const std::filesystem::path& dir,
                                      std::vector<std::string>* scan_ids = nullptr);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  ExperimentResult result;
};

struct AblationSummary {
  std::string variant;
  FrocCurve mean_curve;  // per-rate sensitivities averaged over seeds
  std::vector<double> seed_means;
};

/// Trains each named variant once per seed. `on_run` fires after each run.
std::vector<AblationRun> run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds, const std::filesystem::path& train_dir,
                                      const std::filesystem::path& test_dir,
                                      const std::function<void(const AblationRun&)>& on_run = {});

std::vector<AblationSummary> summarize_ablation(std::span<const AblationRun> runs);

/// froc_<variant>.csv per variant (seed-averaged, min/max across seeds as
/// lower/upper), ablation.csv with every run, and ablation.svg.
void write_ablation_report(const std::filesystem::path& dir, std::span<const AblationRun> runs);

}  // namespace seedet
