#include "seedet/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>

#include "seedet/error.hpp"
#include "seedet/phantom.hpp"

namespace seedet {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<Candidate> detect_dataset(Detector<float>& net, const RunConfig& config, const std::filesystem::path& dir,
                                      std::vector<std::string>* scan_ids) {
  const Dataset ds = open_dataset(dir);
  std::vector<Candidate> out;
  for (const auto& path : ds.volumes) {
    const Volume v = read_volume(path);
    if (scan_ids) scan_ids->push_back(v.scan_id);
    auto c = detect(net, config, v);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& train_dir,
                                const std::filesystem::path& test_dir, const ExperimentOptions& options) {
  ExperimentResult r;
  r.config = config;
  const TrainingData data = load_training_data(train_dir, config);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult trained = train(config, data, options.train);
  r.train_seconds = seconds_since(t0);
  r.log = std::move(trained.log);

  LoadedModel model = load_model(trained.checkpoint);
  t0 = std::chrono::steady_clock::now();
  std::vector<std::string> scans;
  r.candidates = detect_dataset(model.net, model.config, test_dir, &scans);
  r.detect_seconds = seconds_since(t0);
  if (options.candidates_path) write_candidates(*options.candidates_path, r.candidates);

  const auto annotations = open_dataset(test_dir).annotations;
  r.report = evaluate_detections(r.candidates, annotations, config.fp_rates, options.bootstrap, config.seed, scans);
  return r;
}

std::vector<AblationRun> run_ablation(const RunConfig& base, const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds, const std::filesystem::path& train_dir,
                                      const std::filesystem::path& test_dir,
                                      const std::function<void(const AblationRun&)>& on_run) {
  std::vector<AblationRun> runs;
  for (const auto& variant : variants) {
    for (auto seed : seeds) {
      RunConfig c = with_ablation(base, variant);
      c.seed = seed;
      AblationRun run{ablation_name(parse_ablation(variant)), seed, run_experiment(c, train_dir, test_dir)};
      if (on_run) on_run(run);
      runs.push_back(std::move(run));
    }
  }
  return runs;
}

std::vector<AblationSummary> summarize_ablation(std::span<const AblationRun> runs) {
  std::vector<AblationSummary> out;
  std::map<std::string, std::size_t> index;
  for (const auto& run : runs) {
    auto [it, fresh] = index.emplace(run.variant, out.size());
    if (fresh) {
      AblationSummary s;
      s.variant = run.variant;
      s.mean_curve.rates = run.result.report.curve.rates;
      s.mean_curve.sensitivities.assign(s.mean_curve.rates.size(), 0.0);
      out.push_back(std::move(s));
    }
    auto& s = out[it->second];
    const auto& sens = run.result.report.curve.sensitivities;
    if (sens.size() != s.mean_curve.sensitivities.size()) throw ConfigError("ablation runs disagree on FP rates");
    for (std::size_t i = 0; i < sens.size(); ++i) s.mean_curve.sensitivities[i] += sens[i];
    s.seed_means.push_back(run.result.report.curve.mean);
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.seed_means.size());
    for (auto& v : s.mean_curve.sensitivities) v /= n;
    s.mean_curve.mean = mean_sensitivity(s.mean_curve.sensitivities);
    for (std::size_t i = 0; i < s.mean_curve.rates.size(); ++i)
      s.mean_curve.points.push_back({0.0, s.mean_curve.rates[i], s.mean_curve.sensitivities[i]});
  }
  return out;
}

void write_ablation_report(const std::filesystem::path& dir, std::span<const AblationRun> runs) {
  std::filesystem::create_directories(dir);
  const auto summaries = summarize_ablation(runs);
  std::vector<PlotSeries> series;
  for (const auto& s : summaries) {
    BootstrapBand spread;
    for (std::size_t i = 0; i < s.mean_curve.rates.size(); ++i) {
      double lo = 1.0, hi = 0.0;
      for (const auto& run : runs) {
        if (run.variant != s.variant) continue;
        lo = std::min(lo, run.result.report.curve.sensitivities[i]);
        hi = std::max(hi, run.result.report.curve.sensitivities[i]);
      }
      spread.lower.push_back(lo);
      spread.upper.push_back(hi);
    }
    write_froc_csv(dir / ("froc_" + s.variant + ".csv"), s.mean_curve, spread);
    series.push_back(PlotSeries{s.variant, s.mean_curve, spread});
  }
  write_froc_svg(dir / "ablation.svg", series, "FROC by variant (mean over seeds)");

  std::ofstream os(dir / "ablation.csv", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "ablation.csv").string());
  os << "variant,seed";
  if (!runs.empty())
    for (double r : runs.front().result.report.curve.rates) os << ",sens@" << r;
  os << ",mean,train_seconds\n" << std::setprecision(6);
  for (const auto& run : runs) {
    os << run.variant << ',' << run.seed;
    for (double v : run.result.report.curve.sensitivities) os << ',' << v;
    os << ',' << run.result.report.curve.mean << ',' << run.result.train_seconds << '\n';
  }
}

}  // namespace seedet
