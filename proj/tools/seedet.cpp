// seedet: phantom generation, training, detection, FROC scoring and
// gradient checks from the command line.
//
// Exit codes: 0 success, 1 usage/config error, 2 numeric failure,
// 3 I/O error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "seedet/config.hpp"
#include "seedet/detect.hpp"
#include "seedet/error.hpp"
#include "seedet/experiment.hpp"
#include "seedet/gradcheck.hpp"
#include "seedet/phantom.hpp"
#include "seedet/trainer.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw seedet::IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int make_phantoms(const std::string& config_path, const std::string& out) {
  seedet::PhantomConfig config;
  if (!config_path.empty()) config = seedet::phantom_config_from_json(slurp(config_path));
  seedet::write_phantom_dataset(config, out);
  std::cout << "wrote " << config.n_volumes << " phantoms to " << out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, data, out, log, ablation, test;
  bool paper_scale = false;
  std::size_t steps = 0;
  long long seed = -1;
};

seedet::RunConfig resolve_config(const TrainArgs& a) {
  const seedet::RunConfig base = a.paper_scale ? seedet::RunConfig{} : seedet::RunConfig::desk_scale();
  seedet::RunConfig c = a.config.empty() ? base : seedet::load_run_config(a.config, base);
  if (!a.ablation.empty()) c = seedet::with_ablation(c, a.ablation);
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  c.validate();
  return c;
}

int train(const TrainArgs& a) {
  const auto config = resolve_config(a);
  const auto data = seedet::load_training_data(a.data, config);
  seedet::TrainOptions opt;
  opt.max_steps = a.steps;
  opt.checkpoint_path = a.out;
  opt.log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  const std::size_t steps = a.steps ? a.steps : seedet::total_steps(config, data.volumes.size());
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_step = [&](const seedet::StepLog& row) {
    if (row.step % 25 != 0 && row.step + 1 != steps) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "step %zu/%zu  loss %.5f (cls %.5f reg %.5f)  pos %zu  %.0fs\n", row.step + 1, steps,
                 row.loss.total, row.loss.l_cls, row.loss.l_reg, row.loss.n_pos, secs);
  };
  seedet::train(config, data, opt);
  std::cout << "checkpoint " << a.out << ", loss log " << *opt.log_path << "\n";
  return kOk;
}

int detect(const std::string& ckpt, const std::vector<std::string>& volumes, const std::string& mask,
           const std::string& out) {
  auto model = seedet::load_model(std::filesystem::path(ckpt));
  std::vector<seedet::Candidate> all;
  for (const auto& path : volumes) {
    seedet::Volume v = seedet::read_volume(path);
    if (!mask.empty()) seedet::read_mask(mask, v);
    auto c = seedet::detect(model.net, model.config, v);
    all.insert(all.end(), c.begin(), c.end());
  }
  seedet::write_candidates(out, all);
  std::cout << all.size() << " candidates written to " << out << "\n";
  return kOk;
}

int eval(const std::string& candidates, const std::string& annotations, const std::string& out,
         const std::string& svg, std::size_t bootstrap, std::uint64_t seed, const std::string& label) {
  const auto cands = seedet::read_candidates(candidates);
  const auto gts = seedet::read_annotations(annotations);
  const auto report =
      seedet::evaluate_detections(cands, gts, seedet::kFrocRates, bootstrap, seed);
  for (const auto& id : report.unannotated)
    std::cerr << "warning: scan '" << id << "' has candidates but no annotations; scored as nodule-free\n";
  seedet::write_froc_csv(out, report.curve, report.band);
  if (!svg.empty()) {
    const std::vector<seedet::PlotSeries> series{{label, report.curve, report.band}};
    seedet::write_froc_svg(svg, series);
  }
  std::printf("%-12s %s\n", "fp/scan", "sensitivity");
  for (std::size_t i = 0; i < report.curve.rates.size(); ++i)
    std::printf("%-12g %.4f\n", report.curve.rates[i], report.curve.sensitivities[i]);
  std::printf("mean         %.4f  (%zu scans)\n", report.curve.mean, report.n_scans);
  return kOk;
}

int gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : seedet::run_gradcheck_suite(seed)) {
    std::printf("%-24s %-4s max_rel_err %.3e (tol %.0e, %zu entries, %zu skipped at kinks)\n", r.name.c_str(),
                r.passed() ? "ok" : "FAIL", r.max_error, r.tolerance, r.checked, r.skipped);
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumeric;
}

int ablate(const TrainArgs& a, const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds,
           const std::string& out) {
  const auto config = resolve_config(a);
  const auto runs = seedet::run_ablation(config, variants, seeds, a.data, a.test, [](const seedet::AblationRun& r) {
    std::fprintf(stderr, "%-9s seed %llu  mean %.4f  sens@4 %.4f  (%.0fs)\n", r.variant.c_str(),
                 static_cast<unsigned long long>(r.seed), r.result.report.curve.mean,
                 seedet::sensitivity_at(r.result.report.curve.points, 4.0), r.result.train_seconds);
  });
  seedet::write_ablation_report(out, runs);
  for (const auto& s : seedet::summarize_ablation(runs))
    std::printf("%-9s mean FROC %.4f\n", s.variant.c_str(), s.mean_curve.mean);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seedet: 3D nodule detection on synthetic phantoms"};
  app.require_subcommand(1);

  std::string phantom_config, phantom_out;
  auto* mk = app.add_subcommand("make-phantoms", "Generate a synthetic dataset");
  mk->add_option("--config", phantom_config, "Phantom config JSON");
  mk->add_option("--out", phantom_out, "Output directory")->required();

  TrainArgs targs;
  auto* tr = app.add_subcommand("train", "Train a detector");
  tr->add_option("--config", targs.config, "Run config JSON (overrides the scale defaults)");
  tr->add_option("--data", targs.data, "Dataset directory")->required();
  tr->add_option("--out", targs.out, "Checkpoint path")->required();
  tr->add_option("--log", targs.log, "Loss log CSV (default <out>.log.csv)");
  tr->add_option("--ablation", targs.ablation, "no_se | no_focal | baseline");
  tr->add_flag("--paper-scale", targs.paper_scale, "Start from the published constants instead of desk scale");
  tr->add_option("--steps", targs.steps, "Override the number of optimizer steps");
  tr->add_option("--seed", targs.seed, "Override the run seed");

  std::string ckpt, mask, cand_out;
  std::vector<std::string> volumes;
  auto* dt = app.add_subcommand("detect", "Detect nodule candidates in volumes");
  dt->add_option("--ckpt", ckpt, "Checkpoint")->required();
  dt->add_option("--volume", volumes, "Volume file(s) (.vol3)")->required();
  dt->add_option("--mask", mask, "Optional lung mask for a single volume");
  dt->add_option("--out", cand_out, "Candidates CSV")->required();

  std::string cands, annots, froc_out, svg, label = "detector";
  std::size_t bootstrap = 0;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "Score candidates with FROC");
  ev->add_option("--candidates", cands, "Candidates CSV")->required();
  ev->add_option("--annotations", annots, "Annotations CSV")->required();
  ev->add_option("--out", froc_out, "FROC CSV")->required();
  ev->add_option("--svg", svg, "Optional SVG plot");
  ev->add_option("--bootstrap", bootstrap, "Bootstrap resamples for the confidence band (0 = none)");
  ev->add_option("--seed", eval_seed, "Bootstrap seed");
  ev->add_option("--label", label, "Curve label in the plot");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "Random seed");

  TrainArgs aargs;
  std::vector<std::string> variants{"full", "no_focal", "no_se"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string ablate_out;
  auto* ab = app.add_subcommand("ablate", "Train and score ablation variants over several seeds");
  ab->add_option("--config", aargs.config, "Run config JSON");
  ab->add_option("--data", aargs.data, "Training dataset directory")->required();
  ab->add_option("--test", aargs.test, "Test dataset directory")->required();
  ab->add_option("--out", ablate_out, "Report directory")->required();
  ab->add_option("--variants", variants, "Variants to compare");
  ab->add_option("--seeds", seeds, "Seeds");
  ab->add_flag("--paper-scale", aargs.paper_scale, "Start from the published constants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*mk) return make_phantoms(phantom_config, phantom_out);
    if (*tr) return train(targs);
    if (*dt) return detect(ckpt, volumes, mask, cand_out);
    if (*ev) return eval(cands, annots, froc_out, svg, bootstrap, eval_seed, label);
    if (*gc) return gradcheck(gc_seed);
    if (*ab) return ablate(aargs, variants, seeds, ablate_out);
  } catch (const seedet::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const seedet::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const seedet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
