#include "seedet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"
#include "seedet/error.hpp"
#include "seedet/patches.hpp"
#include "seedet/phantom.hpp"

namespace seedet {

using nlohmann::json;

TrainingData load_training_data(const std::filesystem::path& dir, const RunConfig& config) {
  const Dataset ds = open_dataset(dir);
  TrainingData data;
  bool any = false;
  for (const auto& path : ds.volumes) {
    Volume v = read_volume(path);
    auto nodules = annotations_for(ds.annotations, v.scan_id);
    any = any || !nodules.empty();
    data.volumes.push_back(preprocess(v, config.clip_low, config.clip_high));
    data.annotations.push_back(std::move(nodules));
  }
  if (!any) throw ConfigError("training data in " + dir.string() + " has no annotated volume");
  return data;
}

AnchorTargets make_targets(const RunConfig& config, std::size_t grid, std::span<const NoduleAnnotation> nodules) {
  const std::size_t stride = config.train_patch / grid;
  const auto anchors = generate_anchors(grid, grid, grid, stride, config.anchor_sizes);
  std::vector<Box3> gts;
  for (const auto& n : nodules) gts.push_back({n.x, n.y, n.z, n.radius()});
  AnchorTargets t;
  t.labels = assign_labels(anchors, gts, config.label_params());
  t.deltas.assign(anchors.size(), BoxDeltas{});
  for (std::size_t k = 0; k < anchors.size(); ++k)
    if (t.labels[k].kind == AnchorLabel::Kind::Positive) t.deltas[k] = encode_box(gts[t.labels[k].gt], anchors[k].box);
  return t;
}

Batch make_batch(const RunConfig& config, const TrainingData& data, std::size_t step) {
  if (data.volumes.empty()) throw ConfigError("make_batch: no training volumes");
  const std::size_t B = config.batch_size, P = config.train_patch, P3 = P * P * P;
  const std::size_t grid = P / config.network.output_stride;
  Batch batch;
  std::vector<float> input(B * P3);
  for (std::size_t i = 0; i < B; ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, step, i));
    const auto v = std::uniform_int_distribution<std::size_t>(0, data.volumes.size() - 1)(rng);
    PatchSample s = extract_train_patch(data.volumes[v], data.annotations[v], rng, config.crop_params());
    if (config.augment) s = augment(s, rng, config.augment_ranges());
    std::copy(s.values.begin(), s.values.end(), input.begin() + static_cast<std::ptrdiff_t>(i * P3));
    batch.targets.push_back(make_targets(config, grid, s.annotations));
  }
  batch.input = Tensor<float>({B, 1, P, P, P}, std::move(input));
  return batch;
}

std::string loss_log_header() { return "step,l_cls,l_reg,total,n_pos,n_neg"; }

std::string loss_log_row(const StepLog& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.step << ',' << r.loss.l_cls << ',' << r.loss.l_reg << ',' << r.loss.total << ','
     << r.loss.n_pos << ',' << r.loss.n_neg;
  return os.str();
}

double SgdMomentum::lr_at(std::size_t step) const {
  double lr = config_.lr;
  for (auto m : config_.lr_milestones)
    if (step >= m) lr *= config_.lr_gamma;
  return lr;
}

void SgdMomentum::step(Detector<float>& net, std::size_t step_index) {
  const auto lr = static_cast<float>(lr_at(step_index));
  const auto mom = static_cast<float>(config_.momentum);
  const auto wd = static_cast<float>(config_.weight_decay);
  net.visit_parameters([&](const std::string& name, Tensor<float>& p) {
    if (!p.has_grad()) return;
    auto& v = velocity_[name];
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0f);
    auto w = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mom * v[i] + (g[i] + wd * w[i]);
      w[i] -= lr * v[i];
    }
    detail::check_finite<float>(w, name.c_str());
  });
}

std::map<std::string, StoredArray> SgdMomentum::state() const {
  std::map<std::string, StoredArray> out;
  for (const auto& [name, v] : velocity_) out["optim." + name] = StoredArray{{v.size()}, {v.begin(), v.end()}};
  return out;
}

void SgdMomentum::load_state(const std::map<std::string, StoredArray>& arrays) {
  velocity_.clear();
  for (const auto& [name, a] : arrays) {
    if (name.rfind("optim.", 0) != 0) continue;
    velocity_[name.substr(6)] = std::vector<float>(a.values.begin(), a.values.end());
  }
}

std::size_t total_steps(const RunConfig& config, std::size_t n_volumes) {
  const std::size_t per_epoch = config.steps_per_epoch
                                    ? config.steps_per_epoch
                                    : std::max<std::size_t>(1, (n_volumes + config.batch_size - 1) / config.batch_size);
  return config.epochs * per_epoch;
}

CheckpointFile make_checkpoint(const RunConfig& config, Detector<float>& net, const SgdMomentum& optimizer,
                               std::size_t step) {
  CheckpointFile f;
  f.arrays = net.state();
  for (auto& [name, a] : optimizer.state()) f.arrays[name] = a;
  json meta{{"config", json::parse(to_json(config))}, {"step", step}, {"seed", config.seed}};
  f.metadata = meta.dump(2);
  return f;
}

TrainResult train(const RunConfig& config, const TrainingData& data, const TrainOptions& options) {
  config.validate();
  Detector<float> net(config.network, config.seed);
  SgdMomentum optimizer(config.optimizer);
  const std::size_t steps = options.max_steps ? options.max_steps : total_steps(config, data.volumes.size());

  std::ofstream log_file;
  if (options.log_path) {
    log_file.open(*options.log_path, std::ios::trunc);
    if (!log_file) throw IoError("cannot open " + options.log_path->string() + " for writing");
    log_file << loss_log_header() << '\n';
  }

  TrainResult result;
  for (std::size_t step = 0; step < steps; ++step) {
    StepLog row;
    row.step = step;
    row.lr = optimizer.lr_at(step);
    try {
      Batch batch = make_batch(config, data, step);
      net.zero_grad();
      auto logits = net.forward_logits(batch.input, NormMode::Train);
      auto [loss, breakdown] = detection_loss(logits, batch.targets, config.loss_options(derive_seed(config.seed, step)));
      if (!std::isfinite(breakdown.total)) throw NumericError("non-finite loss");
      backward(loss);
      optimizer.step(net, step);
      row.loss = breakdown;
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    result.log.push_back(row);
    if (log_file && step % config.log_every == 0) log_file << loss_log_row(row) << '\n' << std::flush;
    if (options.on_step) options.on_step(row);
    if (options.checkpoint_path && config.checkpoint_every && (step + 1) % config.checkpoint_every == 0 &&
        step + 1 < steps)
      save_checkpoint(*options.checkpoint_path, make_checkpoint(config, net, optimizer, step + 1));
  }
  result.checkpoint = make_checkpoint(config, net, optimizer, steps);
  if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, result.checkpoint);
  return result;
}

LoadedModel load_model(const CheckpointFile& file) {
  json meta;
  try {
    meta = json::parse(file.metadata);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!meta.contains("config")) throw ConfigError("checkpoint metadata lacks a run config");
  RunConfig config = run_config_from_json(meta.at("config").dump());
  LoadedModel model{config, meta.value("step", std::size_t{0}), Detector<float>(config.network, config.seed)};
  std::map<std::string, StoredArray> net_arrays;
  for (const auto& [name, a] : file.arrays)
    if (name.rfind("optim.", 0) != 0) net_arrays.emplace(name, a);
  model.net.load_state(net_arrays);
  return model;
}

LoadedModel load_model(const std::filesystem::path& path) { return load_model(load_checkpoint(path)); }

}  // namespace seedet
