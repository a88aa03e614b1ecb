#include "seedet/detect.hpp"

#include <algorithm>
#include <cmath>

#include "seedet/boxes.hpp"
#include "seedet/error.hpp"
#include "seedet/patches.hpp"

namespace seedet {

std::vector<Candidate> detect(Detector<float>& net, const RunConfig& config, const Volume& raw) {
  raw.validate();
  if (net.config().num_anchors != config.anchor_sizes.size())
    throw ConfigError("detect: network has " + std::to_string(net.config().num_anchors) + " anchors, config lists " +
                      std::to_string(config.anchor_sizes.size()));
  const Volume volume = preprocess(raw, config.clip_low, config.clip_high);
  const std::size_t P = config.eval_patch;
  const std::size_t G = net.grid_extent(P);
  const std::size_t A = config.anchor_sizes.size();
  const auto anchors = generate_anchors(G, G, G, P / G, config.anchor_sizes);
  const std::size_t sp = G * G * G;

  std::vector<Box3> boxes;
  std::vector<double> probs;
  NoGradGuard no_grad;
  for (const auto& patch : tile_test_patches(volume, P, config.eval_overlap)) {
    const Tensor<float> input({1, 1, P, P, P}, patch.values);
    const Tensor<float> out = net.forward(input, NormMode::Eval);
    const auto v = out.data();
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      const std::size_t cell = k / A, slot = k % A;
      const double p = v[(slot * 5) * sp + cell];
      if (p < config.prob_cutoff) continue;
      BoxDeltas d;
      for (std::size_t q = 0; q < 4; ++q) d[q] = v[(slot * 5 + q + 1) * sp + cell];
      Box3 b = decode_box(anchors[k].box, d);
      b.cx += static_cast<double>(patch.origin[0]);
      b.cy += static_cast<double>(patch.origin[1]);
      b.cz += static_cast<double>(patch.origin[2]);
      boxes.push_back(b);
      probs.push_back(p);
    }
  }
  auto candidates = stitch_candidates(raw.scan_id, boxes, probs, config.nms_iou, config.top_k);
  const auto clamp_to = [](double c, std::size_t n) { return std::clamp(c, 0.0, static_cast<double>(n) - 1.0); };
  for (auto& c : candidates) {
    c.x = clamp_to(c.x, raw.nx);
    c.y = clamp_to(c.y, raw.ny);
    c.z = clamp_to(c.z, raw.nz);
  }
  return candidates;
}

std::vector<Candidate> threshold_detect(const Volume& raw, double hu_threshold) {
  raw.validate();
  const std::size_t n = raw.size();
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::size_t> stack;
  std::vector<Candidate> out;
  const long X = static_cast<long>(raw.nx), Y = static_cast<long>(raw.ny), Z = static_cast<long>(raw.nz);
  for (std::size_t start = 0; start < n; ++start) {
    if (seen[start] || raw.values[start] < hu_threshold) continue;
    double sx = 0, sy = 0, sz = 0, peak = -1e300;
    std::size_t count = 0;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const long x = static_cast<long>(i) % X, y = (static_cast<long>(i) / X) % Y, z = static_cast<long>(i) / (X * Y);
      sx += static_cast<double>(x);
      sy += static_cast<double>(y);
      sz += static_cast<double>(z);
      peak = std::max(peak, static_cast<double>(raw.values[i]));
      ++count;
      const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= X || q[1] >= Y || q[2] >= Z) continue;
        const auto j = static_cast<std::size_t>((q[2] * Y + q[1]) * X + q[0]);
        if (seen[j] || raw.values[j] < hu_threshold) continue;
        seen[j] = 1;
        stack.push_back(j);
      }
    }
    const double c = static_cast<double>(count);
    const double p = std::clamp(normalize_intensity(peak), 1e-6, 1.0 - 1e-6);
    out.push_back(Candidate{raw.scan_id, sx / c, sy / c, sz / c, p});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.probability > b.probability; });
  return out;
}

FrocReport evaluate_detections(std::span<const Candidate> candidates, std::span<const NoduleAnnotation> annotations,
                               std::span<const double> rates, std::size_t bootstrap, std::uint64_t seed,
                               std::span<const std::string> extra_scans) {
  FrocReport report;
  auto scans = group_by_scan(candidates, annotations, &report.unannotated);
  for (const auto& id : extra_scans) {
    const bool present = std::any_of(scans.begin(), scans.end(), [&](const ScanResult& s) { return s.scan_id == id; });
    if (!present) scans.push_back(ScanResult{id, {}, {}});
  }
  report.n_scans = scans.size();
  report.curve = froc(scans, rates);
  if (bootstrap > 0) report.band = bootstrap_band(scans, bootstrap, 0.95, seed, rates);
  return report;
}

}  // namespace seedet
