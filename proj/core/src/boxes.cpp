#include "seedet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seedet/error.hpp"

namespace seedet {

namespace {

double overlap_1d(double ca, double ra, double cb, double rb) {
  const double lo = std::max(ca - ra, cb - rb);
  const double hi = std::min(ca + ra, cb + rb);
  return std::max(0.0, hi - lo);
}

}  // namespace

double iou(const Box3& a, const Box3& b) {
  const double inter = overlap_1d(a.cx, a.r, b.cx, b.r) * overlap_1d(a.cy, a.r, b.cy, b.r) *
                       overlap_1d(a.cz, a.r, b.cz, b.r);
  if (inter <= 0) return 0.0;
  return inter / (a.volume() + b.volume() - inter);
}

std::vector<Anchor> generate_anchors(std::size_t gz, std::size_t gy, std::size_t gx, std::size_t stride,
                                     std::span<const double> sizes) {
  if (stride == 0) throw ConfigError("anchors: stride must be >= 1");
  for (double s : sizes)
    if (!(s > 0)) throw ConfigError("anchors: sizes must be positive");
  std::vector<Anchor> out;
  out.reserve(gz * gy * gx * sizes.size());
  const double st = static_cast<double>(stride);
  for (std::size_t z = 0; z < gz; ++z)
    for (std::size_t y = 0; y < gy; ++y)
      for (std::size_t x = 0; x < gx; ++x)
        for (std::size_t a = 0; a < sizes.size(); ++a) {
          Anchor anc;
          anc.box = Box3{(static_cast<double>(x) + 0.5) * st, (static_cast<double>(y) + 0.5) * st,
                         (static_cast<double>(z) + 0.5) * st, sizes[a] / 2.0};
          anc.gz = z, anc.gy = y, anc.gx = x, anc.slot = a;
          out.push_back(anc);
        }
  return out;
}

std::vector<AnchorLabel> assign_labels(std::span<const Anchor> anchors, std::span<const Box3> gts,
                                       const LabelParams& params) {
  if (!(params.neg_thresh >= 0 && params.neg_thresh < params.pos_thresh && params.pos_thresh <= 1)) {
    throw ConfigError("assign_labels: thresholds must satisfy 0 <= neg < pos <= 1");
  }
  std::vector<AnchorLabel> labels(anchors.size(), AnchorLabel::negative());
  if (gts.empty()) return labels;

  std::vector<double> best_iou(gts.size(), 0.0);
  std::vector<bool> has_positive(gts.size(), false);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double top = -1;
    std::size_t arg = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i].box, gts[g]);
      if (v > top) {
        top = v;
        arg = g;
      }
      best_iou[g] = std::max(best_iou[g], v);
    }
    if (top > params.pos_thresh) {
      labels[i] = AnchorLabel::positive(arg);
      has_positive[arg] = true;
    } else if (top >= params.neg_thresh) {
      labels[i] = AnchorLabel::ignored();
    }
  }

  if (params.force_best) {
    std::vector<bool> claimed(anchors.size(), false);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (has_positive[g]) continue;
      double top = 0;
      std::size_t arg = anchors.size();
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        // Taking another gt's positive could leave that gt with none.
        if (claimed[i] || labels[i].kind == AnchorLabel::Kind::Positive) continue;
        const double v = iou(anchors[i].box, gts[g]);
        if (v > top) {
          top = v;
          arg = i;
        }
      }
      if (arg == anchors.size()) continue;  // gt overlaps no free anchor
      claimed[arg] = true;
      labels[arg] = AnchorLabel::positive(g);
    }
  }
  return labels;
}

LabelCounts count_labels(std::span<const AnchorLabel> labels) {
  LabelCounts c;
  for (const auto& l : labels) {
    switch (l.kind) {
      case AnchorLabel::Kind::Positive: ++c.positive; break;
      case AnchorLabel::Kind::Negative: ++c.negative; break;
      case AnchorLabel::Kind::Ignored: ++c.ignored; break;
    }
  }
  return c;
}

BoxDeltas encode_box(const Box3& gt, const Box3& anchor) {
  if (!(gt.r > 0) || !(anchor.r > 0)) throw ConfigError("encode_box: radii must be positive");
  return {(gt.cx - anchor.cx) / anchor.r, (gt.cy - anchor.cy) / anchor.r, (gt.cz - anchor.cz) / anchor.r,
          std::log(gt.r / anchor.r)};
}

Box3 decode_box(const Box3& anchor, const BoxDeltas& d) {
  return Box3{anchor.cx + d[0] * anchor.r, anchor.cy + d[1] * anchor.r, anchor.cz + d[2] * anchor.r,
              anchor.r * std::exp(d[3])};
}

std::vector<std::size_t> nms(std::span<const Box3> boxes, std::span<const double> probs, double iou_thresh) {
  if (boxes.size() != probs.size()) throw ConfigError("nms: boxes and probabilities differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(boxes[idx], boxes[k]) > iou_thresh) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(idx);
  }
  return kept;
}

}  // namespace seedet
