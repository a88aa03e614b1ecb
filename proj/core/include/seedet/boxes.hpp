#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace seedet {

/// Axis-aligned cube in voxel coordinates; r is half the side length.
struct Box3 {
  double cx = 0, cy = 0, cz = 0;
  double r = 1;

  double volume() const { return 8.0 * r * r * r; }
  bool operator==(const Box3&) const = default;
};

/// Box regression parameterization (dx, dy, dz, dr), all dimensionless.
using BoxDeltas = std::array<double, 4>;

double iou(const Box3& a, const Box3& b);

struct Anchor {
  Box3 box;
  std::size_t gz = 0, gy = 0, gx = 0;
  std::size_t slot = 0;
};

/// One anchor per (cell, size) with centers at (g + 0.5) * stride and
/// radius size / 2, ordered by (z, y, x, slot). `sizes` are side lengths.
std::vector<Anchor> generate_anchors(std::size_t gz, std::size_t gy, std::size_t gx, std::size_t stride,
                                     std::span<const double> sizes);

struct AnchorLabel {
  enum class Kind { Negative, Positive, Ignored };
  Kind kind = Kind::Negative;
  std::size_t gt = 0;  // meaningful for Positive only

  static AnchorLabel negative() { return {Kind::Negative, 0}; }
  static AnchorLabel ignored() { return {Kind::Ignored, 0}; }
  static AnchorLabel positive(std::size_t gt) { return {Kind::Positive, gt}; }
  bool operator==(const AnchorLabel&) const = default;
};

struct LabelParams {
  double pos_thresh = 0.5;
  double neg_thresh = 0.02;
  // Guarantee each ground truth its best-overlapping anchor.
  bool force_best = true;
};

/// IoU > pos_thresh -> positive (argmax gt, ties to the lowest index);
/// IoU < neg_thresh against every gt -> negative; otherwise ignored. With
/// force_best, every gt lacking a positive claims its best anchor among
/// those not yet positive (ties to the lowest anchor index).
std::vector<AnchorLabel> assign_labels(std::span<const Anchor> anchors, std::span<const Box3> gts,
                                       const LabelParams& params = {});

struct LabelCounts {
  std::size_t positive = 0, negative = 0, ignored = 0;
};
LabelCounts count_labels(std::span<const AnchorLabel> labels);

/// ((xg - xa) / ra, (yg - ya) / ra, (zg - za) / ra, ln(rg / ra)).
BoxDeltas encode_box(const Box3& gt, const Box3& anchor);
/// Inverse of encode_box; the radius is ra * exp(dr) and always positive.
Box3 decode_box(const Box3& anchor, const BoxDeltas& deltas);

/// Greedy suppression: keeps the most probable remaining box, drops boxes
/// with IoU > iou_thresh against it. Ties go to the lower index. Returns
/// kept indices by descending probability.
std::vector<std::size_t> nms(std::span<const Box3> boxes, std::span<const double> probs, double iou_thresh);

}  // namespace seedet
