#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seedet/boxes.hpp"
#include "seedet/tensor.hpp"

namespace seedet {

struct FocalParams {
  double alpha = 0.5;
  double gamma = 2.0;

  /// Throws ConfigError unless alpha in (0, 1] and gamma >= 0.
  void validate() const;
  bool operator==(const FocalParams&) const = default;
};

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbClamp = 1e-7;

/// -alpha (1 - p_t)^gamma ln(p_t), with p_t = p for y = 1 and 1 - p for y = 0.
double focal_loss(double p, int y, const FocalParams& params);
/// Derivative of focal_loss(sigmoid(logit), y) with respect to the logit.
/// Zero where the clamp is active.
double focal_loss_logit_grad(double logit, int y, const FocalParams& params);

double cross_entropy(double p, int y);

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);
double smooth_l1_grad(double x);

/// Sum of smooth_l1 over the four components of pred - target.
double regression_loss(const BoxDeltas& pred, const BoxDeltas& target);

struct LossBreakdown {
  double l_cls = 0;
  double l_reg = 0;
  double total = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t n_ignored = 0;
};

/// Divisor of the summed classification term.
enum class ClsNormalization {
  Anchors,    // n_pos + n_neg
  Positives,  // max(1, n_pos)
};

ClsNormalization parse_cls_normalization(const std::string& name);
std::string cls_normalization_name(ClsNormalization n);

/// Gated total: l_cls is the mean classification term over positives and
/// negatives, l_reg the mean regression term over positives (0 without
/// any), total = l_cls + l_reg. Ignored anchors contribute to neither.
/// With ClsNormalization::Positives the classification sum is divided by
/// max(1, n_pos) instead.
LossBreakdown total_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                         std::span<const AnchorLabel> labels, ClsNormalization norm = ClsNormalization::Anchors);

/// Training targets of one patch, in generate_anchors order.
struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<BoxDeltas> deltas;  // encode_box(gt, anchor) for positives
};

struct DetectionLossOptions {
  FocalParams focal;
  /// Plain cross-entropy (alpha = 1, gamma = 0) when false.
  bool use_focal = true;
  /// When > 0, keep at most ratio * max(1, n_pos) randomly chosen negatives
  /// per patch; the rest are treated as ignored.
  std::size_t negative_ratio = 0;
  std::uint64_t sample_seed = 0;
  ClsNormalization cls_normalization = ClsNormalization::Anchors;
};

/// Applies the per-anchor losses to raw head output logits
/// [N, A*5, Gz, Gy, Gx]; returns a differentiable scalar and its breakdown.
template <class T>
std::pair<Tensor<T>, LossBreakdown> detection_loss(const Tensor<T>& logits, std::span<const AnchorTargets> targets,
                                                   const DetectionLossOptions& options);

}  // namespace seedet
