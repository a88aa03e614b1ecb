#include "seedet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seedet/error.hpp"

namespace seedet {

void FocalParams::validate() const {
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("focal: alpha must lie in (0, 1]");
  if (!(gamma >= 0)) throw ConfigError("focal: gamma must be >= 0");
}

namespace {

void check_label(int y) {
  if (y != 0 && y != 1) throw ConfigError("focal: label must be 0 or 1, got " + std::to_string(y));
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

double focal_loss(double p, int y, const FocalParams& params) {
  check_label(y);
  const double pc = clamp_prob(p);
  const double pt = y == 1 ? pc : 1.0 - pc;
  return -params.alpha * std::pow(1.0 - pt, params.gamma) * std::log(pt);
}

double focal_loss_logit_grad(double logit, int y, const FocalParams& params) {
  check_label(y);
  const double p = 1.0 / (1.0 + std::exp(-logit));
  if (p <= kProbClamp || p >= 1.0 - kProbClamp) return 0.0;
  const double pt = y == 1 ? p : 1.0 - p;
  const double q = 1.0 - pt;
  // dL/dpt = alpha gamma q^(gamma-1) ln(pt) - alpha q^gamma / pt
  double dpt = -params.alpha * std::pow(q, params.gamma) / pt;
  if (params.gamma != 0.0) dpt += params.alpha * params.gamma * std::pow(q, params.gamma - 1.0) * std::log(pt);
  const double dp = y == 1 ? dpt : -dpt;
  return dp * p * (1.0 - p);
}

double cross_entropy(double p, int y) {
  check_label(y);
  const double pc = clamp_prob(p);
  return -std::log(y == 1 ? pc : 1.0 - pc);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

double regression_loss(const BoxDeltas& pred, const BoxDeltas& target) {
  double acc = 0;
  for (std::size_t k = 0; k < 4; ++k) acc += smooth_l1(pred[k] - target[k]);
  return acc;
}

ClsNormalization parse_cls_normalization(const std::string& name) {
  if (name == "anchors") return ClsNormalization::Anchors;
  if (name == "positives") return ClsNormalization::Positives;
  throw ConfigError("unknown classification normalization '" + name + "' (anchors | positives)");
}

std::string cls_normalization_name(ClsNormalization n) {
  return n == ClsNormalization::Anchors ? "anchors" : "positives";
}

namespace {

double cls_divisor(const LossBreakdown& b, ClsNormalization norm) {
  if (norm == ClsNormalization::Positives) return static_cast<double>(std::max<std::size_t>(1, b.n_pos));
  return static_cast<double>(b.n_pos + b.n_neg);
}

}  // namespace

LossBreakdown total_loss(std::span<const double> cls_terms, std::span<const double> reg_terms,
                         std::span<const AnchorLabel> labels, ClsNormalization norm) {
  if (cls_terms.size() != labels.size() || reg_terms.size() != labels.size()) {
    throw ShapeError("total_loss: term and label counts differ");
  }
  LossBreakdown out;
  double cls = 0, reg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    switch (labels[i].kind) {
      case AnchorLabel::Kind::Positive:
        ++out.n_pos;
        cls += cls_terms[i];
        reg += reg_terms[i];
        break;
      case AnchorLabel::Kind::Negative:
        ++out.n_neg;
        cls += cls_terms[i];
        break;
      case AnchorLabel::Kind::Ignored: ++out.n_ignored; break;
    }
  }
  if (out.n_pos + out.n_neg == 0) throw Error("total_loss: no positive or negative anchors");
  out.l_cls = cls / cls_divisor(out, norm);
  out.l_reg = out.n_pos ? reg / static_cast<double>(out.n_pos) : 0.0;
  out.total = out.l_cls + out.l_reg;
  return out;
}

template <class T>
std::pair<Tensor<T>, LossBreakdown> detection_loss(const Tensor<T>& logits, std::span<const AnchorTargets> targets,
                                                   const DetectionLossOptions& options) {
  if (logits.rank() != 5 || logits.dim(1) % 5 != 0) {
    throw ShapeError("detection_loss: logits must be [N, A*5, Gz, Gy, Gx], got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), A = logits.dim(1) / 5;
  const std::size_t sp = logits.dim(2) * logits.dim(3) * logits.dim(4);
  const std::size_t per_sample = sp * A;
  if (targets.size() != n) throw ShapeError("detection_loss: one target set per sample required");
  for (const auto& t : targets) {
    if (t.labels.size() != per_sample || t.deltas.size() != per_sample) {
      throw ShapeError("detection_loss: expected " + std::to_string(per_sample) + " anchors per sample");
    }
  }
  FocalParams fp = options.use_focal ? options.focal : FocalParams{1.0, 0.0};
  fp.validate();

  // Effective labels after optional negative subsampling.
  std::vector<std::vector<AnchorLabel>> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = targets[i].labels;
    if (options.negative_ratio == 0) continue;
    const auto counts = count_labels(labels[i]);
    const std::size_t cap = options.negative_ratio * std::max<std::size_t>(1, counts.positive);
    if (counts.negative <= cap) continue;
    std::vector<std::size_t> negs;
    for (std::size_t k = 0; k < labels[i].size(); ++k)
      if (labels[i][k].kind == AnchorLabel::Kind::Negative) negs.push_back(k);
    std::mt19937_64 rng(options.sample_seed * 1000003ULL + i);
    std::shuffle(negs.begin(), negs.end(), rng);
    for (std::size_t k = cap; k < negs.size(); ++k) labels[i][negs[k]] = AnchorLabel::ignored();
  }

  const auto lv = logits.data();
  // anchor k = cell * A + slot, channel = slot * 5 + component
  const auto at = [&](std::size_t i, std::size_t k, std::size_t comp) {
    return (i * A * 5 + (k % A) * 5 + comp) * sp + k / A;
  };

  std::vector<double> cls_terms, reg_terms;
  std::vector<AnchorLabel> flat;
  cls_terms.reserve(n * per_sample);
  reg_terms.reserve(n * per_sample);
  flat.reserve(n * per_sample);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < per_sample; ++k) {
      const auto& lab = labels[i][k];
      flat.push_back(lab);
      double c = 0, r = 0;
      if (lab.kind != AnchorLabel::Kind::Ignored) {
        const double z = lv[at(i, k, 0)];
        c = focal_loss(1.0 / (1.0 + std::exp(-z)), lab.kind == AnchorLabel::Kind::Positive ? 1 : 0, fp);
      }
      if (lab.kind == AnchorLabel::Kind::Positive) {
        BoxDeltas pred{};
        for (std::size_t q = 0; q < 4; ++q) pred[q] = lv[at(i, k, q + 1)];
        r = regression_loss(pred, targets[i].deltas[k]);
      }
      cls_terms.push_back(c);
      reg_terms.push_back(r);
    }
  const LossBreakdown breakdown = total_loss(cls_terms, reg_terms, flat, options.cls_normalization);

  std::vector<T> dlogits(logits.numel(), T(0));
  const double inv_active = 1.0 / cls_divisor(breakdown, options.cls_normalization);
  const double inv_pos = breakdown.n_pos ? 1.0 / static_cast<double>(breakdown.n_pos) : 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < per_sample; ++k) {
      const auto& lab = labels[i][k];
      if (lab.kind == AnchorLabel::Kind::Ignored) continue;
      const bool pos = lab.kind == AnchorLabel::Kind::Positive;
      const std::size_t zi = at(i, k, 0);
      dlogits[zi] = static_cast<T>(focal_loss_logit_grad(lv[zi], pos ? 1 : 0, fp) * inv_active);
      if (!pos) continue;
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t di = at(i, k, q + 1);
        dlogits[di] = static_cast<T>(smooth_l1_grad(lv[di] - targets[i].deltas[k][q]) * inv_pos);
      }
    }

  Tensor<T> loss = detail::make_result<T>(
      Shape{}, std::vector<T>{static_cast<T>(breakdown.total)}, "detection_loss", {logits.node()},
      [d = std::move(dlogits)](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        const T g = self.grad[0];
        for (std::size_t j = 0; j < d.size(); ++j) in.grad[j] += g * d[j];
      });
  return {std::move(loss), breakdown};
}

template std::pair<Tensor<float>, LossBreakdown> detection_loss(const Tensor<float>&, std::span<const AnchorTargets>,
                                                                const DetectionLossOptions&);
template std::pair<Tensor<double>, LossBreakdown> detection_loss(const Tensor<double>&,
                                                                 std::span<const AnchorTargets>,
                                                                 const DetectionLossOptions&);

}  // namespace seedet
