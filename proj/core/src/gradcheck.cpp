#include "seedet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "seedet/boxes.hpp"
#include "seedet/error.hpp"
#include "seedet/losses.hpp"
#include "seedet/network.hpp"
#include "seedet/ops.hpp"

namespace seedet {

GradcheckResult check_gradients(const std::string& name, const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> wrt, const GradcheckOptions& options) {
  GradcheckResult result;
  result.name = name;
  result.tolerance = options.tolerance;
  result.max_skipped_fraction = options.max_skipped_fraction;
  for (auto& t : wrt) {
    if (!t.is_leaf() || !t.requires_grad()) throw Error("check_gradients: '" + name + "' needs gradient leaves");
    t.zero_grad();
  }
  backward(loss());

  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (auto& t : wrt) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
    }
    for (std::size_t i : idx) {
      auto v = t.mutable_data();
      const double saved = v[i];
      const auto central = [&](double step) {
        v[i] = saved + step;
        const double up = loss().item();
        v[i] = saved - step;
        const double down = loss().item();
        v[i] = saved;
        return (up - down) / (2 * step);
      };
      const double numeric = central(h);
      const double a = analytic[i];
      const auto rel = [&](double x, double y) {
        return std::abs(x - y) / std::max({std::abs(x), std::abs(y), options.abs_floor});
      };
      if (options.kink_check && rel(numeric, central(h / 2)) > options.tolerance) {
        // A relu or max-pool switch lies within the stencil.
        ++result.skipped;
        continue;
      }
      result.max_error = std::max(result.max_error, rel(a, numeric));
      ++result.checked;
    }
  }
  return result;
}

namespace {

// Values bounded away from zero so relu kinks are never crossed.
Tensor<double> random_leaf(Shape shape, std::mt19937_64& rng, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

Tensor<double> random_const(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

// <f(.), R> for a fixed random R exercises the full Jacobian.
std::function<Tensor<double>()> projected(std::function<Tensor<double>()> f, std::mt19937_64& rng) {
  Tensor<double> probe;
  {
    NoGradGuard guard;
    probe = random_const(f().shape(), rng);
  }
  return [f = std::move(f), probe] { return sum(mul(f(), probe)); };
}

std::vector<Tensor<double>> parameters_of(const std::function<void(const ParameterVisitor<double>&)>& visit) {
  std::vector<Tensor<double>> out;
  visit([&](const std::string&, Tensor<double>& p) { out.push_back(p); });
  return out;
}

AnchorTargets synthetic_targets(std::size_t grid, std::size_t stride, std::span<const double> sizes,
                                std::span<const Box3> gts) {
  const auto anchors = generate_anchors(grid, grid, grid, stride, sizes);
  AnchorTargets t;
  t.labels = assign_labels(anchors, gts);
  t.deltas.assign(anchors.size(), BoxDeltas{});
  for (std::size_t k = 0; k < anchors.size(); ++k)
    if (t.labels[k].kind == AnchorLabel::Kind::Positive) t.deltas[k] = encode_box(gts[t.labels[k].gt], anchors[k].box);
  return t;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradcheckResult> out;
  GradcheckOptions elementwise;
  elementwise.step = 1e-5;
  elementwise.tolerance = 1e-6;
  elementwise.seed = seed;
  GradcheckOptions composite;
  composite.seed = seed;

  const auto run = [&](const std::string& name, std::function<Tensor<double>()> f, std::vector<Tensor<double>> wrt,
                       const GradcheckOptions& opt) {
    out.push_back(check_gradients(name, projected(std::move(f), rng), std::move(wrt), opt));
  };

  {
    auto a = random_leaf({3, 4}, rng), b = random_leaf({3, 4}, rng);
    run("add", [=] { return add(a, b); }, {a, b}, elementwise);
    run("mul", [=] { return mul(a, b); }, {a, b}, elementwise);
    run("scale", [=] { return scale(a, 1.7); }, {a}, elementwise);
    run("relu", [=] { return relu(a); }, {a}, elementwise);
    run("sigmoid", [=] { return sigmoid(scale(a, 3.0)); }, {a}, elementwise);
    out.push_back(check_gradients("sum", [=] { return sum(mul(a, a)); }, {a}, elementwise));
  }
  {
    auto u = random_leaf({2, 3, 2, 3, 2}, rng), s = random_leaf({2, 3}, rng);
    run("scale_channels", [=] { return scale_channels(u, s); }, {u, s}, composite);
    run("global_avg_pool", [=] { return global_avg_pool(u); }, {u}, composite);
    auto v = random_leaf({2, 2, 2, 3, 2}, rng);
    run("concat_channels", [=] { return concat_channels(u, v); }, {u, v}, composite);
  }
  {
    auto x = random_leaf({3, 5}, rng), w = random_leaf({4, 5}, rng), b = random_leaf({4}, rng);
    run("dense", [=] { return dense(x, w, std::optional<Tensor<double>>(b)); }, {x, w, b}, composite);
  }
  {
    auto x = random_leaf({2, 2, 5, 4, 6}, rng), w = random_leaf({3, 2, 3, 3, 3}, rng), b = random_leaf({3}, rng);
    run("conv3d", [=] { return conv3d(x, w, std::optional<Tensor<double>>(b), 1, 1); }, {x, w, b}, composite);
    run("conv3d_stride2", [=] { return conv3d(x, w, std::optional<Tensor<double>>{}, 2, 1); }, {x, w},
        composite);
    auto w1 = random_leaf({4, 2, 1, 1, 1}, rng);
    run("conv3d_1x1_stride2", [=] { return conv3d(x, w1, std::optional<Tensor<double>>{}, 2, 0); }, {x, w1},
        composite);
  }
  {
    auto x = random_leaf({2, 3, 2, 3, 2}, rng), w = random_leaf({3, 2, 2, 2, 2}, rng), b = random_leaf({2}, rng);
    run("conv3d_transpose", [=] { return conv3d_transpose(x, w, std::optional<Tensor<double>>(b), 2, 0); }, {x, w, b}, composite);
    auto w3 = random_leaf({3, 2, 3, 3, 3}, rng);
    run("conv3d_transpose_k3", [=] { return conv3d_transpose(x, w3, std::optional<Tensor<double>>{}, 2, 1); },
        {x, w3}, composite);
  }
  {
    // Distinct values keep every window's maximum unique.
    std::vector<double> v(2 * 2 * 4 * 4 * 4);
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng);
    for (auto& e : v) e *= 0.1;
    auto x = Tensor<double>::parameter({2, 2, 4, 4, 4}, v);
    run("max_pool3d", [=] { return max_pool3d(x, 2, 2); }, {x}, composite);
  }
  {
    auto x = random_leaf({2, 3, 3, 2, 2}, rng), g = random_leaf({3}, rng), b = random_leaf({3}, rng);
    auto stats = std::make_shared<BatchNormStats<double>>(
        BatchNormStats<double>{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)});
    run("batch_norm_train", [=] { return batch_norm(x, g, b, *stats, NormMode::Train); }, {x, g, b}, composite);
    run("batch_norm_eval", [=] { return batch_norm(x, g, b, *stats, NormMode::Eval); }, {x, g, b}, composite);
  }
  {
    std::mt19937_64 init(seed + 1);
    auto block = std::make_shared<ResBlock<double>>(4, 8, 2, true, 4, init);
    auto x = random_leaf({2, 4, 4, 4, 4}, rng);
    auto wrt = parameters_of([&](const ParameterVisitor<double>& f) { block->visit_parameters("b", f); });
    wrt.push_back(x);
    run("se_resblock", [=] { return block->forward(x, NormMode::Train, 1e-5, 0.1); }, wrt, composite);
    auto se = std::make_shared<SeParams<double>>(8, 4, init);
    auto u = random_leaf({2, 8, 2, 2, 2}, rng);
    run("se_gate", [=] { return se_gate(u, *se); }, {u, se->w1, se->b1, se->w2, se->b2}, composite);
  }
  {
    const std::vector<double> sizes{5.0, 10.0};
    const std::vector<Box3> gts{{6.0, 7.0, 5.0, 3.0}, {12.0, 3.0, 10.0, 5.0}};
    auto targets = std::make_shared<std::vector<AnchorTargets>>(
        std::vector<AnchorTargets>{synthetic_targets(4, 4, sizes, gts), synthetic_targets(4, 4, sizes, gts)});
    auto logits = random_leaf({2, 10, 4, 4, 4}, rng, 0.05, 2.0);
    for (bool focal : {true, false}) {
      DetectionLossOptions opt;
      opt.use_focal = focal;
      out.push_back(check_gradients(focal ? "detection_loss_focal" : "detection_loss_ce",
                                    [=] { return detection_loss(logits, *targets, opt).first; }, {logits},
                                    composite));
    }
  }
  {
    auto net = std::make_shared<Detector<double>>(NetworkConfig::tiny(), seed);
    const std::vector<double> sizes{5.0, 10.0, 20.0};
    const std::vector<Box3> gts{{7.5, 8.0, 6.5, 3.0}};
    const std::size_t grid = net->grid_extent(16);
    auto targets = std::make_shared<std::vector<AnchorTargets>>(
        std::vector<AnchorTargets>{synthetic_targets(grid, 16 / grid, sizes, gts),
                                   synthetic_targets(grid, 16 / grid, sizes, gts)});
    auto x = random_leaf({2, 1, 16, 16, 16}, rng, 0.0, 1.0);
    auto wrt = parameters_of([&](const ParameterVisitor<double>& f) { net->visit_parameters(f); });
    wrt.push_back(x);
    GradcheckOptions opt = composite;
    opt.max_entries = 6;
    opt.step = 1e-5;
    opt.kink_check = true;
    out.push_back(check_gradients(
        "tiny_network_16",
        [=] { return detection_loss(net->forward_logits(x, NormMode::Train), *targets, DetectionLossOptions{}).first; },
        wrt, opt));
  }
  return out;
}

}  // namespace seedet
