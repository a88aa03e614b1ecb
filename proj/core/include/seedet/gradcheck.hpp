#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seedet/tensor.hpp"

namespace seedet {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Entries per tensor compared; larger tensors are sampled at random.
  std::size_t max_entries = 64;
  /// Denominator floor of the relative error.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
  /// Skip entries whose central differences at step and step/2 disagree,
  /// i.e. where a non-differentiable point lies inside the stencil.
  bool kink_check = false;
  /// Largest tolerated fraction of skipped entries.
  double max_skipped_fraction = 0.05;
};

struct GradcheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_error = 0;  // max |a - n| / max(|a|, |n|, abs_floor)
  double tolerance = 0;
  double max_skipped_fraction = 0;
  bool passed() const {
    return checked > 0 && max_error < tolerance &&
           static_cast<double>(skipped) <= max_skipped_fraction * static_cast<double>(checked + skipped);
  }
};

/// Compares reverse-mode gradients of the scalar `loss` with central
/// differences with respect to every tensor in `wrt` (which must be
/// gradient-tracking leaves).
GradcheckResult check_gradients(const std::string& name, const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> wrt, const GradcheckOptions& options = {});

/// Every differentiable operator, the SE residual block, the detection loss
/// and a tiny full network on a 16^3 input.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace seedet
