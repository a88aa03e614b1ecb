#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <optional>
#include <string>
#include <vector>

#include "seedet/checkpoint.hpp"
#include "seedet/ops.hpp"

namespace seedet {

/// Channel plan and switches of the detector.
///
/// Encoder stage i runs at stride 2^(i+1) (stem plus max-pool, then one
/// stride-2 block per further stage). Decoder layers upsample by 2 with a
/// transposed convolution and concatenate the matching encoder stage until
/// `output_stride` is reached; any remaining decoder layers refine at that
/// stride. The head is a 1x1x1 convolution to anchors * 5 channels.
struct NetworkConfig {
  std::vector<std::size_t> encoder_channels{24, 32, 64, 64};
  std::size_t blocks_per_stage = 2;
  std::vector<std::size_t> decoder_channels{64, 64, 128};
  std::size_t num_anchors = 3;
  std::size_t output_stride = 4;
  std::size_t se_reduction = 16;
  bool use_se = true;
  // Loss-level switch, recorded here so ablations travel with the weights.
  bool use_focal = true;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;

  /// Smallest plan used by gradient checks: channels [4,8,8].
  static NetworkConfig tiny();

  std::size_t deepest_stride() const;
  std::size_t head_channels() const { return num_anchors * 5; }
  /// Throws ConfigError when the plan cannot be built.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

enum class Ablation { None, NoSe, NoFocal, Baseline };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);
NetworkConfig ablation_variant(NetworkConfig config, Ablation ablation);

/// Hidden width of the excitation MLP: max(1, C / reduction).
std::size_t se_hidden_width(std::size_t channels, std::size_t reduction = 16);

template <class T>
struct ConvBn {
  Tensor<T> weight;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
  int stride = 1;
  int pad = 1;

  ConvBn() = default;
  ConvBn(std::size_t cin, std::size_t cout, std::size_t k, int stride, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, T eps, T momentum);
};

/// Excitation parameters: w1 [r, C], b1 [r], w2 [C, r], b2 [C].
template <class T>
struct SeParams {
  Tensor<T> w1, b1, w2, b2;

  SeParams() = default;
  SeParams(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);
  std::size_t hidden() const { return w1.dim(0); }
};

/// s = sigmoid(w2 relu(w1 gap(U) + b1) + b2), shape [N, C].
template <class T>
Tensor<T> se_gate(const Tensor<T>& u, const SeParams<T>& p);

template <class T>
using ParameterVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;
template <class T>
using BufferVisitor = std::function<void(const std::string& name, std::vector<T>& buffer)>;

/// Residual block: U = bn(conv(relu(bn(conv(X))))); the SE gate rescales U
/// before the shortcut is added; output relu(U' + shortcut(X)).
template <class T>
struct ResBlock {
  ConvBn<T> conv1;
  ConvBn<T> conv2;
  std::optional<ConvBn<T>> projection;
  std::optional<SeParams<T>> se;

  ResBlock() = default;
  ResBlock(std::size_t cin, std::size_t cout, int stride, bool use_se, std::size_t reduction,
           std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, T eps, T momentum);

  void visit_parameters(const std::string& prefix, const ParameterVisitor<T>& f);
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& f);
};

template <class T>
struct UpLayer {
  Tensor<T> weight;  // [Cin, Cout, 2, 2, 2]
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
};

/// The encoder-decoder region-proposal network.
template <class T>
class Detector {
 public:
  explicit Detector(NetworkConfig config, std::uint64_t seed = 0);

  const NetworkConfig& config() const { return config_; }

  /// Raw head output [N, A*5, D/S, H/S, W/S]; per anchor a, channel 5a is
  /// the classification logit, 5a+1..5a+4 the deltas (dx, dy, dz, dr).
  Tensor<T> forward_logits(const Tensor<T>& input, NormMode mode);

  /// Like forward_logits with the classification channels passed through a
  /// sigmoid. Not differentiable.
  Tensor<T> forward(const Tensor<T>& input, NormMode mode = NormMode::Eval);

  void visit_parameters(const ParameterVisitor<T>& f);
  void visit_buffers(const BufferVisitor<T>& f);

  std::size_t parameter_count();
  void zero_grad();

  /// Parameters and running statistics by dotted name.
  std::map<std::string, StoredArray> state();
  /// Throws ShapeError/ConfigError when names or shapes disagree.
  void load_state(const std::map<std::string, StoredArray>& arrays);

  /// Output grid extent for an input extent; throws ShapeError if the input
  /// is not divisible by the deepest stride.
  std::size_t grid_extent(std::size_t input_extent) const;

 private:
  struct Stage {
    std::vector<ResBlock<T>> blocks;
  };
  struct DecoderLayer {
    std::optional<UpLayer<T>> up;
    std::size_t skip_stage = 0;
    ResBlock<T> block;
  };

  NetworkConfig config_;
  ConvBn<T> stem_;
  std::vector<Stage> stages_;
  std::vector<DecoderLayer> decoder_;
  Tensor<T> head_weight_;
  Tensor<T> head_bias_;
};

extern template class Detector<float>;
extern template class Detector<double>;

/// Classification-head bias at initialization (prior probability ~0.01).
inline constexpr double kHeadPriorBias = -4.6;

}  // namespace seedet
