#include "seedet/network.hpp"

#include <cmath>

#include "seedet/error.hpp"

namespace seedet {

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.encoder_channels = {4, 8, 8};
  c.blocks_per_stage = 1;
  c.decoder_channels = {8, 8};
  return c;
}

std::size_t NetworkConfig::deepest_stride() const {
  return std::size_t{1} << encoder_channels.size();
}

void NetworkConfig::validate() const {
  if (encoder_channels.empty()) throw ConfigError("network: encoder needs at least one stage");
  if (decoder_channels.empty()) throw ConfigError("network: decoder needs at least one layer");
  if (blocks_per_stage == 0) throw ConfigError("network: blocks_per_stage must be >= 1");
  if (num_anchors == 0) throw ConfigError("network: num_anchors must be >= 1");
  if (se_reduction == 0) throw ConfigError("network: se_reduction must be >= 1");
  for (auto c : encoder_channels)
    if (c == 0) throw ConfigError("network: zero-width encoder stage");
  for (auto c : decoder_channels)
    if (c == 0) throw ConfigError("network: zero-width decoder layer");
  const std::size_t s = output_stride;
  if (s < 2 || (s & (s - 1)) != 0 || s > deepest_stride()) {
    throw ConfigError("network: output_stride " + std::to_string(s) +
                      " must be a power of two between 2 and the deepest stride " +
                      std::to_string(deepest_stride()));
  }
  std::size_t ups = 0;
  for (std::size_t cur = deepest_stride(); cur > s; cur /= 2) ++ups;
  if (decoder_channels.size() < ups) {
    throw ConfigError("network: " + std::to_string(ups) + " upsampling layers needed, decoder has " +
                      std::to_string(decoder_channels.size()));
  }
  if (!(norm_eps > 0) || !(norm_momentum >= 0 && norm_momentum <= 1)) {
    throw ConfigError("network: invalid normalization eps/momentum");
  }
}

Ablation parse_ablation(const std::string& name) {
  if (name.empty() || name == "none" || name == "full") return Ablation::None;
  if (name == "no_se") return Ablation::NoSe;
  if (name == "no_focal") return Ablation::NoFocal;
  if (name == "baseline" || name == "baseline_rpn") return Ablation::Baseline;
  throw ConfigError("unknown ablation '" + name + "' (expected no_se, no_focal or baseline)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "full";
    case Ablation::NoSe: return "no_se";
    case Ablation::NoFocal: return "no_focal";
    case Ablation::Baseline: return "baseline";
  }
  return "full";
}

NetworkConfig ablation_variant(NetworkConfig config, Ablation ablation) {
  switch (ablation) {
    case Ablation::None: break;
    case Ablation::NoSe: config.use_se = false; break;
    case Ablation::NoFocal: config.use_focal = false; break;
    case Ablation::Baseline:
      config.use_se = false;
      config.use_focal = false;
      break;
  }
  return config;
}

std::size_t se_hidden_width(std::size_t channels, std::size_t reduction) {
  return std::max<std::size_t>(1, channels / reduction);
}

namespace {

template <class T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 2.0) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> filled(std::size_t n, T value) {
  return Tensor<T>::parameter(Shape{n}, std::vector<T>(n, value));
}

template <class T>
BatchNormStats<T> fresh_stats(std::size_t c) {
  return BatchNormStats<T>{std::vector<T>(c, T(0)), std::vector<T>(c, T(1))};
}

}  // namespace

template <class T>
ConvBn<T>::ConvBn(std::size_t cin, std::size_t cout, std::size_t k, int stride_, std::mt19937_64& rng)
    : weight(he_normal<T>(Shape{cout, cin, k, k, k}, cin * k * k * k, rng)),
      gamma(filled<T>(cout, T(1))),
      beta(filled<T>(cout, T(0))),
      stats(fresh_stats<T>(cout)),
      stride(stride_),
      pad(static_cast<int>(k / 2)) {}

template <class T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, NormMode mode, T eps, T momentum) {
  return batch_norm(conv3d<T>(x, weight, std::nullopt, stride, pad), gamma, beta, stats, mode, eps, momentum);
}

template <class T>
SeParams<T>::SeParams(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
  const std::size_t r = se_hidden_width(channels, reduction);
  w1 = he_normal<T>(Shape{r, channels}, channels, rng);
  b1 = filled<T>(r, T(0));
  w2 = he_normal<T>(Shape{channels, r}, r, rng, 1.0);
  b2 = filled<T>(channels, T(0));
}

template <class T>
Tensor<T> se_gate(const Tensor<T>& u, const SeParams<T>& p) {
  if (u.rank() != 5 || u.dim(1) != p.w1.dim(1)) {
    throw ShapeError("se_gate: feature map " + shape_str(u.shape()) + " does not match " +
                     std::to_string(p.w1.dim(1)) + " gate channels");
  }
  const Tensor<T> z = global_avg_pool(u);
  const Tensor<T> h = relu(dense(z, p.w1, std::optional<Tensor<T>>(p.b1)));
  return sigmoid(dense(h, p.w2, std::optional<Tensor<T>>(p.b2)));
}

template <class T>
ResBlock<T>::ResBlock(std::size_t cin, std::size_t cout, int stride, bool use_se, std::size_t reduction,
                      std::mt19937_64& rng)
    : conv1(cin, cout, 3, stride, rng), conv2(cout, cout, 3, 1, rng) {
  if (cin != cout || stride != 1) projection.emplace(cin, cout, 1, stride, rng);
  if (use_se) se.emplace(cout, reduction, rng);
}

template <class T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, NormMode mode, T eps, T momentum) {
  if (x.rank() != 5 || x.dim(1) != conv1.weight.dim(1)) {
    throw ShapeError("residual block: expected " + std::to_string(conv1.weight.dim(1)) +
                     " input channels, got " + shape_str(x.shape()));
  }
  Tensor<T> u = conv2.forward(relu(conv1.forward(x, mode, eps, momentum)), mode, eps, momentum);
  if (se) u = scale_channels(u, se_gate(u, *se));
  const Tensor<T> shortcut = projection ? projection->forward(x, mode, eps, momentum) : x;
  return relu(add(u, shortcut));
}

namespace {

template <class T>
void visit_convbn(ConvBn<T>& c, const std::string& prefix, const ParameterVisitor<T>& f) {
  f(prefix + ".weight", c.weight);
  f(prefix + ".gamma", c.gamma);
  f(prefix + ".beta", c.beta);
}

template <class T>
void visit_stats(BatchNormStats<T>& s, const std::string& prefix, const BufferVisitor<T>& f) {
  f(prefix + ".running_mean", s.running_mean);
  f(prefix + ".running_var", s.running_var);
}

}  // namespace

template <class T>
void ResBlock<T>::visit_parameters(const std::string& prefix, const ParameterVisitor<T>& f) {
  visit_convbn(conv1, prefix + ".conv1", f);
  visit_convbn(conv2, prefix + ".conv2", f);
  if (projection) visit_convbn(*projection, prefix + ".proj", f);
  if (se) {
    f(prefix + ".se.w1", se->w1);
    f(prefix + ".se.b1", se->b1);
    f(prefix + ".se.w2", se->w2);
    f(prefix + ".se.b2", se->b2);
  }
}

template <class T>
void ResBlock<T>::visit_buffers(const std::string& prefix, const BufferVisitor<T>& f) {
  visit_stats(conv1.stats, prefix + ".conv1", f);
  visit_stats(conv2.stats, prefix + ".conv2", f);
  if (projection) visit_stats(projection->stats, prefix + ".proj", f);
}

template <class T>
Detector<T>::Detector(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& enc = config_.encoder_channels;
  const bool se = config_.use_se;
  const std::size_t red = config_.se_reduction;

  stem_ = ConvBn<T>(1, enc[0], 3, 1, rng);
  for (std::size_t i = 0; i < enc.size(); ++i) {
    Stage stage;
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::size_t cin = b > 0 ? enc[i] : (i == 0 ? enc[0] : enc[i - 1]);
      const int stride = (b == 0 && i > 0) ? 2 : 1;
      stage.blocks.emplace_back(cin, enc[i], stride, se, red, rng);
    }
    stages_.push_back(std::move(stage));
  }

  std::size_t cur_stride = config_.deepest_stride();
  std::size_t cur_channels = enc.back();
  std::size_t stage_idx = enc.size() - 1;
  for (std::size_t out : config_.decoder_channels) {
    DecoderLayer layer;
    if (cur_stride > config_.output_stride) {
      UpLayer<T> up;
      up.weight = he_normal<T>(Shape{cur_channels, out, 2, 2, 2}, cur_channels, rng);
      up.gamma = filled<T>(out, T(1));
      up.beta = filled<T>(out, T(0));
      up.stats = fresh_stats<T>(out);
      layer.up = std::move(up);
      --stage_idx;
      cur_stride /= 2;
      layer.skip_stage = stage_idx;
      layer.block = ResBlock<T>(out + enc[stage_idx], out, 1, se, red, rng);
    } else {
      layer.block = ResBlock<T>(cur_channels, out, 1, se, red, rng);
    }
    cur_channels = out;
    decoder_.push_back(std::move(layer));
  }

  const std::size_t hc = config_.head_channels();
  std::normal_distribution<double> small(0.0, 0.01);
  std::vector<T> hw(hc * cur_channels);
  for (auto& v : hw) v = static_cast<T>(small(rng));
  head_weight_ = Tensor<T>::parameter(Shape{hc, cur_channels, 1, 1, 1}, std::move(hw));
  std::vector<T> hb(hc, T(0));
  for (std::size_t a = 0; a < config_.num_anchors; ++a) hb[a * 5] = static_cast<T>(kHeadPriorBias);
  head_bias_ = Tensor<T>::parameter(Shape{hc}, std::move(hb));
}

template <class T>
std::size_t Detector<T>::grid_extent(std::size_t input_extent) const {
  const std::size_t deep = config_.deepest_stride();
  if (input_extent == 0 || input_extent % deep != 0) {
    throw ShapeError("detector: input extent " + std::to_string(input_extent) +
                     " is not divisible by the network stride " + std::to_string(deep));
  }
  return input_extent / config_.output_stride;
}

template <class T>
Tensor<T> Detector<T>::forward_logits(const Tensor<T>& input, NormMode mode) {
  if (input.rank() != 5 || input.dim(1) != 1 || input.dim(0) == 0) {
    throw ShapeError("detector: input must be [N>=1, 1, D, H, W], got " + shape_str(input.shape()));
  }
  for (std::size_t a = 2; a < 5; ++a) grid_extent(input.dim(a));
  const T eps = static_cast<T>(config_.norm_eps);
  const T mom = static_cast<T>(config_.norm_momentum);

  Tensor<T> x = max_pool3d(relu(stem_.forward(input, mode, eps, mom)), 2, 2);
  std::vector<Tensor<T>> skips;
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) x = block.forward(x, mode, eps, mom);
    skips.push_back(x);
  }
  for (auto& layer : decoder_) {
    if (layer.up) {
      auto& up = *layer.up;
      x = relu(batch_norm(conv3d_transpose<T>(x, up.weight, std::nullopt, 2, 0), up.gamma, up.beta, up.stats,
                          mode, eps, mom));
      x = concat_channels(x, skips[layer.skip_stage]);
    }
    x = layer.block.forward(x, mode, eps, mom);
  }
  return conv3d<T>(x, head_weight_, std::optional<Tensor<T>>(head_bias_), 1, 0);
}

template <class T>
Tensor<T> Detector<T>::forward(const Tensor<T>& input, NormMode mode) {
  NoGradGuard guard;
  Tensor<T> logits = forward_logits(input, mode);
  std::vector<T> out(logits.data().begin(), logits.data().end());
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const std::size_t sp = logits.dim(2) * logits.dim(3) * logits.dim(4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < config_.num_anchors; ++a) {
      T* dst = out.data() + (i * c + a * 5) * sp;
      for (std::size_t q = 0; q < sp; ++q) dst[q] = T(1) / (T(1) + std::exp(-dst[q]));
    }
  return Tensor<T>(logits.shape(), std::move(out));
}

template <class T>
void Detector<T>::visit_parameters(const ParameterVisitor<T>& f) {
  visit_convbn(stem_, "stem.conv", f);
  for (std::size_t i = 0; i < stages_.size(); ++i)
    for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b)
      stages_[i].blocks[b].visit_parameters(
          "encoder.stage" + std::to_string(i) + ".block" + std::to_string(b), f);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    const std::string prefix = "decoder.layer" + std::to_string(j);
    if (decoder_[j].up) {
      f(prefix + ".up.weight", decoder_[j].up->weight);
      f(prefix + ".up.gamma", decoder_[j].up->gamma);
      f(prefix + ".up.beta", decoder_[j].up->beta);
    }
    decoder_[j].block.visit_parameters(prefix + ".block", f);
  }
  f("head.weight", head_weight_);
  f("head.bias", head_bias_);
}

template <class T>
void Detector<T>::visit_buffers(const BufferVisitor<T>& f) {
  visit_stats(stem_.stats, "stem.conv", f);
  for (std::size_t i = 0; i < stages_.size(); ++i)
    for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b)
      stages_[i].blocks[b].visit_buffers("encoder.stage" + std::to_string(i) + ".block" + std::to_string(b), f);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    const std::string prefix = "decoder.layer" + std::to_string(j);
    if (decoder_[j].up) visit_stats(decoder_[j].up->stats, prefix + ".up", f);
    decoder_[j].block.visit_buffers(prefix + ".block", f);
  }
}

template <class T>
std::size_t Detector<T>::parameter_count() {
  std::size_t total = 0;
  visit_parameters([&](const std::string&, Tensor<T>& p) { total += p.numel(); });
  return total;
}

template <class T>
void Detector<T>::zero_grad() {
  visit_parameters([](const std::string&, Tensor<T>& p) { p.zero_grad(); });
}

template <class T>
std::map<std::string, StoredArray> Detector<T>::state() {
  std::map<std::string, StoredArray> out;
  visit_parameters([&](const std::string& name, Tensor<T>& p) {
    out[name] = StoredArray{p.shape(), std::vector<double>(p.data().begin(), p.data().end())};
  });
  visit_buffers([&](const std::string& name, std::vector<T>& b) {
    out[name] = StoredArray{Shape{b.size()}, std::vector<double>(b.begin(), b.end())};
  });
  return out;
}

template <class T>
void Detector<T>::load_state(const std::map<std::string, StoredArray>& arrays) {
  std::size_t used = 0;
  const auto find = [&](const std::string& name, const Shape& shape) -> const StoredArray& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ConfigError("checkpoint is missing '" + name + "'");
    if (it->second.shape != shape) {
      throw ShapeError("checkpoint entry '" + name + "' has shape " + shape_str(it->second.shape) +
                       ", network expects " + shape_str(shape));
    }
    ++used;
    return it->second;
  };
  visit_parameters([&](const std::string& name, Tensor<T>& p) {
    const auto& src = find(name, p.shape());
    auto dst = p.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.values[i]);
  });
  visit_buffers([&](const std::string& name, std::vector<T>& b) {
    const auto& src = find(name, Shape{b.size()});
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<T>(src.values[i]);
  });
  if (used != arrays.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(arrays.size() - used) +
                      " entries the network does not use");
  }
}

template struct ConvBn<float>;
template struct ConvBn<double>;
template struct SeParams<float>;
template struct SeParams<double>;
template struct ResBlock<float>;
template struct ResBlock<double>;
template Tensor<float> se_gate(const Tensor<float>&, const SeParams<float>&);
template Tensor<double> se_gate(const Tensor<double>&, const SeParams<double>&);
template class Detector<float>;
template class Detector<double>;

}  // namespace seedet
