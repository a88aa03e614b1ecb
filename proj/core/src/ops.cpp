#include "seedet/ops.hpp"

#include <cmath>
#include <limits>

#include "seedet/error.hpp"

namespace seedet {

namespace {

template <class T>
using NodeVec = std::vector<std::shared_ptr<detail::Node<T>>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <class T>
std::size_t spatial_of(const Tensor<T>& x) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) s *= x.dim(i);
  return s;
}

template <class T>
detail::Node<T>& grad_target(detail::Node<T>& n) {
  n.ensure_grad();
  return n;
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  std::vector<T> y(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return detail::make_result<T>(a.shape(), std::move(y), "add", NodeVec<T>{a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  for (auto& in : self.inputs) {
                                    if (!in->requires_grad) continue;
                                    auto& t = grad_target(*in);
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) t.grad[i] += self.grad[i];
                                  }
                                });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  std::vector<T> y(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return detail::make_result<T>(a.shape(), std::move(y), "mul", NodeVec<T>{a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  auto& x = *self.inputs[0];
                                  auto& z = *self.inputs[1];
                                  if (x.requires_grad) {
                                    x.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      x.grad[i] += self.grad[i] * z.data[i];
                                  }
                                  if (z.requires_grad) {
                                    z.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      z.grad[i] += self.grad[i] * x.data[i];
                                  }
                                });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> y(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  return detail::make_result<T>(a.shape(), std::move(y), "scale", NodeVec<T>{a.node()},
                                [factor](detail::Node<T>& self) {
                                  auto& x = grad_target(*self.inputs[0]);
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    x.grad[i] += self.grad[i] * factor;
                                });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(y), "relu", NodeVec<T>{x.node()},
                                [](detail::Node<T>& self) {
                                  auto& in = grad_target(*self.inputs[0]);
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    if (in.data[i] > T(0)) in.grad[i] += self.grad[i];
                                });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return detail::make_result<T>(x.shape(), std::move(y), "sigmoid", NodeVec<T>{x.node()},
                                [](detail::Node<T>& self) {
                                  auto& in = grad_target(*self.inputs[0]);
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    const T s = self.data[i];
                                    in.grad[i] += self.grad[i] * s * (T(1) - s);
                                  }
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_result<T>(Shape{}, std::vector<T>{acc}, "sum", NodeVec<T>{x.node()},
                                [](detail::Node<T>& self) {
                                  auto& in = grad_target(*self.inputs[0]);
                                  for (auto& g : in.grad) g += self.grad[0];
                                });
}

template <class T>
Tensor<T> scale_channels(const Tensor<T>& u, const Tensor<T>& s) {
  require(u.rank() >= 2, "scale_channels: feature map must have batch and channel axes");
  require(s.rank() == 2 && s.dim(0) == u.dim(0) && s.dim(1) == u.dim(1),
          "scale_channels: gate shape " + shape_str(s.shape()) + " does not match " + shape_str(u.shape()));
  const std::size_t nc = u.dim(0) * u.dim(1);
  const std::size_t sp = spatial_of(u);
  std::vector<T> y(u.numel());
  const auto uv = u.data(), sv = s.data();
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t j = 0; j < sp; ++j) y[i * sp + j] = uv[i * sp + j] * sv[i];
  return detail::make_result<T>(u.shape(), std::move(y), "scale_channels", NodeVec<T>{u.node(), s.node()},
                                [nc, sp](detail::Node<T>& self) {
                                  auto& un = *self.inputs[0];
                                  auto& sn = *self.inputs[1];
                                  if (un.requires_grad) {
                                    un.ensure_grad();
                                    for (std::size_t i = 0; i < nc; ++i)
                                      for (std::size_t j = 0; j < sp; ++j)
                                        un.grad[i * sp + j] += self.grad[i * sp + j] * sn.data[i];
                                  }
                                  if (sn.requires_grad) {
                                    sn.ensure_grad();
                                    for (std::size_t i = 0; i < nc; ++i) {
                                      T acc = 0;
                                      for (std::size_t j = 0; j < sp; ++j)
                                        acc += self.grad[i * sp + j] * un.data[i * sp + j];
                                      sn.grad[i] += acc;
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.rank() == 5, "global_avg_pool: input must be [N,C,D,H,W], got " + shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t sp = spatial_of(x);
  require(sp >= 1, "global_avg_pool: empty spatial extent");
  std::vector<T> y(nc);
  const auto xv = x.data();
  for (std::size_t i = 0; i < nc; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < sp; ++j) acc += xv[i * sp + j];
    y[i] = acc / static_cast<T>(sp);
  }
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1)}, std::move(y), "global_avg_pool",
                                NodeVec<T>{x.node()}, [nc, sp](detail::Node<T>& self) {
                                  auto& in = grad_target(*self.inputs[0]);
                                  const T inv = T(1) / static_cast<T>(sp);
                                  for (std::size_t i = 0; i < nc; ++i) {
                                    const T g = self.grad[i] * inv;
                                    for (std::size_t j = 0; j < sp; ++j) in.grad[i * sp + j] += g;
                                  }
                                });
}

template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias) {
  require(x.rank() == 2, "dense: input must be [N,Cin], got " + shape_str(x.shape()));
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "dense: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  if (bias) {
    require(bias->rank() == 1 && bias->dim(0) == cout, "dense: bias shape " + shape_str(bias->shape()));
  }
  std::vector<T> y(n * cout);
  const auto xv = x.data(), wv = weight.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o) {
      T acc = bias ? bias->data()[o] : T(0);
      for (std::size_t c = 0; c < cin; ++c) acc += wv[o * cin + c] * xv[i * cin + c];
      y[i * cout + o] = acc;
    }
  NodeVec<T> inputs{x.node(), weight.node()};
  if (bias) inputs.push_back(bias->node());
  return detail::make_result<T>(Shape{n, cout}, std::move(y), "dense", std::move(inputs),
                                [n, cin, cout](detail::Node<T>& self) {
                                  auto& xn = *self.inputs[0];
                                  auto& wn = *self.inputs[1];
                                  if (xn.requires_grad) {
                                    xn.ensure_grad();
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t c = 0; c < cin; ++c) {
                                        T acc = 0;
                                        for (std::size_t o = 0; o < cout; ++o)
                                          acc += self.grad[i * cout + o] * wn.data[o * cin + c];
                                        xn.grad[i * cin + c] += acc;
                                      }
                                  }
                                  if (wn.requires_grad) {
                                    wn.ensure_grad();
                                    for (std::size_t o = 0; o < cout; ++o)
                                      for (std::size_t c = 0; c < cin; ++c) {
                                        T acc = 0;
                                        for (std::size_t i = 0; i < n; ++i)
                                          acc += self.grad[i * cout + o] * xn.data[i * cin + c];
                                        wn.grad[o * cin + c] += acc;
                                      }
                                  }
                                  if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                                    auto& bn = grad_target(*self.inputs[2]);
                                    for (std::size_t o = 0; o < cout; ++o) {
                                      T acc = 0;
                                      for (std::size_t i = 0; i < n; ++i) acc += self.grad[i * cout + o];
                                      bn.grad[o] += acc;
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 5 && b.rank() == 5, "concat_channels: inputs must be [N,C,D,H,W]");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3) && a.dim(4) == b.dim(4),
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), sp = spatial_of(a);
  std::vector<T> y(n * (ca + cb) * sp);
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * sp, ca * sp, y.data() + i * (ca + cb) * sp);
    std::copy_n(bv.data() + i * cb * sp, cb * sp, y.data() + (i * (ca + cb) + ca) * sp);
  }
  return detail::make_result<T>(Shape{n, ca + cb, a.dim(2), a.dim(3), a.dim(4)}, std::move(y),
                                "concat_channels", NodeVec<T>{a.node(), b.node()},
                                [n, ca, cb, sp](detail::Node<T>& self) {
                                  auto& an = *self.inputs[0];
                                  auto& bn = *self.inputs[1];
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T* g = self.grad.data() + i * (ca + cb) * sp;
                                    if (an.requires_grad) {
                                      an.ensure_grad();
                                      T* dst = an.grad.data() + i * ca * sp;
                                      for (std::size_t j = 0; j < ca * sp; ++j) dst[j] += g[j];
                                    }
                                    if (bn.requires_grad) {
                                      bn.ensure_grad();
                                      T* dst = bn.grad.data() + i * cb * sp;
                                      for (std::size_t j = 0; j < cb * sp; ++j) dst[j] += g[ca * sp + j];
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> max_pool3d(const Tensor<T>& x, int kernel, int stride) {
  require(x.rank() == 5, "max_pool3d: input must be [N,C,D,H,W], got " + shape_str(x.shape()));
  require(kernel >= 1 && stride >= 1, "max_pool3d: kernel and stride must be >= 1");
  const std::size_t k = static_cast<std::size_t>(kernel), s = static_cast<std::size_t>(stride);
  std::size_t out[3];
  for (int a = 0; a < 3; ++a) {
    const std::size_t e = x.dim(2 + a);
    if (e < k || (e - k) % s != 0) {
      throw ShapeError("max_pool3d: extent " + std::to_string(e) + " not divisible into windows of " +
                       std::to_string(k) + " with stride " + std::to_string(s));
    }
    out[a] = (e - k) / s + 1;
  }
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t osp = out[0] * out[1] * out[2];
  std::vector<T> y(nc * osp);
  std::vector<std::size_t> argmax(nc * osp);
  const auto xv = x.data();
  for (std::size_t c = 0; c < nc; ++c) {
    const T* src = xv.data() + c * D * H * W;
    for (std::size_t oz = 0; oz < out[0]; ++oz)
      for (std::size_t oy = 0; oy < out[1]; ++oy)
        for (std::size_t ox = 0; ox < out[2]; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t kz = 0; kz < k; ++kz)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t idx = ((oz * s + kz) * H + (oy * s + ky)) * W + ox * s + kx;
                if (first || src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                  first = false;
                }
              }
          const std::size_t o = c * osp + (oz * out[1] + oy) * out[2] + ox;
          y[o] = best;
          argmax[o] = c * D * H * W + best_idx;
        }
  }
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), out[0], out[1], out[2]}, std::move(y), "max_pool3d",
                                NodeVec<T>{x.node()}, [argmax = std::move(argmax)](detail::Node<T>& self) {
                                  auto& in = grad_target(*self.inputs[0]);
                                  for (std::size_t o = 0; o < argmax.size(); ++o) in.grad[argmax[o]] += self.grad[o];
                                });
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     NormMode mode, T eps, T momentum) {
  require(x.rank() >= 2, "batch_norm: input needs batch and channel axes");
  const std::size_t n = x.dim(0), c = x.dim(1), sp = spatial_of(x);
  require(gamma.numel() == c && beta.numel() == c,
          "batch_norm: parameters sized for " + std::to_string(gamma.numel()) + " channels, input has " +
              std::to_string(c));
  require(stats.running_mean.size() == c && stats.running_var.size() == c,
          "batch_norm: running statistics sized incorrectly");
  const std::size_t m = n * sp;
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  std::vector<T> y(x.numel());
  std::vector<T> mean(c), inv_std(c);
  if (mode == NormMode::Train) {
    if (m < 2) throw ShapeError("batch_norm: train mode needs at least 2 values per channel");
    for (std::size_t j = 0; j < c; ++j) {
      double s1 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = xv.data() + (i * c + j) * sp;
        for (std::size_t q = 0; q < sp; ++q) s1 += src[q];
      }
      const double mu = s1 / static_cast<double>(m);
      double s2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = xv.data() + (i * c + j) * sp;
        for (std::size_t q = 0; q < sp; ++q) {
          const double d = src[q] - mu;
          s2 += d * d;
        }
      }
      const double var = s2 / static_cast<double>(m);
      mean[j] = static_cast<T>(mu);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = s2 / static_cast<double>(m - 1);
      stats.running_mean[j] = static_cast<T>((1 - momentum) * stats.running_mean[j] + momentum * mu);
      stats.running_var[j] = static_cast<T>((1 - momentum) * stats.running_var[j] + momentum * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = stats.running_mean[j];
      inv_std[j] = T(1) / std::sqrt(stats.running_var[j] + eps);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t off = (i * c + j) * sp;
      const T a = gv[j] * inv_std[j];
      const T b = bv[j] - a * mean[j];
      for (std::size_t q = 0; q < sp; ++q) y[off + q] = a * xv[off + q] + b;
    }
  const bool train = mode == NormMode::Train;
  return detail::make_result<T>(
      x.shape(), std::move(y), "batch_norm", NodeVec<T>{x.node(), gamma.node(), beta.node()},
      [n, c, sp, m, train, mean = std::move(mean), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        for (std::size_t j = 0; j < c; ++j) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + j) * sp;
            for (std::size_t q = 0; q < sp; ++q) {
              const double xhat = (xn.data[off + q] - mean[j]) * inv_std[j];
              sum_g += self.grad[off + q];
              sum_gx += self.grad[off + q] * xhat;
            }
          }
          if (gn.requires_grad) {
            gn.ensure_grad();
            gn.grad[j] += static_cast<T>(sum_gx);
          }
          if (bn.requires_grad) {
            bn.ensure_grad();
            bn.grad[j] += static_cast<T>(sum_g);
          }
          if (!xn.requires_grad) continue;
          xn.ensure_grad();
          const double a = static_cast<double>(gn.data[j]) * inv_std[j];
          const double mg = sum_g / static_cast<double>(m);
          const double mgx = sum_gx / static_cast<double>(m);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + j) * sp;
            for (std::size_t q = 0; q < sp; ++q) {
              if (train) {
                const double xhat = (xn.data[off + q] - mean[j]) * inv_std[j];
                xn.grad[off + q] += static_cast<T>(a * (self.grad[off + q] - mg - xhat * mgx));
              } else {
                xn.grad[off + q] += static_cast<T>(a * self.grad[off + q]);
              }
            }
          }
        }
      });
}

#define SEEDET_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                      \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&);             \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> max_pool3d(const Tensor<T>&, int, int);                                                 \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&,    \
                                NormMode, T, T);

SEEDET_INSTANTIATE_OPS(float)
SEEDET_INSTANTIATE_OPS(double)

}  // namespace seedet
