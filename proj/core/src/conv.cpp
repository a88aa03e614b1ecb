#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "conv_kernels.hpp"
#include "seedet/error.hpp"
#include "seedet/ops.hpp"

namespace seedet {
namespace kernels {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kTargetColumns = 512;

// Chunks are runs of whole output rows (fixed z, y).
struct RowChunks {
  std::size_t rows = 0;
  std::size_t rows_per_chunk = 1;
  std::size_t count = 0;

  RowChunks(std::size_t depth, std::size_t height, std::size_t width)
      : rows(depth * height),
        rows_per_chunk(std::max<std::size_t>(1, kTargetColumns / std::max<std::size_t>(1, width))),
        count((rows + rows_per_chunk - 1) / rows_per_chunk) {}

  std::size_t begin(std::size_t c) const { return c * rows_per_chunk; }
  std::size_t end(std::size_t c) const { return std::min(rows, (c + 1) * rows_per_chunk); }
};

// col[k][j] for k = (ci, kz, ky, kx) and j over output positions of rows
// [r0, r1).
template <class T>
void im2col(const T* x, const ConvDims& g, std::size_t r0, std::size_t r1, T* col) {
  const std::size_t L = (r1 - r0) * g.ow;
  const long s = g.stride;
  const long p = g.pad;
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.in_spatial();
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
          T* dst = col + k * L;
          for (std::size_t r = r0; r < r1; ++r, dst += g.ow) {
            const long iz = static_cast<long>(r / g.oh) * s + static_cast<long>(kz) - p;
            const long iy = static_cast<long>(r % g.oh) * s + static_cast<long>(ky) - p;
            if (iz < 0 || iz >= static_cast<long>(g.d) || iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(dst, dst + g.ow, T(0));
              continue;
            }
            const T* src = xc + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
            const long base = static_cast<long>(kx) - p;
            if (s == 1) {
              // Valid ox satisfy 0 <= ox + base < w.
              const long lo = std::clamp<long>(-base, 0, static_cast<long>(g.ow));
              const long hi = std::clamp<long>(static_cast<long>(g.w) - base, lo, static_cast<long>(g.ow));
              std::fill(dst, dst + lo, T(0));
              std::copy(src + lo + base, src + hi + base, dst + lo);
              std::fill(dst + hi, dst + g.ow, T(0));
            } else {
              for (std::size_t ox = 0; ox < g.ow; ++ox) {
                const long ix = static_cast<long>(ox) * s + base;
                dst[ox] = (ix >= 0 && ix < static_cast<long>(g.w)) ? src[ix] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// Gathers dy onto input rows [r0, r1): col[k][j] for k = (co, kz, ky, kx)
// holds dy at the output position that tap (kz, ky, kx) maps onto input j.
template <class T>
void dy2col(const T* dy, const ConvDims& g, std::size_t r0, std::size_t r1, T* col) {
  const std::size_t L = (r1 - r0) * g.w;
  const long s = g.stride;
  const long p = g.pad;
  std::size_t k = 0;
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* dyc = dy + co * g.out_spatial();
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
          T* dst = col + k * L;
          for (std::size_t r = r0; r < r1; ++r, dst += g.w) {
            const long tz = static_cast<long>(r / g.h) + p - static_cast<long>(kz);
            const long ty = static_cast<long>(r % g.h) + p - static_cast<long>(ky);
            if (tz < 0 || ty < 0 || tz % s != 0 || ty % s != 0 || tz / s >= static_cast<long>(g.od) ||
                ty / s >= static_cast<long>(g.oh)) {
              std::fill(dst, dst + g.w, T(0));
              continue;
            }
            const T* src = dyc + (static_cast<std::size_t>(tz / s) * g.oh + static_cast<std::size_t>(ty / s)) * g.ow;
            const long base = p - static_cast<long>(kx);
            if (s == 1) {
              const long lo = std::clamp<long>(-base, 0, static_cast<long>(g.w));
              const long hi = std::clamp<long>(static_cast<long>(g.ow) - base, lo, static_cast<long>(g.w));
              std::fill(dst, dst + lo, T(0));
              std::copy(src + lo + base, src + hi + base, dst + lo);
              std::fill(dst + hi, dst + g.w, T(0));
            } else {
              for (std::size_t ix = 0; ix < g.w; ++ix) {
                const long t = static_cast<long>(ix) + base;
                dst[ix] = (t >= 0 && t % s == 0 && t / s < static_cast<long>(g.ow)) ? src[t / s] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
void conv_forward(const T* x, const T* weight, T* y, const ConvDims& g) {
  const std::size_t K = g.cin * g.kvol();
  const std::size_t P = g.out_spatial();
  const RowChunks chunks(g.od, g.oh, g.ow);
  const long tasks = static_cast<long>(g.n * chunks.count);
  const ConstMap<T> W(weight, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(K));
#pragma omp parallel
  {
    std::vector<T> col;
#pragma omp for schedule(static)
    for (long t = 0; t < tasks; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / chunks.count;
      const std::size_t c = static_cast<std::size_t>(t) % chunks.count;
      const std::size_t r0 = chunks.begin(c), r1 = chunks.end(c);
      const std::size_t L = (r1 - r0) * g.ow;
      col.resize(K * L);
      im2col(x + n * g.cin * g.in_spatial(), g, r0, r1, col.data());
      const ConstMap<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
      StridedMap<T> Y(y + n * g.cout * P + r0 * g.ow, static_cast<Eigen::Index>(g.cout),
                      static_cast<Eigen::Index>(L), Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      Y.noalias() = W * C;
    }
  }
}

template <class T>
void conv_input_grad(const T* dy, const T* weight, T* dx, const ConvDims& g) {
  const std::size_t kv = g.kvol();
  const std::size_t K = g.cout * kv;
  const std::size_t S = g.in_spatial();
  // wt[ci][co, kk] = weight[co][ci][kk]
  std::vector<T> wt(g.cin * K);
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t kk = 0; kk < kv; ++kk) wt[ci * K + co * kv + kk] = weight[(co * g.cin + ci) * kv + kk];
  const ConstMap<T> Wt(wt.data(), static_cast<Eigen::Index>(g.cin), static_cast<Eigen::Index>(K));
  const RowChunks chunks(g.d, g.h, g.w);
  const long tasks = static_cast<long>(g.n * chunks.count);
#pragma omp parallel
  {
    std::vector<T> col;
#pragma omp for schedule(static)
    for (long t = 0; t < tasks; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / chunks.count;
      const std::size_t c = static_cast<std::size_t>(t) % chunks.count;
      const std::size_t r0 = chunks.begin(c), r1 = chunks.end(c);
      const std::size_t L = (r1 - r0) * g.w;
      col.resize(K * L);
      dy2col(dy + n * g.cout * g.out_spatial(), g, r0, r1, col.data());
      const ConstMap<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
      StridedMap<T> X(dx + n * g.cin * S + r0 * g.w, static_cast<Eigen::Index>(g.cin),
                      static_cast<Eigen::Index>(L), Eigen::OuterStride<>(static_cast<Eigen::Index>(S)));
      X.noalias() = Wt * C;
    }
  }
}

template <class T>
void conv_weight_grad(const T* x, const T* dy, T* dweight, const ConvDims& g) {
  const std::size_t K = g.cin * g.kvol();
  const std::size_t P = g.out_spatial();
  const RowChunks chunks(g.od, g.oh, g.ow);
  const long count = static_cast<long>(chunks.count);
  std::vector<T> partial(chunks.count * g.cout * K, T(0));
#pragma omp parallel
  {
    std::vector<T> col;
#pragma omp for schedule(static)
    for (long c = 0; c < count; ++c) {
      const std::size_t r0 = chunks.begin(static_cast<std::size_t>(c));
      const std::size_t r1 = chunks.end(static_cast<std::size_t>(c));
      const std::size_t L = (r1 - r0) * g.ow;
      col.resize(K * L);
      Eigen::Map<RowMat<T>> acc(partial.data() + static_cast<std::size_t>(c) * g.cout * K,
                                static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(K));
      for (std::size_t n = 0; n < g.n; ++n) {
        im2col(x + n * g.cin * g.in_spatial(), g, r0, r1, col.data());
        const ConstMap<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(L));
        const ConstStridedMap<T> DY(dy + n * g.cout * P + r0 * g.ow, static_cast<Eigen::Index>(g.cout),
                                    static_cast<Eigen::Index>(L),
                                    Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
        acc.noalias() += DY * C.transpose();
      }
    }
  }
  const std::size_t m = g.cout * K;
  std::fill(dweight, dweight + m, T(0));
  for (std::size_t c = 0; c < chunks.count; ++c) {
    const T* src = partial.data() + c * m;
    for (std::size_t i = 0; i < m; ++i) dweight[i] += src[i];
  }
}

template void conv_forward(const float*, const float*, float*, const ConvDims&);
template void conv_forward(const double*, const double*, double*, const ConvDims&);
template void conv_input_grad(const float*, const float*, float*, const ConvDims&);
template void conv_input_grad(const double*, const double*, double*, const ConvDims&);
template void conv_weight_grad(const float*, const float*, float*, const ConvDims&);
template void conv_weight_grad(const double*, const double*, double*, const ConvDims&);

}  // namespace kernels

namespace {

using kernels::ConvDims;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <class T>
void check_bias(const std::optional<Tensor<T>>& bias, std::size_t channels, const char* op) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

template <class T>
void add_bias(std::vector<T>& y, const Tensor<T>& bias, std::size_t n, std::size_t c, std::size_t spatial) {
  const auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      T* dst = y.data() + (i * c + j) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) dst[s] += b[j];
    }
}

template <class T>
void accumulate_bias_grad(detail::Node<T>& bias, const std::vector<T>& dy, std::size_t n, std::size_t c,
                          std::size_t spatial) {
  bias.ensure_grad();
  for (std::size_t j = 0; j < c; ++j) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = dy.data() + (i * c + j) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) acc += src[s];
    }
    bias.grad[j] += acc;
  }
}

template <class T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

long out_extent(std::size_t in, std::size_t k, int stride, int pad) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  if (span < 0) return 0;
  return span / stride + 1;
}

}  // namespace

template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 int stride, int pad) {
  require(input.rank() == 5, "conv3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 5, "conv3d: weight must be [Cout,Cin,kd,kh,kw], got " + shape_str(weight.shape()));
  require(stride >= 1, "conv3d: stride must be >= 1");
  require(pad >= 0, "conv3d: pad must be >= 0");
  require(weight.dim(1) == input.dim(1), "conv3d: weight expects " + std::to_string(weight.dim(1)) +
                                             " input channels, input has " + std::to_string(input.dim(1)));
  ConvDims g;
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.cout = weight.dim(0);
  g.d = input.dim(2), g.h = input.dim(3), g.w = input.dim(4);
  g.kd = weight.dim(2), g.kh = weight.dim(3), g.kw = weight.dim(4);
  g.stride = stride;
  g.pad = pad;
  const long od = out_extent(g.d, g.kd, stride, pad);
  const long oh = out_extent(g.h, g.kh, stride, pad);
  const long ow = out_extent(g.w, g.kw, stride, pad);
  require(od > 0 && oh > 0 && ow > 0, "conv3d: kernel " + shape_str(weight.shape()) +
                                          " does not fit padded input " + shape_str(input.shape()));
  g.od = static_cast<std::size_t>(od), g.oh = static_cast<std::size_t>(oh), g.ow = static_cast<std::size_t>(ow);
  check_bias(bias, g.cout, "conv3d");

  std::vector<T> y(g.n * g.cout * g.out_spatial());
  kernels::conv_forward(input.data().data(), weight.data().data(), y.data(), g);
  if (bias) add_bias(y, *bias, g.n, g.cout, g.out_spatial());

  std::vector<std::shared_ptr<detail::Node<T>>> inputs{input.node(), weight.node()};
  if (bias) inputs.push_back(bias->node());
  return detail::make_result<T>(
      Shape{g.n, g.cout, g.od, g.oh, g.ow}, std::move(y), "conv3d", std::move(inputs),
      [g](detail::Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        if (x.requires_grad) {
          std::vector<T> dx(x.data.size());
          kernels::conv_input_grad(self.grad.data(), w.data.data(), dx.data(), g);
          x.ensure_grad();
          accumulate(x.grad, dx);
        }
        if (w.requires_grad) {
          std::vector<T> dw(w.data.size());
          kernels::conv_weight_grad(x.data.data(), self.grad.data(), dw.data(), g);
          w.ensure_grad();
          accumulate(w.grad, dw);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          accumulate_bias_grad(*self.inputs[2], self.grad, g.n, g.cout, g.out_spatial());
        }
      });
}

template <class T>
Tensor<T> conv3d_transpose(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                           int stride, int pad) {
  require(input.rank() == 5, "conv3d_transpose: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 5,
          "conv3d_transpose: weight must be [Cin,Cout,kd,kh,kw], got " + shape_str(weight.shape()));
  require(stride >= 1, "conv3d_transpose: stride must be >= 1");
  require(pad >= 0, "conv3d_transpose: pad must be >= 0");
  require(weight.dim(0) == input.dim(1), "conv3d_transpose: weight expects " + std::to_string(weight.dim(0)) +
                                             " input channels, input has " + std::to_string(input.dim(1)));
  // The transposed op is the input-gradient of a conv whose "output" is our
  // input and whose "input" is our output.
  ConvDims g;
  g.n = input.dim(0);
  g.cout = input.dim(1);
  g.cin = weight.dim(1);
  g.od = input.dim(2), g.oh = input.dim(3), g.ow = input.dim(4);
  g.kd = weight.dim(2), g.kh = weight.dim(3), g.kw = weight.dim(4);
  g.stride = stride;
  g.pad = pad;
  const auto extent = [&](std::size_t in, std::size_t k) {
    return (static_cast<long>(in) - 1) * stride - 2L * pad + static_cast<long>(k);
  };
  const long d = extent(g.od, g.kd), h = extent(g.oh, g.kh), w = extent(g.ow, g.kw);
  require(d > 0 && h > 0 && w > 0, "conv3d_transpose: non-positive output extent for input " +
                                       shape_str(input.shape()));
  g.d = static_cast<std::size_t>(d), g.h = static_cast<std::size_t>(h), g.w = static_cast<std::size_t>(w);
  check_bias(bias, g.cin, "conv3d_transpose");

  std::vector<T> y(g.n * g.cin * g.in_spatial());
  kernels::conv_input_grad(input.data().data(), weight.data().data(), y.data(), g);
  if (bias) add_bias(y, *bias, g.n, g.cin, g.in_spatial());

  std::vector<std::shared_ptr<detail::Node<T>>> inputs{input.node(), weight.node()};
  if (bias) inputs.push_back(bias->node());
  return detail::make_result<T>(
      Shape{g.n, g.cin, g.d, g.h, g.w}, std::move(y), "conv3d_transpose", std::move(inputs),
      [g](detail::Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& wt = *self.inputs[1];
        if (x.requires_grad) {
          std::vector<T> dx(x.data.size());
          kernels::conv_forward(self.grad.data(), wt.data.data(), dx.data(), g);
          x.ensure_grad();
          accumulate(x.grad, dx);
        }
        if (wt.requires_grad) {
          std::vector<T> dw(wt.data.size());
          kernels::conv_weight_grad(self.grad.data(), x.data.data(), dw.data(), g);
          wt.ensure_grad();
          accumulate(wt.grad, dw);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          accumulate_bias_grad(*self.inputs[2], self.grad, g.n, g.cin, g.in_spatial());
        }
      });
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const std::optional<Tensor<float>>&,
                              int, int);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&,
                               const std::optional<Tensor<double>>&, int, int);
template Tensor<float> conv3d_transpose(const Tensor<float>&, const Tensor<float>&,
                                        const std::optional<Tensor<float>>&, int, int);
template Tensor<double> conv3d_transpose(const Tensor<double>&, const Tensor<double>&,
                                         const std::optional<Tensor<double>>&, int, int);

}  // namespace seedet
