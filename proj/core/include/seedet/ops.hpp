#pragma once

#include <optional>
#include <vector>

#include "seedet/tensor.hpp"

namespace seedet {

// Differentiable operators. Spatial tensors are laid out [N, C, D, H, W].
// Every operator validates shapes (ShapeError) and rejects non-finite
// results (NumericError).

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Sum of all elements as a scalar tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x);

/// y[n,c,...] = u[n,c,...] * s[n,c]; s broadcasts over the spatial axes.
template <class T>
Tensor<T> scale_channels(const Tensor<T>& u, const Tensor<T>& s);

/// [N,C,D,H,W] -> [N,C], mean over all spatial positions.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// y = x * weight^T + bias, x:[N,Cin], weight:[Cout,Cin], bias:[Cout].
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight,
                const std::optional<Tensor<T>>& bias = std::nullopt);

/// Channel-axis concatenation of two [N,C,D,H,W] tensors.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// 3D cross-correlation (no kernel flip).
/// input [N,Cin,D,H,W], weight [Cout,Cin,kd,kh,kw] -> [N,Cout,D',H',W'] with
/// D' = (D + 2 pad - kd) / stride + 1.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, int stride, int pad);

/// Adjoint of conv3d with respect to its input.
/// input [N,Cin,D,H,W], weight [Cin,Cout,kd,kh,kw] -> [N,Cout,D',H',W'] with
/// D' = (D - 1) stride - 2 pad + kd.
template <class T>
Tensor<T> conv3d_transpose(const Tensor<T>& input, const Tensor<T>& weight,
                           const std::optional<Tensor<T>>& bias, int stride, int pad);

/// Max over k^3 windows. Ties route the gradient to the first element in
/// scan order (z, then y, then x).
template <class T>
Tensor<T> max_pool3d(const Tensor<T>& x, int kernel = 2, int stride = 2);

enum class NormMode { Train, Eval };

template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

/// Per-channel normalization over (N, D, H, W). Train mode uses batch
/// statistics and updates `stats` (unbiased variance); eval mode uses `stats`.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, NormMode mode, T eps = T(1e-5),
                     T momentum = T(0.1));

#define SEEDET_DECLARE_OPS(T)                                                               \
  extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                       \
  extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                       \
  extern template Tensor<T> scale(const Tensor<T>&, T);                                    \
  extern template Tensor<T> relu(const Tensor<T>&);                                        \
  extern template Tensor<T> sigmoid(const Tensor<T>&);                                     \
  extern template Tensor<T> sum(const Tensor<T>&);                                         \
  extern template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);            \
  extern template Tensor<T> global_avg_pool(const Tensor<T>&);                             \
  extern template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&,                      \
                                  const std::optional<Tensor<T>>&);                        \
  extern template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);           \
  extern template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&,                     \
                                   const std::optional<Tensor<T>>&, int, int);             \
  extern template Tensor<T> conv3d_transpose(const Tensor<T>&, const Tensor<T>&,           \
                                             const std::optional<Tensor<T>>&, int, int);   \
  extern template Tensor<T> max_pool3d(const Tensor<T>&, int, int);                        \
  extern template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&,                 \
                                       const Tensor<T>&, BatchNormStats<T>&, NormMode, T,  \
                                       T);

SEEDET_DECLARE_OPS(float)
SEEDET_DECLARE_OPS(double)
#undef SEEDET_DECLARE_OPS

}  // namespace seedet
