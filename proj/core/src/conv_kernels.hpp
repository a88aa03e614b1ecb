#pragma once

#include <cstddef>

namespace seedet::kernels {

// Geometry of a 3D cross-correlation x[N,Cin,D,H,W] * w[Cout,Cin,kd,kh,kw]
// -> y[N,Cout,od,oh,ow].
struct ConvDims {
  std::size_t n = 0, cin = 0, cout = 0;
  std::size_t d = 0, h = 0, w = 0;
  std::size_t kd = 0, kh = 0, kw = 0;
  std::size_t od = 0, oh = 0, ow = 0;
  int stride = 1;
  int pad = 0;

  std::size_t kvol() const { return kd * kh * kw; }
  std::size_t in_spatial() const { return d * h * w; }
  std::size_t out_spatial() const { return od * oh * ow; }
};

// All three kernels overwrite their output. Work is split into chunks whose
// boundaries depend only on the geometry, and every reduction runs in chunk
// order, so results do not depend on the thread count.

template <class T>
void conv_forward(const T* x, const T* weight, T* y, const ConvDims& g);

template <class T>
void conv_input_grad(const T* dy, const T* weight, T* dx, const ConvDims& g);

template <class T>
void conv_weight_grad(const T* x, const T* dy, T* dweight, const ConvDims& g);

}  // namespace seedet::kernels
