#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "deepbet/tensor.hpp"

namespace deepbet::nn {

/// Per-axis (x, y, z) kernel geometry.
struct ConvGeom {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};

  int taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  /// floor((n + 2p - k) / s) + 1 per axis.
  Dims output_size(const Dims& in) const;
  /// True when `out` is a legal transposed-convolution output for input `in`.
  bool transpose_size_ok(const Dims& in, const Dims& out) const;
};

// Convolution primitives. Weights are [c_out][c_in][kz][ky][kx] for conv;
// the transposed convolution with weights [c_in][c_out][k] is the adjoint of
// the convolution mapping its output space to its input space. Accumulating
// functions add into their destination.

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const T* w, std::int64_t c_out, const ConvGeom& g);

template <typename T>
void conv_backward(const Tensor<T>& x, const T* w, const Tensor<T>& dy, const ConvGeom& g, T* dw,
                   Tensor<T>* dx);

template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const T* w, std::int64_t c_out, const ConvGeom& g,
                                 const Dims& out_spatial);

template <typename T>
void conv_transpose_backward(const Tensor<T>& x, const T* w, const Tensor<T>& dy, const ConvGeom& g, T* dw,
                             Tensor<T>* dx);

/// Normalization statistics kept for the backward pass.
template <typename T>
struct NormCache {
  std::vector<T> mean;     // per (n, c) for instance, per c for batch
  std::vector<T> inv_std;
};

enum class NormKind { kInstance, kBatch };

inline constexpr double kNormEps = 1e-5;

/// y = gamma * (x - mean) / sqrt(var + eps) + beta with statistics per
/// (sample, channel) for instance norm or per channel over the batch for
/// batch norm.
template <typename T>
Tensor<T> norm_forward(const Tensor<T>& x, const T* gamma, const T* beta, NormKind kind, NormCache<T>& cache);

/// Batch norm at inference with fixed statistics.
template <typename T>
Tensor<T> norm_forward_fixed(const Tensor<T>& x, const T* gamma, const T* beta, const T* mean, const T* var);

template <typename T>
void norm_backward(const Tensor<T>& x, const T* gamma, const Tensor<T>& dy, NormKind kind,
                   const NormCache<T>& cache, T* dgamma, T* dbeta, Tensor<T>& dx);

/// Max pooling; argmax holds flat input offsets per output element.
template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, const ConvGeom& g, std::vector<std::int64_t>& argmax);

template <typename T>
void maxpool_backward(const Tensor<T>& dy, const std::vector<std::int64_t>& argmax, Tensor<T>& dx);

}  // namespace deepbet::nn
