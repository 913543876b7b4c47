#include "deepbet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

namespace deepbet::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MapConstStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements per chunk.
constexpr std::int64_t kMaxColElements = std::int64_t{1} << 18;

// Geometry of one convolution viewed from its (input, output) grids.
struct ConvShape {
  Dims in;
  Dims out;
  std::int64_t c_in;
  ConvGeom g;

  std::int64_t rows() const { return c_in * g.taps(); }
  std::int64_t out_rows() const { return out[1] * out[2]; }
  bool pointwise() const {
    return g.taps() == 1 && g.stride == std::array<int, 3>{1, 1, 1} && g.pad == std::array<int, 3>{0, 0, 0};
  }
  std::int64_t rows_per_chunk() const {
    const std::int64_t per_row = std::max<std::int64_t>(1, rows() * out[0]);
    return std::clamp<std::int64_t>(kMaxColElements / per_row, 1, out_rows());
  }
};

// Copies the receptive fields of output rows [r0, r1) (an output row is one
// (y, z) line of x positions) into cols[c_in * taps][(r1 - r0) * out_x].
template <typename T>
void im2col(const T* in, const ConvShape& s, std::int64_t r0, std::int64_t r1, T* cols) {
  const auto& g = s.g;
  const std::int64_t ox_n = s.out[0];
  const std::int64_t p = (r1 - r0) * ox_n;
  const std::int64_t plane_in = voxel_count(s.in);
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < s.c_in; ++ci) {
    const T* src_c = in + ci * plane_in;
    for (int kz = 0; kz < g.kernel[2]; ++kz) {
      for (int ky = 0; ky < g.kernel[1]; ++ky) {
        for (int kx = 0; kx < g.kernel[0]; ++kx, ++row) {
          T* dst = cols + row * p;
          // Valid ox range for this kx: 0 <= ox * sx - px + kx < in_x.
          std::int64_t ox_lo = 0;
          std::int64_t ox_hi = ox_n;
          {
            const std::int64_t off = kx - g.pad[0];
            const std::int64_t sx = g.stride[0];
            ox_lo = off >= 0 ? 0 : (-off + sx - 1) / sx;
            const std::int64_t last = s.in[0] - 1 - off;  // need ox * sx <= last
            ox_hi = last < 0 ? 0 : std::min<std::int64_t>(ox_n, last / sx + 1);
            if (ox_hi < ox_lo) ox_hi = ox_lo;
          }
          for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t oy = r % s.out[1];
            const std::int64_t oz = r / s.out[1];
            const std::int64_t iz = oz * g.stride[2] - g.pad[2] + kz;
            const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
            T* d = dst + (r - r0) * ox_n;
            if (iz < 0 || iz >= s.in[2] || iy < 0 || iy >= s.in[1]) {
              std::fill(d, d + ox_n, T(0));
              continue;
            }
            const T* srow = src_c + (iz * s.in[1] + iy) * s.in[0];
            std::fill(d, d + ox_lo, T(0));
            if (g.stride[0] == 1) {
              const std::int64_t ix0 = ox_lo - g.pad[0] + kx;
              std::memcpy(d + ox_lo, srow + ix0, static_cast<std::size_t>(ox_hi - ox_lo) * sizeof(T));
            } else {
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) d[ox] = srow[ox * g.stride[0] - g.pad[0] + kx];
            }
            std::fill(d + ox_hi, d + ox_n, T(0));
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters cols back onto the input grid (accumulating).
template <typename T>
void col2im(const T* cols, const ConvShape& s, std::int64_t r0, std::int64_t r1, T* in) {
  const auto& g = s.g;
  const std::int64_t ox_n = s.out[0];
  const std::int64_t p = (r1 - r0) * ox_n;
  const std::int64_t plane_in = voxel_count(s.in);
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < s.c_in; ++ci) {
    T* dst_c = in + ci * plane_in;
    for (int kz = 0; kz < g.kernel[2]; ++kz) {
      for (int ky = 0; ky < g.kernel[1]; ++ky) {
        for (int kx = 0; kx < g.kernel[0]; ++kx, ++row) {
          const T* src = cols + row * p;
          const std::int64_t off = kx - g.pad[0];
          const std::int64_t sx = g.stride[0];
          const std::int64_t ox_lo = off >= 0 ? 0 : (-off + sx - 1) / sx;
          const std::int64_t last = s.in[0] - 1 - off;
          std::int64_t ox_hi = last < 0 ? 0 : std::min<std::int64_t>(ox_n, last / sx + 1);
          if (ox_hi < ox_lo) ox_hi = ox_lo;
          for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t oy = r % s.out[1];
            const std::int64_t oz = r / s.out[1];
            const std::int64_t iz = oz * g.stride[2] - g.pad[2] + kz;
            const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
            if (iz < 0 || iz >= s.in[2] || iy < 0 || iy >= s.in[1]) continue;
            const T* d = src + (r - r0) * ox_n;
            T* irow = dst_c + (iz * s.in[1] + iy) * s.in[0];
            for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) irow[ox * sx + off] += d[ox];
          }
        }
      }
    }
  }
}

// out[c_out][plane_out] = W[c_out][rows] * cols(in)
template <typename T>
void conv_sample_forward(const T* in, const ConvShape& s, const T* w, std::int64_t c_out, T* out) {
  const std::int64_t plane_out = voxel_count(s.out);
  MapConstMat<T> W(w, c_out, s.rows());
  if (s.pointwise()) {
    MapConstMat<T> X(in, s.c_in, plane_out);
    MapMat<T> Y(out, c_out, plane_out);
    Y.noalias() = W * X;
    return;
  }
  const std::int64_t chunk = s.rows_per_chunk();
  std::vector<T> cols(static_cast<std::size_t>(s.rows() * chunk * s.out[0]));
  for (std::int64_t r0 = 0; r0 < s.out_rows(); r0 += chunk) {
    const std::int64_t r1 = std::min(r0 + chunk, s.out_rows());
    const std::int64_t p = (r1 - r0) * s.out[0];
    im2col(in, s, r0, r1, cols.data());
    MapConstMat<T> C(cols.data(), s.rows(), p);
    MapStrided<T> Y(out + r0 * s.out[0], c_out, p, Eigen::OuterStride<>(plane_out));
    Y.noalias() = W * C;
  }
}

// dW += dout * cols(in)^T
template <typename T>
void conv_sample_backward_weight(const T* in, const ConvShape& s, const T* dout, std::int64_t c_out, T* dw) {
  const std::int64_t plane_out = voxel_count(s.out);
  MapMat<T> dW(dw, c_out, s.rows());
  if (s.pointwise()) {
    MapConstMat<T> X(in, s.c_in, plane_out);
    MapConstMat<T> dY(dout, c_out, plane_out);
    dW.noalias() += dY * X.transpose();
    return;
  }
  const std::int64_t chunk = s.rows_per_chunk();
  std::vector<T> cols(static_cast<std::size_t>(s.rows() * chunk * s.out[0]));
  for (std::int64_t r0 = 0; r0 < s.out_rows(); r0 += chunk) {
    const std::int64_t r1 = std::min(r0 + chunk, s.out_rows());
    const std::int64_t p = (r1 - r0) * s.out[0];
    im2col(in, s, r0, r1, cols.data());
    MapConstMat<T> C(cols.data(), s.rows(), p);
    MapConstStrided<T> dY(dout + r0 * s.out[0], c_out, p, Eigen::OuterStride<>(plane_out));
    dW.noalias() += dY * C.transpose();
  }
}

// din += col2im(W^T * dout)
template <typename T>
void conv_sample_backward_data(const T* dout, const ConvShape& s, const T* w, std::int64_t c_out, T* din) {
  const std::int64_t plane_out = voxel_count(s.out);
  MapConstMat<T> W(w, c_out, s.rows());
  if (s.pointwise()) {
    MapConstMat<T> dY(dout, c_out, plane_out);
    MapMat<T> dX(din, s.c_in, plane_out);
    dX.noalias() += W.transpose() * dY;
    return;
  }
  const std::int64_t chunk = s.rows_per_chunk();
  std::vector<T> cols(static_cast<std::size_t>(s.rows() * chunk * s.out[0]));
  for (std::int64_t r0 = 0; r0 < s.out_rows(); r0 += chunk) {
    const std::int64_t r1 = std::min(r0 + chunk, s.out_rows());
    const std::int64_t p = (r1 - r0) * s.out[0];
    MapConstStrided<T> dY(dout + r0 * s.out[0], c_out, p, Eigen::OuterStride<>(plane_out));
    MapMat<T> C(cols.data(), s.rows(), p);
    C.noalias() = W.transpose() * dY;
    col2im(cols.data(), s, r0, r1, din);
  }
}

void check_spatial(const Dims& d) {
  for (auto v : d) {
    if (v < 1) throw Error(ErrorCode::kShapeMismatch, "convolution produces an empty spatial axis");
  }
}

}  // namespace

Dims ConvGeom::output_size(const Dims& in) const {
  Dims out{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t num = in[a] + 2 * pad[a] - kernel[a];
    out[a] = num < 0 ? 0 : num / stride[a] + 1;
  }
  return out;
}

bool ConvGeom::transpose_size_ok(const Dims& in, const Dims& out) const {
  return output_size(out) == in;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const T* w, std::int64_t c_out, const ConvGeom& g) {
  const ConvShape s{x.spatial, g.output_size(x.spatial), x.channels, g};
  check_spatial(s.out);
  Tensor<T> y(x.batch, c_out, s.out);
  for (std::int64_t n = 0; n < x.batch; ++n) conv_sample_forward(x.sample(n), s, w, c_out, y.sample(n));
  return y;
}

template <typename T>
void conv_backward(const Tensor<T>& x, const T* w, const Tensor<T>& dy, const ConvGeom& g, T* dw, Tensor<T>* dx) {
  const ConvShape s{x.spatial, dy.spatial, x.channels, g};
  for (std::int64_t n = 0; n < x.batch; ++n) {
    if (dw != nullptr) conv_sample_backward_weight(x.sample(n), s, dy.sample(n), dy.channels, dw);
    if (dx != nullptr) conv_sample_backward_data(dy.sample(n), s, w, dy.channels, dx->sample(n));
  }
}

template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const T* w, std::int64_t c_out, const ConvGeom& g,
                                 const Dims& out_spatial) {
  if (!g.transpose_size_ok(x.spatial, out_spatial)) {
    throw Error(ErrorCode::kShapeMismatch, "transposed convolution cannot reach requested output size");
  }
  // Adjoint view: a convolution from y (c_out channels) to x (c_in channels).
  const ConvShape s{out_spatial, x.spatial, c_out, g};
  Tensor<T> y(x.batch, c_out, out_spatial);
  for (std::int64_t n = 0; n < x.batch; ++n) {
    conv_sample_backward_data(x.sample(n), s, w, x.channels, y.sample(n));
  }
  return y;
}

template <typename T>
void conv_transpose_backward(const Tensor<T>& x, const T* w, const Tensor<T>& dy, const ConvGeom& g, T* dw,
                             Tensor<T>* dx) {
  const ConvShape s{dy.spatial, x.spatial, dy.channels, g};
  for (std::int64_t n = 0; n < x.batch; ++n) {
    if (dw != nullptr) conv_sample_backward_weight(dy.sample(n), s, x.sample(n), x.channels, dw);
    if (dx != nullptr) {
      std::vector<T> tmp(static_cast<std::size_t>(x.sample_size()));
      conv_sample_forward(dy.sample(n), s, w, x.channels, tmp.data());
      T* d = dx->sample(n);
      for (std::size_t i = 0; i < tmp.size(); ++i) d[i] += tmp[i];
    }
  }
}

template <typename T>
Tensor<T> norm_forward(const Tensor<T>& x, const T* gamma, const T* beta, NormKind kind, NormCache<T>& cache) {
  Tensor<T> y(x.batch, x.channels, x.spatial);
  const std::int64_t plane = x.plane();
  if (kind == NormKind::kInstance) {
    cache.mean.assign(static_cast<std::size_t>(x.batch * x.channels), T(0));
    cache.inv_std.assign(cache.mean.size(), T(0));
    for (std::int64_t n = 0; n < x.batch; ++n) {
      for (std::int64_t c = 0; c < x.channels; ++c) {
        const T* src = x.channel(n, c);
        double sum = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
        const double mean = sum / static_cast<double>(plane);
        double ss = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) ss += (src[i] - mean) * (src[i] - mean);
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(plane) + kNormEps);
        cache.mean[n * x.channels + c] = static_cast<T>(mean);
        cache.inv_std[n * x.channels + c] = static_cast<T>(inv);
        T* dst = y.channel(n, c);
        const T a = static_cast<T>(gamma[c] * inv);
        const T b = static_cast<T>(beta[c] - gamma[c] * inv * mean);
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
      }
    }
    return y;
  }
  cache.mean.assign(static_cast<std::size_t>(x.channels), T(0));
  cache.inv_std.assign(cache.mean.size(), T(0));
  const double count = static_cast<double>(plane * x.batch);
  for (std::int64_t c = 0; c < x.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < x.batch; ++n) {
      const T* src = x.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (std::int64_t n = 0; n < x.batch; ++n) {
      const T* src = x.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) ss += (src[i] - mean) * (src[i] - mean);
    }
    const double inv = 1.0 / std::sqrt(ss / count + kNormEps);
    cache.mean[c] = static_cast<T>(mean);
    cache.inv_std[c] = static_cast<T>(inv);
    const T a = static_cast<T>(gamma[c] * inv);
    const T b = static_cast<T>(beta[c] - gamma[c] * inv * mean);
    for (std::int64_t n = 0; n < x.batch; ++n) {
      const T* src = x.channel(n, c);
      T* dst = y.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
    }
  }
  return y;
}

template <typename T>
Tensor<T> norm_forward_fixed(const Tensor<T>& x, const T* gamma, const T* beta, const T* mean, const T* var) {
  Tensor<T> y(x.batch, x.channels, x.spatial);
  const std::int64_t plane = x.plane();
  for (std::int64_t c = 0; c < x.channels; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + kNormEps);
    const T a = static_cast<T>(gamma[c] * inv);
    const T b = static_cast<T>(beta[c] - gamma[c] * inv * mean[c]);
    for (std::int64_t n = 0; n < x.batch; ++n) {
      const T* src = x.channel(n, c);
      T* dst = y.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
    }
  }
  return y;
}

template <typename T>
void norm_backward(const Tensor<T>& x, const T* gamma, const Tensor<T>& dy, NormKind kind,
                   const NormCache<T>& cache, T* dgamma, T* dbeta, Tensor<T>& dx) {
  const std::int64_t plane = x.plane();
  // Per group: dx = gamma * inv / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
  auto group = [&](std::int64_t c, auto&& samples, double mean, double inv) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    double m = 0.0;
    for (std::int64_t n : samples) {
      const T* xs = x.channel(n, c);
      const T* ds = dy.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (xs[i] - mean) * inv;
        sum_dy += ds[i];
        sum_dy_xhat += ds[i] * xhat;
      }
      m += static_cast<double>(plane);
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double k = gamma[c] * inv / m;
    for (std::int64_t n : samples) {
      const T* xs = x.channel(n, c);
      const T* ds = dy.channel(n, c);
      T* dd = dx.channel(n, c);
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (xs[i] - mean) * inv;
        dd[i] += static_cast<T>(k * (m * ds[i] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  };
  if (kind == NormKind::kInstance) {
    for (std::int64_t n = 0; n < x.batch; ++n) {
      for (std::int64_t c = 0; c < x.channels; ++c) {
        const std::int64_t only[1] = {n};
        group(c, only, cache.mean[n * x.channels + c], cache.inv_std[n * x.channels + c]);
      }
    }
    return;
  }
  std::vector<std::int64_t> all(static_cast<std::size_t>(x.batch));
  for (std::int64_t n = 0; n < x.batch; ++n) all[n] = n;
  for (std::int64_t c = 0; c < x.channels; ++c) group(c, all, cache.mean[c], cache.inv_std[c]);
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, const ConvGeom& g, std::vector<std::int64_t>& argmax) {
  const Dims out = g.output_size(x.spatial);
  check_spatial(out);
  Tensor<T> y(x.batch, x.channels, out);
  argmax.assign(y.data.size(), 0);
  const std::int64_t plane_in = x.plane();
  std::size_t k = 0;
  for (std::int64_t n = 0; n < x.batch; ++n) {
    for (std::int64_t c = 0; c < x.channels; ++c) {
      const std::int64_t base = (n * x.channels + c) * plane_in;
      const T* src = x.data.data() + base;
      for (std::int64_t oz = 0; oz < out[2]; ++oz) {
        for (std::int64_t oy = 0; oy < out[1]; ++oy) {
          for (std::int64_t ox = 0; ox < out[0]; ++ox, ++k) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_i = -1;
            for (int kz = 0; kz < g.kernel[2]; ++kz) {
              const std::int64_t iz = oz * g.stride[2] - g.pad[2] + kz;
              if (iz < 0 || iz >= x.spatial[2]) continue;
              for (int ky = 0; ky < g.kernel[1]; ++ky) {
                const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
                if (iy < 0 || iy >= x.spatial[1]) continue;
                for (int kx = 0; kx < g.kernel[0]; ++kx) {
                  const std::int64_t ix = ox * g.stride[0] - g.pad[0] + kx;
                  if (ix < 0 || ix >= x.spatial[0]) continue;
                  const std::int64_t i = ix + x.spatial[0] * (iy + x.spatial[1] * iz);
                  if (best_i < 0 || src[i] > best) {
                    best = src[i];
                    best_i = i;
                  }
                }
              }
            }
            y.data[k] = best;
            argmax[k] = base + best_i;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
void maxpool_backward(const Tensor<T>& dy, const std::vector<std::int64_t>& argmax, Tensor<T>& dx) {
  for (std::size_t k = 0; k < dy.data.size(); ++k) dx.data[static_cast<std::size_t>(argmax[k])] += dy.data[k];
}

#define DEEPBET_INSTANTIATE_LAYERS(T)                                                                       \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, const T*, std::int64_t, const ConvGeom&);            \
  template void conv_backward<T>(const Tensor<T>&, const T*, const Tensor<T>&, const ConvGeom&, T*,         \
                                 Tensor<T>*);                                                                \
  template Tensor<T> conv_transpose_forward<T>(const Tensor<T>&, const T*, std::int64_t, const ConvGeom&,   \
                                               const Dims&);                                                 \
  template void conv_transpose_backward<T>(const Tensor<T>&, const T*, const Tensor<T>&, const ConvGeom&,   \
                                           T*, Tensor<T>*);                                                  \
  template Tensor<T> norm_forward<T>(const Tensor<T>&, const T*, const T*, NormKind, NormCache<T>&);        \
  template Tensor<T> norm_forward_fixed<T>(const Tensor<T>&, const T*, const T*, const T*, const T*);       \
  template void norm_backward<T>(const Tensor<T>&, const T*, const Tensor<T>&, NormKind,                    \
                                 const NormCache<T>&, T*, T*, Tensor<T>&);                                   \
  template Tensor<T> maxpool_forward<T>(const Tensor<T>&, const ConvGeom&, std::vector<std::int64_t>&);     \
  template void maxpool_backward<T>(const Tensor<T>&, const std::vector<std::int64_t>&, Tensor<T>&);

DEEPBET_INSTANTIATE_LAYERS(float)
DEEPBET_INSTANTIATE_LAYERS(double)

#undef DEEPBET_INSTANTIATE_LAYERS

}  // namespace deepbet::nn
