#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deepbet/volume.hpp"

namespace deepbet::nn {

/// Dense activation tensor [batch, channel, z, y, x] with x fastest.
/// Spatial dims are stored (x, y, z); 2D data uses z == 1.
template <typename T>
struct Tensor {
  std::int64_t batch = 0;
  std::int64_t channels = 0;
  Dims spatial{1, 1, 1};
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::int64_t n, std::int64_t c, Dims s)
      : batch(n), channels(c), spatial(s), data(static_cast<std::size_t>(n * c * voxel_count(s)), T(0)) {}

  std::int64_t plane() const { return voxel_count(spatial); }
  std::int64_t sample_size() const { return channels * plane(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  T* sample(std::int64_t n) { return data.data() + n * sample_size(); }
  const T* sample(std::int64_t n) const { return data.data() + n * sample_size(); }
  T* channel(std::int64_t n, std::int64_t c) { return sample(n) + c * plane(); }
  const T* channel(std::int64_t n, std::int64_t c) const { return sample(n) + c * plane(); }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && channels == o.channels && spatial == o.spatial;
  }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.batch = t.batch;
  out.channels = t.channels;
  out.spatial = t.spatial;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

}  // namespace deepbet::nn
