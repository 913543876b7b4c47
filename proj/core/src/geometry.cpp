#include "deepbet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

namespace deepbet {
namespace {

struct LinearTap {
  std::int64_t i0;
  std::int64_t i1;
  float w1;
};

std::vector<LinearTap> axis_taps(std::int64_t n_in, std::int64_t n_out, Interp mode) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(n_out));
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::int64_t j = 0; j < n_out; ++j) {
    double u = (static_cast<double>(j) + 0.5) * scale - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
    if (mode == Interp::kNearest) {
      const auto i = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(u + 0.5)), 0, n_in - 1);
      taps[j] = {i, i, 0.0f};
      continue;
    }
    const auto i0 = static_cast<std::int64_t>(std::floor(u));
    const auto i1 = std::min(i0 + 1, n_in - 1);
    taps[j] = {i0, i1, static_cast<float>(u - static_cast<double>(i0))};
  }
  return taps;
}

// One separable pass: interpolate along `axis` from src (dims) into a buffer
// with dims[axis] replaced by n_out.
std::vector<float> resample_axis(const std::vector<float>& src, const Dims& dims, int axis,
                                 std::int64_t n_out, Interp mode) {
  Dims out_dims = dims;
  out_dims[axis] = n_out;
  std::vector<float> dst(static_cast<std::size_t>(voxel_count(out_dims)));
  const auto taps = axis_taps(dims[axis], n_out, mode);
  const std::int64_t stride_in = axis == 0 ? 1 : (axis == 1 ? dims[0] : dims[0] * dims[1]);

  for (std::int64_t z = 0; z < out_dims[2]; ++z) {
    for (std::int64_t y = 0; y < out_dims[1]; ++y) {
      for (std::int64_t x = 0; x < out_dims[0]; ++x) {
        std::int64_t c[3] = {x, y, z};
        const std::int64_t j = c[axis];
        c[axis] = 0;
        const std::int64_t base_in = c[0] + dims[0] * (c[1] + dims[1] * c[2]);
        const std::int64_t out_idx = x + out_dims[0] * (y + out_dims[1] * z);
        const LinearTap& t = taps[j];
        const float a = src[base_in + t.i0 * stride_in];
        const float b = src[base_in + t.i1 * stride_in];
        dst[out_idx] = t.w1 == 0.0f ? a : a + t.w1 * (b - a);
      }
    }
  }
  return dst;
}

Affine index_map_affine(const Eigen::Matrix3d& lin, const Eigen::Vector3d& offset) {
  Affine t = Affine::Identity();
  t.topLeftCorner<3, 3>() = lin;
  t.block<3, 1>(0, 3) = offset;
  return t;
}

}  // namespace

bool Orientation::is_identity() const {
  return source_axis == std::array<int, 3>{0, 1, 2} &&
         flip == std::array<bool, 3>{false, false, false};
}

Orientation Orientation::inverse() const {
  Orientation inv;
  for (int i = 0; i < 3; ++i) {
    inv.source_axis[source_axis[i]] = i;
    inv.flip[source_axis[i]] = flip[i];
  }
  return inv;
}

Orientation ras_orientation(const Affine& affine) {
  const Eigen::Matrix3d m = affine.topLeftCorner<3, 3>();
  Eigen::Matrix3d n = m;
  for (int j = 0; j < 3; ++j) {
    const double norm = m.col(j).norm();
    if (!(norm > 0.0)) throw Error(ErrorCode::kDegenerateAffine, "zero-length voxel axis");
    n.col(j) /= norm;
  }
  // Exhaustive search over the 6 axis assignments; world axis i <- voxel axis perm[i].
  std::array<int, 3> perm{0, 1, 2};
  std::array<int, 3> best{0, 1, 2};
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int i = 0; i < 3; ++i) score += std::abs(n(i, perm[i]));
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Orientation o;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(n(i, best[i])) < 1e-6) {
      throw Error(ErrorCode::kDegenerateAffine, "no dominant voxel axis for world axis");
    }
    o.source_axis[i] = best[i];
    o.flip[i] = n(i, best[i]) < 0.0;
  }
  return o;
}

Volume apply_orientation(const Volume& v, const Orientation& o) {
  if (o.is_identity()) return v;
  const Dims& in = v.dims();
  Dims out{};
  for (int i = 0; i < 3; ++i) out[i] = in[o.source_axis[i]];

  std::vector<float> data(static_cast<std::size_t>(voxel_count(out)));
  const std::int64_t in_stride[3] = {1, in[0], in[0] * in[1]};
  std::int64_t step[3];
  std::int64_t origin = 0;
  for (int i = 0; i < 3; ++i) {
    const int s = o.source_axis[i];
    step[i] = o.flip[i] ? -in_stride[s] : in_stride[s];
    if (o.flip[i]) origin += (in[s] - 1) * in_stride[s];
  }
  const auto src = v.data();
  std::size_t k = 0;
  for (std::int64_t z = 0; z < out[2]; ++z) {
    for (std::int64_t y = 0; y < out[1]; ++y) {
      std::int64_t p = origin + y * step[1] + z * step[2];
      for (std::int64_t x = 0; x < out[0]; ++x, p += step[0]) data[k++] = src[p];
    }
  }

  // in_index = P * out_index (homogeneous).
  Eigen::Matrix3d lin = Eigen::Matrix3d::Zero();
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const int s = o.source_axis[i];
    lin(s, i) = o.flip[i] ? -1.0 : 1.0;
    offset(s) = o.flip[i] ? static_cast<double>(in[s] - 1) : 0.0;
  }
  const Affine affine = v.affine() * index_map_affine(lin, offset);
  Spacing spacing{};
  for (int i = 0; i < 3; ++i) spacing[i] = v.spacing()[o.source_axis[i]];
  return Volume(out, std::move(data), spacing, affine, v.dtype());
}

Volume canonicalize_orientation(const Volume& v) {
  return apply_orientation(v, ras_orientation(v.affine()));
}

Volume resample(const Volume& v, const Dims& target, Interp mode) {
  for (auto t : target) {
    if (t < 1) throw Error(ErrorCode::kInvalidArgument, "target dims must be >= 1");
  }
  const Dims& in = v.dims();
  if (target == in) return v;

  std::vector<float> buf(v.data().begin(), v.data().end());
  Dims cur = in;
  for (int axis = 0; axis < 3; ++axis) {
    if (cur[axis] == target[axis]) continue;
    buf = resample_axis(buf, cur, axis, target[axis], mode);
    cur[axis] = target[axis];
  }

  Eigen::Vector3d scale;
  for (int a = 0; a < 3; ++a) scale(a) = static_cast<double>(in[a]) / static_cast<double>(target[a]);
  const Eigen::Vector3d offset = 0.5 * scale - Eigen::Vector3d::Constant(0.5);
  const Affine affine = v.affine() * index_map_affine(scale.asDiagonal(), offset);
  Spacing spacing{};
  for (int a = 0; a < 3; ++a) spacing[a] = v.spacing()[a] * scale(a);
  return Volume(target, std::move(buf), spacing, affine, v.dtype());
}

Volume crop(const Volume& v, const BoundingBox& box) {
  validate_box(box, v.dims());
  const Dims ext = box.extent();
  std::vector<float> data(static_cast<std::size_t>(voxel_count(ext)));
  const auto src = v.data();
  std::size_t k = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const auto row = src.begin() + v.index(box.lo[0], y, z);
      std::copy(row, row + ext[0], data.begin() + static_cast<std::ptrdiff_t>(k));
      k += static_cast<std::size_t>(ext[0]);
    }
  }
  const Eigen::Vector3d lo(static_cast<double>(box.lo[0]), static_cast<double>(box.lo[1]),
                           static_cast<double>(box.lo[2]));
  const Affine affine = v.affine() * index_map_affine(Eigen::Matrix3d::Identity(), lo);
  return Volume(ext, std::move(data), v.spacing(), affine, v.dtype());
}

Volume embed(const Volume& mask, const BoundingBox& box, const Dims& full_dims) {
  validate_box(box, full_dims);
  if (mask.dims() != box.extent()) {
    throw Error(ErrorCode::kBoxOutOfRange, "mask dims differ from box extent");
  }
  std::vector<float> data(static_cast<std::size_t>(voxel_count(full_dims)), 0.0f);
  const auto src = mask.data();
  const Dims ext = box.extent();
  std::size_t k = 0;
  for (std::int64_t z = box.lo[2]; z < box.hi[2]; ++z) {
    for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y) {
      const std::int64_t dst = box.lo[0] + full_dims[0] * (y + full_dims[1] * z);
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(k),
                src.begin() + static_cast<std::ptrdiff_t>(k) + ext[0], data.begin() + dst);
      k += static_cast<std::size_t>(ext[0]);
    }
  }
  const Eigen::Vector3d lo(static_cast<double>(box.lo[0]), static_cast<double>(box.lo[1]),
                           static_cast<double>(box.lo[2]));
  const Affine affine = mask.affine() * index_map_affine(Eigen::Matrix3d::Identity(), -lo);
  return Volume(full_dims, std::move(data), mask.spacing(), affine, mask.dtype());
}

float sample_trilinear(const Volume& v, const Eigen::Vector3d& idx, float fill) {
  const Dims& d = v.dims();
  const auto src = v.data();
  double x = idx(0), y = idx(1), z = idx(2);
  if (!(x > -1.0 && y > -1.0 && z > -1.0 && x < static_cast<double>(d[0]) &&
        y < static_cast<double>(d[1]) && z < static_cast<double>(d[2]))) {
    return fill;
  }
  const auto x0 = static_cast<std::int64_t>(std::floor(x));
  const auto y0 = static_cast<std::int64_t>(std::floor(y));
  const auto z0 = static_cast<std::int64_t>(std::floor(z));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double fz = z - static_cast<double>(z0);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const std::int64_t zz = z0 + dz;
    const double wz = dz ? fz : 1.0 - fz;
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const std::int64_t yy = y0 + dy;
      const double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const std::int64_t xx = x0 + dx;
        const double wx = dx ? fx : 1.0 - fx;
        if (wx == 0.0) continue;
        float val = fill;
        if (xx >= 0 && yy >= 0 && zz >= 0 && xx < d[0] && yy < d[1] && zz < d[2]) {
          val = src[static_cast<std::size_t>(xx + d[0] * (yy + d[1] * zz))];
        }
        acc += wx * wy * wz * val;
      }
    }
  }
  return static_cast<float>(acc);
}

std::vector<float> sample_mapped(const Volume& v, const IndexMap& out_to_in, float fill) {
  const Dims& d = v.dims();
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  std::size_t k = 0;
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const Eigen::Vector3d p(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
        out[k++] = sample_trilinear(v, out_to_in(p), fill);
      }
    }
  }
  return out;
}

Volume rotate_about_center(const Volume& v, int axis, double degrees, float fill) {
  const Dims& d = v.dims();
  const Eigen::Vector3d center(0.5 * static_cast<double>(d[0] - 1), 0.5 * static_cast<double>(d[1] - 1),
                               0.5 * static_cast<double>(d[2] - 1));
  const Eigen::Vector3d sp(v.spacing()[0], v.spacing()[1], v.spacing()[2]);
  Eigen::Vector3d ax = Eigen::Vector3d::Zero();
  ax(axis) = 1.0;
  // Pull-back: sample the input at R^-1 applied to the output position.
  const Eigen::Matrix3d rinv =
      Eigen::AngleAxisd(-degrees * std::numbers::pi / 180.0, ax).toRotationMatrix();
  const Eigen::Matrix3d m = sp.cwiseInverse().asDiagonal() * rinv * sp.asDiagonal();
  auto data = sample_mapped(
      v, [&](const Eigen::Vector3d& p) -> Eigen::Vector3d { return center + m * (p - center); }, fill);
  return v.with_data(std::move(data));
}

Volume flip_axis(const Volume& v, int axis) {
  const Dims& d = v.dims();
  std::vector<float> data(static_cast<std::size_t>(v.size()));
  const auto src = v.data();
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        std::int64_t c[3] = {x, y, z};
        c[axis] = d[axis] - 1 - c[axis];
        data[static_cast<std::size_t>(v.index(x, y, z))] = src[static_cast<std::size_t>(v.index(c[0], c[1], c[2]))];
      }
    }
  }
  return v.with_data(std::move(data));
}

}  // namespace deepbet
