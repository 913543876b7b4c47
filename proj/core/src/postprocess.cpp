#include "deepbet/postprocess.hpp"

#include <algorithm>
#include <numeric>

namespace deepbet {

std::int64_t BinaryMask::count() const {
  return std::accumulate(bits.begin(), bits.end(), std::int64_t{0});
}

Volume BinaryMask::to_volume(const Volume& like) const {
  if (like.dims() != dims) throw Error(ErrorCode::kShapeMismatch, "mask and volume dims differ");
  return like.with_data(std::vector<float>(bits.begin(), bits.end()));
}

BinaryMask binarize(const Volume& v, double threshold) {
  BinaryMask m(v.dims());
  const auto data = v.data();
  for (std::size_t i = 0; i < data.size(); ++i) m.bits[i] = data[i] >= threshold ? 1 : 0;
  return m;
}

BinaryMask largest_component(const BinaryMask& m) {
  const Dims& d = m.dims;
  std::vector<std::int32_t> label(m.bits.size(), 0);
  std::vector<std::int64_t> stack;
  std::int32_t best_label = 0;
  std::int64_t best_size = 0;
  std::int32_t next = 0;
  for (std::int64_t seed = 0; seed < m.size(); ++seed) {
    if (!m.bits[seed] || label[seed] != 0) continue;
    ++next;
    std::int64_t size = 0;
    label[seed] = next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::int64_t i = stack.back();
      stack.pop_back();
      ++size;
      const std::int64_t x = i % d[0];
      const std::int64_t y = (i / d[0]) % d[1];
      const std::int64_t z = i / (d[0] * d[1]);
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const std::int64_t zz = z + dz;
        if (zz < 0 || zz >= d[2]) continue;
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          const std::int64_t yy = y + dy;
          if (yy < 0 || yy >= d[1]) continue;
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const std::int64_t xx = x + dx;
            if (xx < 0 || xx >= d[0]) continue;
            const std::int64_t j = m.index(xx, yy, zz);
            if (m.bits[j] && label[j] == 0) {
              label[j] = next;
              stack.push_back(j);
            }
          }
        }
      }
    }
    // Seeds are visited in index order, so a strict comparison keeps the
    // earliest component on ties.
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
  }
  BinaryMask out(d);
  for (std::size_t i = 0; i < label.size(); ++i) out.bits[i] = (best_label != 0 && label[i] == best_label) ? 1 : 0;
  return out;
}

BinaryMask fill_holes(const BinaryMask& m) {
  const Dims& d = m.dims;
  std::vector<std::uint8_t> outside(m.bits.size(), 0);
  std::vector<std::int64_t> stack;
  auto visit = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const std::int64_t i = m.index(x, y, z);
    if (!m.bits[i] && !outside[i]) {
      outside[i] = 1;
      stack.push_back(i);
    }
  };
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        if (x == 0 || y == 0 || z == 0 || x == d[0] - 1 || y == d[1] - 1 || z == d[2] - 1) visit(x, y, z);
      }
    }
  }
  while (!stack.empty()) {
    const std::int64_t i = stack.back();
    stack.pop_back();
    const std::int64_t x = i % d[0];
    const std::int64_t y = (i / d[0]) % d[1];
    const std::int64_t z = i / (d[0] * d[1]);
    if (x > 0) visit(x - 1, y, z);
    if (x + 1 < d[0]) visit(x + 1, y, z);
    if (y > 0) visit(x, y - 1, z);
    if (y + 1 < d[1]) visit(x, y + 1, z);
    if (z > 0) visit(x, y, z - 1);
    if (z + 1 < d[2]) visit(x, y, z + 1);
  }
  BinaryMask out(d);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = outside[i] ? 0 : 1;
  return out;
}

}  // namespace deepbet
