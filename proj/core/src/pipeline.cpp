#include "deepbet/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "deepbet/geometry.hpp"

namespace deepbet {
namespace {

const NetworkWeights& role(const WeightsSet& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw Error(ErrorCode::kInvalidArgument, "weights set has no '" + name + "' network");
  return it->second;
}

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

// Lower median of the values at one voxel across several volumes.
Volume lower_median(const std::vector<const Volume*>& vols) {
  const Volume& first = *vols.front();
  std::vector<float> out(static_cast<std::size_t>(first.size()));
  std::vector<float> buf(vols.size());
  const std::size_t mid = (vols.size() - 1) / 2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < vols.size(); ++k) buf[k] = vols[k]->data()[i];
    std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(mid), buf.end());
    out[i] = buf[mid];
  }
  return first.with_data(std::move(out));
}

std::array<int, 2> plane_axes(int axis) {
  if (axis == 0) return {1, 2};
  if (axis == 1) return {0, 2};
  return {0, 1};
}

}  // namespace

const char* view_name(View v) {
  switch (v) {
    case View::kSagittal:
      return "sagittal";
    case View::kCoronal:
      return "coronal";
    case View::kAxial:
      return "axial";
  }
  return "unknown";
}

void PipelineConfig::validate() const {
  if (stage1_size < 32 || stage1_size % 32 != 0 || stage2_size < 32 || stage2_size % 32 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "stage sizes must be positive multiples of 32");
  }
  if (!(margin_fraction >= 0)) throw Error(ErrorCode::kInvalidArgument, "margin_fraction must be >= 0");
  if (multi_slice_n < 1 || multi_slice_n % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument, "multi_slice_n must be odd and positive");
  }
  if (!(binarize_threshold > 0 && binarize_threshold < 1) || !(stage1_threshold > 0 && stage1_threshold < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "thresholds must lie in (0, 1)");
  }
  if (views.empty()) throw Error(ErrorCode::kInvalidArgument, "at least one view is required");
  if (slice_batch < 1) throw Error(ErrorCode::kInvalidArgument, "slice_batch must be >= 1");
  preprocess.validate();
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.stage1_size = 64;
  c.stage2_size = 128;
  return c;
}

PipelineConfig PipelineConfig::paper() { return PipelineConfig{}; }

Volume predict_volume(const LinkNet<float>& net, const Volume& v) {
  nn::Tensor<float> x(1, 1, v.dims());
  std::copy(v.data().begin(), v.data().end(), x.data.begin());
  auto y = net.forward(x);
  for (auto& z : y.data) z = sigmoid(z);
  return v.with_data(std::move(y.data));
}

ProbabilityMask predict_stage1(const Volume& v, const NetworkWeights& w, const PipelineConfig& cfg) {
  const LinkNet<float> net(load_config(w.metadata), param_view(w));
  const std::int64_t s = cfg.stage1_size;
  return predict_volume(net, resample(v, {s, s, s}));
}

BoundingBox minimal_bbox(const Volume& m, double threshold) {
  const Dims& d = m.dims();
  BoundingBox b{{d[0], d[1], d[2]}, {0, 0, 0}};
  bool any = false;
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        if (m.at(x, y, z) < threshold) continue;
        any = true;
        const std::array<std::int64_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = std::min(b.lo[a], p[a]);
          b.hi[a] = std::max(b.hi[a], p[a] + 1);
        }
      }
    }
  }
  if (!any) throw Error(ErrorCode::kNoForeground, "no voxel reaches the threshold");
  return b;
}

BoundingBox expand_bbox(const BoundingBox& b, double margin_fraction, const Dims& dims) {
  validate_box(b, dims);
  BoundingBox out;
  for (int a = 0; a < 3; ++a) {
    const auto m = static_cast<std::int64_t>(std::floor(margin_fraction * static_cast<double>(b.hi[a] - b.lo[a]) + 0.5));
    out.lo[a] = std::max<std::int64_t>(0, b.lo[a] - m);
    out.hi[a] = std::min<std::int64_t>(dims[a], b.hi[a] + m);
  }
  return out;
}

BoundingBox map_box(const BoundingBox& b, const Dims& from, const Dims& to) {
  validate_box(b, from);
  BoundingBox out;
  for (int a = 0; a < 3; ++a) {
    out.lo[a] = b.lo[a] * to[a] / from[a];
    out.hi[a] = std::min(to[a], (b.hi[a] * to[a] + from[a] - 1) / from[a]);
    if (out.hi[a] <= out.lo[a]) out.hi[a] = std::min(to[a], out.lo[a] + 1);
  }
  return out;
}

Volume crop_resample(const Volume& v, const BoundingBox& box, int size) {
  const std::int64_t s = size;
  return resample(crop(v, box), {s, s, s});
}

ProbabilityMask predict_stage2_3d(const Volume& v, const BoundingBox& box, const NetworkWeights& w,
                                  const PipelineConfig& cfg) {
  const LinkNet<float> net(load_config(w.metadata), param_view(w));
  const Volume p = predict_volume(net, crop_resample(v, box, cfg.stage2_size));
  const Volume back = resample(p, box.extent());
  const Volume full = embed(back, box, v.dims());
  return v.with_data(std::vector<float>(full.data().begin(), full.data().end()));
}

std::vector<std::int64_t> slice_window(std::int64_t i, std::int64_t len, int n) {
  std::vector<std::int64_t> idx;
  const int h = n / 2;
  for (int k = -h; k <= h; ++k) idx.push_back(std::clamp<std::int64_t>(i + k, 0, len - 1));
  return idx;
}

nn::Tensor<float> slice_stack(const Volume& v, View view, std::int64_t i, int n) {
  const int axis = static_cast<int>(view);
  const auto [a, b] = plane_axes(axis);
  const Dims& d = v.dims();
  nn::Tensor<float> t(1, n, {d[a], d[b], 1});
  const auto window = slice_window(i, d[axis], n);
  for (int c = 0; c < n; ++c) {
    float* dst = t.channel(0, c);
    std::array<std::int64_t, 3> p{};
    p[axis] = window[c];
    for (std::int64_t jb = 0; jb < d[b]; ++jb) {
      p[b] = jb;
      for (std::int64_t ja = 0; ja < d[a]; ++ja) {
        p[a] = ja;
        dst[ja + d[a] * jb] = v.at(p[0], p[1], p[2]);
      }
    }
  }
  return t;
}

Volume predict_slices_2d(const Volume& v, const NetworkWeights& w, View view, int slice_batch) {
  const NetworkConfig cfg = load_config(w.metadata);
  if (cfg.rank != Rank::k2D) throw Error(ErrorCode::kShapeMismatch, "2D view prediction needs a 2D network");
  const LinkNet<float> net(cfg, param_view(w));
  const int axis = static_cast<int>(view);
  const auto [a, b] = plane_axes(axis);
  const Dims& d = v.dims();
  const std::int64_t plane = d[a] * d[b];
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (std::int64_t s0 = 0; s0 < d[axis]; s0 += slice_batch) {
    const std::int64_t s1 = std::min<std::int64_t>(d[axis], s0 + slice_batch);
    nn::Tensor<float> x(s1 - s0, cfg.in_channels, {d[a], d[b], 1});
    for (std::int64_t s = s0; s < s1; ++s) {
      const auto one = slice_stack(v, view, s, cfg.in_channels);
      std::copy(one.data.begin(), one.data.end(), x.sample(s - s0));
    }
    const auto y = net.forward(x);
    for (std::int64_t s = s0; s < s1; ++s) {
      const float* src = y.sample(s - s0);
      std::array<std::int64_t, 3> p{};
      p[axis] = s;
      for (std::int64_t k = 0; k < plane; ++k) {
        p[a] = k % d[a];
        p[b] = k / d[a];
        out[static_cast<std::size_t>(v.index(p[0], p[1], p[2]))] = sigmoid(src[k]);
      }
    }
  }
  return v.with_data(std::move(out));
}

Volume multi_slice_aggregate(const Volume& stack, int n, int axis) {
  if (n < 1 || n % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "window must be odd and positive");
  if (n == 1) return stack;
  const Dims& d = stack.dims();
  const int h = n / 2;
  std::vector<float> out(static_cast<std::size_t>(stack.size()));
  std::vector<float> buf;
  for (std::int64_t z = 0; z < d[2]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[0]; ++x) {
        std::array<std::int64_t, 3> p{x, y, z};
        const std::int64_t c = p[axis];
        const std::int64_t lo = std::max<std::int64_t>(0, c - h);
        const std::int64_t hi = std::min<std::int64_t>(d[axis] - 1, c + h);
        buf.clear();
        for (std::int64_t k = lo; k <= hi; ++k) {
          p[axis] = k;
          buf.push_back(stack.at(p[0], p[1], p[2]));
        }
        const std::size_t mid = (buf.size() - 1) / 2;
        std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(mid), buf.end());
        out[static_cast<std::size_t>(stack.index(x, y, z))] = buf[mid];
      }
    }
  }
  return stack.with_data(std::move(out));
}

Volume multi_view_aggregate(const Volume& a, const Volume& b, const Volume& c) {
  if (a.dims() != b.dims() || a.dims() != c.dims()) throw Error(ErrorCode::kShapeMismatch, "view volumes differ");
  return lower_median({&a, &b, &c});
}

ProbabilityMask predict_stage2_2d(const Volume& v, const BoundingBox& box, const WeightsSet& w,
                                  const PipelineConfig& cfg) {
  const Volume c = crop_resample(v, box, cfg.stage2_size);
  std::vector<Volume> per_view;
  for (View view : cfg.views) {
    Volume p = predict_slices_2d(c, role(w, view_name(view)), view, cfg.slice_batch);
    per_view.push_back(multi_slice_aggregate(p, cfg.multi_slice_n, static_cast<int>(view)));
  }
  std::vector<const Volume*> ptrs;
  for (const auto& p : per_view) ptrs.push_back(&p);
  const Volume agg = ptrs.size() == 1 ? per_view.front() : lower_median(ptrs);
  const Volume full = embed(resample(agg, box.extent()), box, v.dims());
  return v.with_data(std::vector<float>(full.data().begin(), full.data().end()));
}

BinaryMask finalize_mask(const Volume& probability, double threshold) {
  return fill_holes(largest_component(binarize(probability, threshold)));
}

namespace {

ExtractResult finish(const Volume& input, const Orientation& o, const Volume& canonical, const Volume& prob,
                     const BoundingBox& box, double threshold) {
  const BinaryMask canon_mask = finalize_mask(prob, threshold);
  const Orientation back = o.inverse();
  const Volume mask_vol = apply_orientation(canon_mask.to_volume(canonical), back);
  const Volume prob_back = apply_orientation(prob, back);
  BinaryMask mask = binarize(mask_vol, 0.5);
  std::vector<float> masked(input.data().begin(), input.data().end());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!mask.bits[i]) masked[i] = 0.0f;
  }
  return ExtractResult{std::move(mask), input.with_data(std::move(masked)),
                       input.with_data(std::vector<float>(prob_back.data().begin(), prob_back.data().end())), box};
}

}  // namespace

ExtractResult extract(const Volume& v, const WeightsSet& w, const PipelineConfig& cfg) {
  cfg.validate();
  const Orientation o = ras_orientation(v.affine());
  const Volume canonical = apply_orientation(v, o);
  const Volume pre = preprocess(canonical, cfg.preprocess);
  const Volume s1 = predict_stage1(pre, role(w, "stage1"), cfg);
  const BoundingBox coarse = minimal_bbox(s1, cfg.stage1_threshold);
  const BoundingBox box = expand_bbox(map_box(coarse, s1.dims(), pre.dims()), cfg.margin_fraction, pre.dims());
  const Volume prob = cfg.mode == PredictMode::k3D ? predict_stage2_3d(pre, box, role(w, "stage2"), cfg)
                                                   : predict_stage2_2d(pre, box, w, cfg);
  return finish(v, o, canonical, prob, box, cfg.binarize_threshold);
}

ExtractResult extract_single_stage(const Volume& v, const WeightsSet& w, const PipelineConfig& cfg) {
  cfg.validate();
  const Orientation o = ras_orientation(v.affine());
  const Volume canonical = apply_orientation(v, o);
  const Volume pre = preprocess(canonical, cfg.preprocess);
  const Volume s1 = predict_stage1(pre, role(w, "stage1"), cfg);
  const Volume up = resample(s1, pre.dims());
  const Volume prob = pre.with_data(std::vector<float>(up.data().begin(), up.data().end()));
  const BoundingBox full{{0, 0, 0}, {pre.dims()[0], pre.dims()[1], pre.dims()[2]}};
  return finish(v, o, canonical, prob, full, cfg.binarize_threshold);
}

}  // namespace deepbet
