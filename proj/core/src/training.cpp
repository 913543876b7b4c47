#include "deepbet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "deepbet/geometry.hpp"
#include "deepbet/nifti.hpp"
#include "deepbet/phantom.hpp"
#include "deepbet/weights_io.hpp"

namespace deepbet {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw Error(ErrorCode::kInvalidArgument, "lr must be positive");
  if (lambda_focal < 0) throw Error(ErrorCode::kInvalidArgument, "lambda_focal must be >= 0");
  if (!(flat_fraction > 0 && flat_fraction < 1)) throw Error(ErrorCode::kInvalidArgument, "flat_fraction in (0, 1)");
  for (double m : lr_multipliers) {
    if (m < 0) throw Error(ErrorCode::kInvalidArgument, "lr multipliers must be >= 0");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (steps_per_epoch < 0) throw Error(ErrorCode::kInvalidArgument, "steps_per_epoch must be >= 0");
  if (!(grad_clip > 0)) throw Error(ErrorCode::kInvalidArgument, "grad_clip must be positive");
  ranger().validate();
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.lambda_focal = lambda_focal;
  l.focal_gamma = focal_gamma;
  return l;
}

RangerConfig TrainConfig::ranger() const {
  RangerConfig r;
  r.lookahead_k = lookahead_k;
  r.lookahead_alpha = lookahead_alpha;
  r.weight_decay = weight_decay;
  return r;
}

namespace {

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << "step,epoch,lr,loss\n";
  out.precision(10);
  for (const auto& r : log) out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

}  // namespace

TrainResult train(const NetworkConfig& net_cfg, const TrainConfig& cfg, const TrainSource& source,
                  const NetworkWeights* initial, const EpochCallback& on_epoch) {
  cfg.validate();
  net_cfg.validate();
  if (source.size < 1 || !source.batch) throw Error(ErrorCode::kInvalidArgument, "empty training source");

  Rng init_rng(cfg.seed);
  Rng data_rng = Rng(cfg.seed).fork();
  TrainResult result;
  result.weights = initial != nullptr ? *initial : build_linknet(net_cfg, init_rng);
  const auto layout = linknet_layout(net_cfg);
  if (result.weights.tensors.size() != layout.size()) {
    throw Error(ErrorCode::kShapeMismatch, "initial weights do not match the network config");
  }
  store_config(net_cfg, result.weights.metadata);

  std::vector<std::vector<double>> master;
  std::vector<double> multiplier;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = result.weights.tensors[i];
    if (t.name != layout[i].name || t.size() != layout[i].size()) {
      throw Error(ErrorCode::kShapeMismatch, "initial tensor " + t.name + " does not match the layout");
    }
    master.emplace_back(t.values.begin(), t.values.end());
    multiplier.push_back(cfg.lr_multipliers[static_cast<int>(param_group(t.name))]);
  }
  Ranger opt(std::move(master), cfg.ranger());

  const int items_per_step = std::max(1, cfg.batch_size / std::max(1, source.samples_per_item));
  const std::int64_t steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : std::max<std::int64_t>(1, (source.size + items_per_step - 1) / items_per_step);
  const std::int64_t total = cfg.epochs * steps_per_epoch;

  std::vector<std::int64_t> order(static_cast<std::size_t>(source.size));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<double> lrs(layout.size());
  std::int64_t step = 0;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<std::int64_t> items;
      while (static_cast<int>(items.size()) < items_per_step) {
        if (cursor == order.size()) {
          data_rng.shuffle(order.begin(), order.end());
          cursor = 0;
        }
        items.push_back(order[cursor++]);
      }
      auto [x, y] = source.batch(items, cfg.batch_size, data_rng);

      const LinkNet<float> net(net_cfg, param_view(result.weights));
      auto g = net.gradients(x, y, cfg.loss());
      if (clip_global_norm(g.grads, cfg.grad_clip) > cfg.grad_clip) ++result.clipped_steps;
      const double lr = lr_at(step, total, cfg.lr, cfg.flat_fraction);
      for (std::size_t i = 0; i < lrs.size(); ++i) lrs[i] = lr * multiplier[i];
      opt.step(g.grads, lrs);
      for (std::size_t i = 0; i < layout.size(); ++i) {
        auto& dst = result.weights.tensors[i].values;
        const auto& src = opt.fast()[i];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<float>(src[j]);
      }
      result.log.push_back({step, epoch, lr, g.loss});
      epoch_sum += g.loss;
    }
    const double mean = epoch_sum / static_cast<double>(steps_per_epoch);
    result.epoch_loss.push_back(mean);
    if (!cfg.checkpoint.empty()) save_weights(result.weights, cfg.checkpoint);
    if (!cfg.loss_log.empty()) write_loss_log(cfg.loss_log, result.log);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

Dataset phantom_dataset(std::vector<std::uint64_t> seeds, Dims dims) {
  Dataset d;
  d.size = static_cast<std::int64_t>(seeds.size());
  d.load = [seeds, dims](std::int64_t i) {
    PhantomSpec spec;
    spec.seed = seeds.at(static_cast<std::size_t>(i));
    spec.dims = dims;
    auto p = generate(spec);
    return std::pair{std::move(p.image), std::move(p.mask)};
  };
  d.id = [seeds](std::int64_t i) { return "phantom_" + std::to_string(seeds.at(static_cast<std::size_t>(i))); };
  return d;
}

namespace {

std::string strip_suffix(const std::string& name, const std::string& suffix) {
  return name.ends_with(suffix) ? name.substr(0, name.size() - suffix.size()) : std::string();
}

}  // namespace

Dataset directory_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIoFailure, dir.string() + " is not a directory");
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    for (const std::string ext : {".nii.gz", ".nii"}) {
      const std::string stem = strip_suffix(file, "_img" + ext);
      if (stem.empty()) continue;
      std::filesystem::path mask;
      for (const std::string mext : {".nii.gz", ".nii"}) {
        if (std::filesystem::exists(dir / (stem + "_mask" + mext))) {
          mask = dir / (stem + "_mask" + mext);
          break;
        }
      }
      if (mask.empty()) throw Error(ErrorCode::kIoFailure, "no mask for " + file);
      names.push_back(stem);
      pairs.emplace_back(entry.path(), mask);
    }
  }
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return names[a] < names[b]; });
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> sorted_pairs;
  std::vector<std::string> sorted_names;
  for (auto i : idx) {
    sorted_pairs.push_back(pairs[i]);
    sorted_names.push_back(names[i]);
  }
  Dataset d;
  d.size = static_cast<std::int64_t>(sorted_pairs.size());
  d.load = [sorted_pairs](std::int64_t i) {
    const auto& [img, mask] = sorted_pairs.at(static_cast<std::size_t>(i));
    Volume v = read_nifti(img);
    Volume m = read_nifti(mask);
    if (v.dims() != m.dims()) throw Error(ErrorCode::kShapeMismatch, "image and mask dims differ for " + img.string());
    return std::pair{std::move(v), std::move(m)};
  };
  d.id = [sorted_names](std::int64_t i) { return sorted_names.at(static_cast<std::size_t>(i)); };
  return d;
}

PreparedSet::PreparedSet(const Dataset& data, const PreprocessConfig& cfg) {
  for (std::int64_t i = 0; i < data.size; ++i) {
    auto [img, mask] = data.load(i);
    const Orientation o = ras_orientation(img.affine());
    images_.push_back(preprocess(apply_orientation(img, o), cfg));
    const Volume m = apply_orientation(mask, o);
    std::vector<std::uint8_t> q(static_cast<std::size_t>(m.size()));
    for (std::size_t k = 0; k < q.size(); ++k) {
      q[k] = static_cast<std::uint8_t>(std::lround(std::clamp(m.data()[k], 0.0f, 1.0f) * 255.0f));
    }
    masks_.push_back(std::move(q));
  }
}

Volume PreparedSet::mask(std::int64_t i) const {
  const auto& q = masks_.at(static_cast<std::size_t>(i));
  std::vector<float> v(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) v[k] = static_cast<float>(q[k]) / 255.0f;
  return images_.at(static_cast<std::size_t>(i)).with_data(std::move(v));
}

namespace {

std::pair<Volume, Volume> draw_pair(const PreparedSet& set, std::int64_t item, const AugmentConfig& aug,
                                    bool augment, Rng& rng) {
  if (augment) return augment_pair(set.image(item), set.mask(item), aug, rng);
  return {set.image(item), set.mask(item)};
}

// Ground-truth box with each side's margin scaled by a random factor in
// [0.5, 1.5] when jittering.
BoundingBox training_box(const Volume& mask, double margin, bool jitter, Rng& rng) {
  const Dims& d = mask.dims();
  BoundingBox b;
  try {
    b = minimal_bbox(mask, 0.5);
  } catch (const Error&) {
    return BoundingBox{{0, 0, 0}, {d[0], d[1], d[2]}};
  }
  for (int a = 0; a < 3; ++a) {
    const double edge = static_cast<double>(b.hi[a] - b.lo[a]);
    const double f_lo = jitter ? rng.uniform(0.5, 1.5) : 1.0;
    const double f_hi = jitter ? rng.uniform(0.5, 1.5) : 1.0;
    b.lo[a] = std::max<std::int64_t>(0, b.lo[a] - static_cast<std::int64_t>(std::floor(f_lo * margin * edge + 0.5)));
    b.hi[a] = std::min<std::int64_t>(d[a], b.hi[a] + static_cast<std::int64_t>(std::floor(f_hi * margin * edge + 0.5)));
  }
  return b;
}

void copy_into(const Volume& v, nn::Tensor<float>& t, std::int64_t sample) {
  std::copy(v.data().begin(), v.data().end(), t.sample(sample));
}

std::array<int, 2> other_axes(int axis) {
  if (axis == 0) return {1, 2};
  if (axis == 1) return {0, 2};
  return {0, 1};
}

// Slab of `n` slices around index k along axis, as a volume whose third
// axis runs over the slices.
Volume slab(const Volume& v, int axis, std::int64_t k, int n) {
  const auto [a, b] = other_axes(axis);
  const Dims& d = v.dims();
  const auto window = slice_window(k, d[axis], n);
  std::vector<float> out(static_cast<std::size_t>(d[a] * d[b] * n));
  for (int c = 0; c < n; ++c) {
    std::array<std::int64_t, 3> p{};
    p[axis] = window[c];
    for (std::int64_t jb = 0; jb < d[b]; ++jb) {
      p[b] = jb;
      for (std::int64_t ja = 0; ja < d[a]; ++ja) {
        p[a] = ja;
        out[static_cast<std::size_t>(ja + d[a] * (jb + d[b] * c))] = v.at(p[0], p[1], p[2]);
      }
    }
  }
  return Volume({d[a], d[b], n}, std::move(out), {1.0, 1.0, 1.0}, Affine::Identity());
}

}  // namespace

TrainSource stage1_source(const PreparedSet& set, const PipelineConfig& pipe, const AugmentConfig& aug, bool augment) {
  TrainSource src;
  src.size = set.size();
  const std::int64_t s = pipe.stage1_size;
  src.batch = [&set, s, aug, augment](std::span<const std::int64_t> items, int, Rng& rng) {
    const auto n = static_cast<std::int64_t>(items.size());
    nn::Tensor<float> x(n, 1, {s, s, s});
    nn::Tensor<float> y(n, 1, {s, s, s});
    for (std::int64_t i = 0; i < n; ++i) {
      Volume img = resample(set.image(items[i]), {s, s, s});
      Volume mask = resample(set.mask(items[i]), {s, s, s});
      if (augment) std::tie(img, mask) = augment_pair(img, mask, aug, rng);
      copy_into(img, x, i);
      copy_into(mask, y, i);
    }
    return std::pair{std::move(x), std::move(y)};
  };
  return src;
}

TrainSource stage2_source(const PreparedSet& set, const PipelineConfig& pipe, const AugmentConfig& aug, bool augment) {
  TrainSource src;
  src.size = set.size();
  const int s = pipe.stage2_size;
  const double margin = pipe.margin_fraction;
  src.batch = [&set, s, margin, aug, augment](std::span<const std::int64_t> items, int, Rng& rng) {
    const auto n = static_cast<std::int64_t>(items.size());
    nn::Tensor<float> x(n, 1, {s, s, s});
    nn::Tensor<float> y(n, 1, {s, s, s});
    for (std::int64_t i = 0; i < n; ++i) {
      auto [img, mask] = draw_pair(set, items[i], aug, augment, rng);
      const BoundingBox box = training_box(mask, margin, augment, rng);
      copy_into(crop_resample(img, box, s), x, i);
      copy_into(crop_resample(mask, box, s), y, i);
    }
    return std::pair{std::move(x), std::move(y)};
  };
  return src;
}

TrainSource view_source(const PreparedSet& set, View view, const PipelineConfig& pipe, const AugmentConfig& aug,
                        bool augment) {
  TrainSource src;
  src.size = set.size();
  src.samples_per_item = 1 << 20;  // one item per step; the batch is slices of it
  const int s = pipe.stage2_size;
  const double margin = pipe.margin_fraction;
  const int axis = static_cast<int>(view);
  src.batch = [&set, s, margin, axis, aug, augment](std::span<const std::int64_t> items, int batch, Rng& rng) {
    constexpr int kStack = 5;
    constexpr int kSlab = 7;
    const auto n_items = static_cast<std::int64_t>(items.size());
    nn::Tensor<float> x(batch, kStack, {s, s, 1});
    nn::Tensor<float> y(batch, 1, {s, s, 1});
    const std::int64_t plane = static_cast<std::int64_t>(s) * s;
    std::vector<Volume> imgs;
    std::vector<Volume> masks;
    for (std::int64_t i = 0; i < n_items; ++i) {
      auto [img, mask] = draw_pair(set, items[i], aug, augment, rng);
      const BoundingBox box = training_box(mask, margin, augment, rng);
      imgs.push_back(crop_resample(img, box, s));
      masks.push_back(crop_resample(mask, box, s));
    }
    for (int b = 0; b < batch; ++b) {
      const auto& img = imgs[static_cast<std::size_t>(b % n_items)];
      const auto& mask = masks[static_cast<std::size_t>(b % n_items)];
      const auto k = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(s)));
      Volume is = slab(img, axis, k, kSlab);
      Volume ms = slab(mask, axis, k, kSlab);
      if (augment && rng.bernoulli(aug.p_slice_merge)) {
        std::tie(is, ms) = slice_merge(is, ms, rng, aug.slice_merge_alpha_max, 2, aug.slice_merge_normalized);
      }
      const int first = (kSlab - kStack) / 2;
      std::copy_n(is.data().begin() + first * plane, kStack * plane, x.sample(b));
      std::copy_n(ms.data().begin() + (kSlab / 2) * plane, plane, y.sample(b));
    }
    return std::pair{std::move(x), std::move(y)};
  };
  return src;
}

}  // namespace deepbet
