#include "deepbet/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>

#include "deepbet/layers.hpp"

namespace deepbet {
namespace {

using nn::ConvGeom;
using nn::Tensor;

// Reverse-mode tape over whole-tensor ops. When not recording, backward
// closures and their caches are skipped.
template <typename T>
class Tape {
 public:
  Tape(const ParamView<T>& params, bool record) : params_(params), record_(record) {
    if (record_) {
      param_grads_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) param_grads_[i].assign(params[i].size(), T(0));
    }
  }

  int leaf(Tensor<T> v) { return push(std::move(v), nullptr); }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }

  int conv(int x, int p, std::int64_t c_out, const ConvGeom& g) {
    auto y = nn::conv_forward(value(x), params_[p].data(), c_out, g);
    return push(std::move(y), [this, x, p, g](const Tensor<T>& dy) {
      nn::conv_backward(value(x), params_[p].data(), dy, g, param_grads_[p].data(), grad_if_needed(x));
    });
  }

  int conv_transpose(int x, int p, std::int64_t c_out, const ConvGeom& g, const Dims& out) {
    auto y = nn::conv_transpose_forward(value(x), params_[p].data(), c_out, g, out);
    return push(std::move(y), [this, x, p, g](const Tensor<T>& dy) {
      nn::conv_transpose_backward(value(x), params_[p].data(), dy, g, param_grads_[p].data(), grad_if_needed(x));
    });
  }

  int bias(int x, int p) {
    Tensor<T> y = value(x);
    const T* b = params_[p].data();
    for (std::int64_t n = 0; n < y.batch; ++n) {
      for (std::int64_t c = 0; c < y.channels; ++c) {
        T* d = y.channel(n, c);
        for (std::int64_t i = 0; i < y.plane(); ++i) d[i] += b[c];
      }
    }
    return push(std::move(y), [this, x, p](const Tensor<T>& dy) {
      T* db = param_grads_[p].data();
      for (std::int64_t n = 0; n < dy.batch; ++n) {
        for (std::int64_t c = 0; c < dy.channels; ++c) {
          const T* s = dy.channel(n, c);
          double acc = 0.0;
          for (std::int64_t i = 0; i < dy.plane(); ++i) acc += s[i];
          db[c] += static_cast<T>(acc);
        }
      }
      accumulate(x, dy);
    });
  }

  int norm(int x, int gamma, int beta, nn::NormKind kind) {
    auto cache = std::make_shared<nn::NormCache<T>>();
    auto y = nn::norm_forward(value(x), params_[gamma].data(), params_[beta].data(), kind, *cache);
    return push(std::move(y), [this, x, gamma, beta, kind, cache](const Tensor<T>& dy) {
      Tensor<T>* dx = grad_if_needed(x);
      Tensor<T> scratch;
      if (dx == nullptr) {
        scratch = Tensor<T>(dy.batch, dy.channels, dy.spatial);
        dx = &scratch;
      }
      nn::norm_backward(value(x), params_[gamma].data(), dy, kind, *cache, param_grads_[gamma].data(),
                        param_grads_[beta].data(), *dx);
    });
  }

  int relu(int x) {
    Tensor<T> y = value(x);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    const int id = static_cast<int>(nodes_.size());
    return push(std::move(y), [this, x, id](const Tensor<T>& dy) {
      Tensor<T>* dx = grad_if_needed(x);
      if (dx == nullptr) return;
      const auto& y = value(id);
      for (std::size_t i = 0; i < dy.data.size(); ++i) {
        if (y.data[i] > T(0)) dx->data[i] += dy.data[i];
      }
    });
  }

  int maxpool(int x, const ConvGeom& g) {
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    auto y = nn::maxpool_forward(value(x), g, *argmax);
    return push(std::move(y), [this, x, argmax](const Tensor<T>& dy) {
      if (Tensor<T>* dx = grad_if_needed(x)) nn::maxpool_backward(dy, *argmax, *dx);
    });
  }

  int add(int a, int b) {
    if (!value(a).same_shape(value(b))) throw Error(ErrorCode::kShapeMismatch, "skip connection shapes differ");
    Tensor<T> y = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += vb.data[i];
    return push(std::move(y), [this, a, b](const Tensor<T>& dy) {
      accumulate(a, dy);
      accumulate(b, dy);
    });
  }

  std::vector<std::vector<T>> backward(int out, Tensor<T> dy) {
    grads_.resize(nodes_.size());
    grads_[out] = std::move(dy);
    for (int i = out; i >= 0; --i) {
      if (grads_[i].data.empty() || !nodes_[i].back) continue;
      nodes_[i].back(grads_[i]);
      grads_[i] = Tensor<T>();
    }
    return std::move(param_grads_);
  }

 private:
  struct Node {
    Tensor<T> value;
    std::function<void(const Tensor<T>&)> back;
  };

  int push(Tensor<T> v, std::function<void(const Tensor<T>&)> back) {
    nodes_.push_back({std::move(v), record_ ? std::move(back) : nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Leaves carry no gradient.
  Tensor<T>* grad_if_needed(int id) {
    if (!nodes_[id].back) return nullptr;
    auto& g = grads_[id];
    if (g.data.empty()) {
      const auto& v = nodes_[id].value;
      g = Tensor<T>(v.batch, v.channels, v.spatial);
    }
    return &g;
  }

  void accumulate(int id, const Tensor<T>& dy) {
    if (Tensor<T>* g = grad_if_needed(id)) {
      for (std::size_t i = 0; i < dy.data.size(); ++i) g->data[i] += dy.data[i];
    }
  }

  const ParamView<T>& params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::vector<T>> param_grads_;
};

ConvGeom geom(Rank rank, int k, int s, int p) {
  ConvGeom g;
  g.kernel = {k, k, rank == Rank::k3D ? k : 1};
  g.stride = {s, s, rank == Rank::k3D ? s : 1};
  g.pad = {p, p, rank == Rank::k3D ? p : 0};
  return g;
}

int reduced(int m) { return std::max(1, m / 4); }
int half(int b) { return std::max(1, b / 2); }

int encoder_channels(const NetworkConfig& cfg, int e) { return cfg.base_channels << e; }

// Walks the architecture once, declaring parameters.
class LayoutBuilder {
 public:
  explicit LayoutBuilder(Rank rank) : rank_(rank) {}

  void conv(const std::string& name, int c_out, int c_in, int k) {
    out_.push_back({name + ".weight", shape(c_out, c_in, k), static_cast<std::int64_t>(c_in) * taps(k),
                    ParamKind::kWeight});
  }
  void conv_transpose(const std::string& name, int c_in, int c_out, int k) {
    out_.push_back({name + ".weight", shape(c_in, c_out, k), static_cast<std::int64_t>(c_out) * taps(k),
                    ParamKind::kWeight});
  }
  void norm(const std::string& name, int c) {
    out_.push_back({name + ".gamma", {static_cast<std::uint32_t>(c)}, 1, ParamKind::kGamma});
    out_.push_back({name + ".beta", {static_cast<std::uint32_t>(c)}, 1, ParamKind::kBeta});
  }
  void bias(const std::string& name, int c) {
    out_.push_back({name + ".bias", {static_cast<std::uint32_t>(c)}, 1, ParamKind::kBias});
  }

  std::vector<ParamSpec> take() { return std::move(out_); }

 private:
  std::int64_t taps(int k) const { return rank_ == Rank::k3D ? k * k * k : k * k; }
  std::vector<std::uint32_t> shape(int a, int b, int k) const {
    std::vector<std::uint32_t> s{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    const int spatial = rank_ == Rank::k3D ? 3 : 2;
    for (int i = 0; i < spatial; ++i) s.push_back(static_cast<std::uint32_t>(k));
    return s;
  }

  Rank rank_;
  std::vector<ParamSpec> out_;
};

std::string enc_name(int e, int b) { return "enc" + std::to_string(e) + ".block" + std::to_string(b); }
std::string dec_name(int d) { return "dec" + std::to_string(d); }

}  // namespace

void NetworkConfig::validate() const {
  if (encoder_depth < 1) throw Error(ErrorCode::kInvalidArgument, "encoder_depth must be >= 1");
  if (base_channels < 1) throw Error(ErrorCode::kInvalidArgument, "base_channels must be >= 1");
  if (in_channels < 1) throw Error(ErrorCode::kInvalidArgument, "in_channels must be >= 1");
  if (out_channels < 1) throw Error(ErrorCode::kInvalidArgument, "out_channels must be >= 1");
  if (encoder_depth > 8) throw Error(ErrorCode::kInvalidArgument, "encoder_depth too large");
}

NetworkConfig NetworkConfig::linknet_3d(int base) {
  NetworkConfig c;
  c.rank = Rank::k3D;
  c.in_channels = 1;
  c.base_channels = base;
  return c;
}

NetworkConfig NetworkConfig::linknet_2d(int base) {
  NetworkConfig c;
  c.rank = Rank::k2D;
  c.in_channels = 5;
  c.base_channels = base;
  return c;
}

const NamedTensor* NetworkWeights::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

NamedTensor* NetworkWeights::find(std::string_view name) {
  for (auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::int64_t NetworkWeights::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

std::int64_t ParamSpec::size() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<ParamSpec> linknet_layout(const NetworkConfig& cfg) {
  cfg.validate();
  LayoutBuilder b(cfg.rank);
  const int base = cfg.base_channels;
  b.conv("init.conv", base, cfg.in_channels, 7);
  b.norm("init.norm", base);
  for (int e = 0; e < cfg.encoder_depth; ++e) {
    const int c_in = e == 0 ? base : encoder_channels(cfg, e - 1);
    const int c_out = encoder_channels(cfg, e);
    for (int blk = 0; blk < 2; ++blk) {
      const std::string n = enc_name(e, blk);
      const int in = blk == 0 ? c_in : c_out;
      b.conv(n + ".conv1", c_out, in, 3);
      b.norm(n + ".norm1", c_out);
      b.conv(n + ".conv2", c_out, c_out, 3);
      b.norm(n + ".norm2", c_out);
      if (blk == 0 && (e > 0 || c_in != c_out)) {
        b.conv(n + ".downsample.conv", c_out, in, 1);
        b.norm(n + ".downsample.norm", c_out);
      }
    }
  }
  for (int d = 0; d < cfg.encoder_depth; ++d) {
    const int m = encoder_channels(cfg, d);
    const int n = d == 0 ? base : encoder_channels(cfg, d - 1);
    const int r = reduced(m);
    const std::string name = dec_name(d);
    b.conv(name + ".conv1", r, m, 1);
    b.norm(name + ".norm1", r);
    b.conv_transpose(name + ".tconv", r, r, 3);
    b.norm(name + ".norm2", r);
    b.conv(name + ".conv2", n, r, 1);
    b.norm(name + ".norm3", n);
  }
  b.conv_transpose("head.tconv1", base, half(base), 3);
  b.norm("head.norm1", half(base));
  b.conv("head.conv", half(base), half(base), 3);
  b.norm("head.norm2", half(base));
  b.conv_transpose("head.tconv2", half(base), cfg.out_channels, 2);
  b.bias("head.tconv2", cfg.out_channels);
  return b.take();
}

void store_config(const NetworkConfig& cfg, std::map<std::string, std::string>& metadata) {
  metadata["rank"] = cfg.rank == Rank::k3D ? "3d" : "2d";
  metadata["in_channels"] = std::to_string(cfg.in_channels);
  metadata["encoder_depth"] = std::to_string(cfg.encoder_depth);
  metadata["base_channels"] = std::to_string(cfg.base_channels);
  metadata["norm"] = cfg.norm == NormType::kInstance ? "instance" : "batch";
  metadata["out_channels"] = std::to_string(cfg.out_channels);
}

NetworkConfig load_config(const std::map<std::string, std::string>& metadata) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw Error(ErrorCode::kCorruptHeader, "weights metadata lacks '" + key + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    try {
      return std::stoi(get(key));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kCorruptHeader, "weights metadata '" + key + "' is not an integer");
    }
  };
  NetworkConfig cfg;
  const auto& rank = get("rank");
  if (rank != "3d" && rank != "2d") throw Error(ErrorCode::kCorruptHeader, "unknown rank " + rank);
  cfg.rank = rank == "3d" ? Rank::k3D : Rank::k2D;
  cfg.in_channels = get_int("in_channels");
  cfg.encoder_depth = get_int("encoder_depth");
  cfg.base_channels = get_int("base_channels");
  const auto& norm = get("norm");
  if (norm != "instance" && norm != "batch") throw Error(ErrorCode::kCorruptHeader, "unknown norm " + norm);
  cfg.norm = norm == "instance" ? NormType::kInstance : NormType::kBatch;
  cfg.out_channels = get_int("out_channels");
  cfg.validate();
  return cfg;
}

NetworkWeights build_linknet(const NetworkConfig& cfg, Rng& rng) {
  NetworkWeights w;
  for (auto& spec : linknet_layout(cfg)) {
    NamedTensor t{spec.name, spec.shape, std::vector<float>(static_cast<std::size_t>(spec.size()), 0.0f)};
    switch (spec.kind) {
      case ParamKind::kWeight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
        for (auto& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::kGamma:
        std::fill(t.values.begin(), t.values.end(), 1.0f);
        break;
      case ParamKind::kBeta:
      case ParamKind::kBias:
        break;
    }
    w.tensors.push_back(std::move(t));
  }
  store_config(cfg, w.metadata);
  return w;
}

ParamGroup param_group(std::string_view name) {
  if (name.starts_with("init.") || name.starts_with("enc")) return ParamGroup::kEncoder;
  if (name.starts_with("dec")) return ParamGroup::kDecoder;
  if (name.starts_with("head.")) return ParamGroup::kHead;
  throw Error(ErrorCode::kInvalidArgument, "parameter '" + std::string(name) + "' belongs to no group");
}

template <typename T>
LinkNet<T>::LinkNet(NetworkConfig cfg, ParamView<T> params)
    : cfg_(cfg), layout_(linknet_layout(cfg)), params_(std::move(params)) {
  if (params_.size() != layout_.size()) throw Error(ErrorCode::kShapeMismatch, "parameter count differs from layout");
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (static_cast<std::int64_t>(params_[i].size()) != layout_[i].size()) {
      throw Error(ErrorCode::kShapeMismatch, "parameter " + layout_[i].name + " has the wrong size");
    }
  }
}

namespace {

template <typename T>
int build_graph(Tape<T>& tape, const NetworkConfig& cfg, const std::vector<ParamSpec>& layout,
                const Tensor<T>& x) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < layout.size(); ++i) index[layout[i].name] = static_cast<int>(i);
  auto p = [&](const std::string& name) { return index.at(name); };
  const Rank rank = cfg.rank;
  const auto kind = cfg.norm == NormType::kInstance ? nn::NormKind::kInstance : nn::NormKind::kBatch;
  auto norm = [&](int v, const std::string& name) { return tape.norm(v, p(name + ".gamma"), p(name + ".beta"), kind); };
  auto cbr = [&](int v, const std::string& conv, const std::string& nrm, int c_out, const ConvGeom& g) {
    return tape.relu(norm(tape.conv(v, p(conv + ".weight"), c_out, g), nrm));
  };

  const int base = cfg.base_channels;
  const int input = tape.leaf(x);
  const int init = cbr(input, "init.conv", "init.norm", base, geom(rank, 7, 2, 3));
  const Dims init_size = tape.value(init).spatial;
  const int pooled = tape.maxpool(init, geom(rank, 3, 2, 1));

  std::vector<int> enc;
  int cur = pooled;
  for (int e = 0; e < cfg.encoder_depth; ++e) {
    const int c_out = encoder_channels(cfg, e);
    for (int blk = 0; blk < 2; ++blk) {
      const std::string n = enc_name(e, blk);
      const int stride = (blk == 0 && e > 0) ? 2 : 1;
      const int h = cbr(cur, n + ".conv1", n + ".norm1", c_out, geom(rank, 3, stride, 1));
      const int h2 = norm(tape.conv(h, p(n + ".conv2.weight"), c_out, geom(rank, 3, 1, 1)), n + ".norm2");
      int skip = cur;
      if (blk == 0 && (e > 0 || tape.value(cur).channels != c_out)) {
        skip = norm(tape.conv(cur, p(n + ".downsample.conv.weight"), c_out, geom(rank, 1, stride, 0)),
                    n + ".downsample.norm");
      }
      cur = tape.relu(tape.add(h2, skip));
    }
    enc.push_back(cur);
  }

  auto decoder = [&](int v, int d, const Dims& out_size) {
    const int m = encoder_channels(cfg, d);
    const int n = d == 0 ? base : encoder_channels(cfg, d - 1);
    const int r = reduced(m);
    const std::string name = dec_name(d);
    int h = cbr(v, name + ".conv1", name + ".norm1", r, geom(rank, 1, 1, 0));
    const ConvGeom up = d == 0 ? geom(rank, 3, 1, 1) : geom(rank, 3, 2, 1);
    h = tape.relu(norm(tape.conv_transpose(h, p(name + ".tconv.weight"), r, up, out_size), name + ".norm2"));
    return cbr(h, name + ".conv2", name + ".norm3", n, geom(rank, 1, 1, 0));
  };

  cur = enc.back();
  for (int d = cfg.encoder_depth - 1; d >= 1; --d) {
    cur = tape.add(enc[d - 1], decoder(cur, d, tape.value(enc[d - 1]).spatial));
  }
  cur = tape.add(pooled, decoder(cur, 0, tape.value(pooled).spatial));

  const int hb = half(base);
  int h = tape.conv_transpose(cur, p("head.tconv1.weight"), hb, geom(rank, 3, 2, 1), init_size);
  h = tape.relu(norm(h, "head.norm1"));
  h = cbr(h, "head.conv", "head.norm2", hb, geom(rank, 3, 1, 1));
  h = tape.conv_transpose(h, p("head.tconv2.weight"), cfg.out_channels, geom(rank, 2, 2, 0), x.spatial);
  return tape.bias(h, p("head.tconv2.bias"));
}

void check_input(const NetworkConfig& cfg, const Dims& s, std::int64_t channels) {
  if (channels != cfg.in_channels) throw Error(ErrorCode::kShapeMismatch, "input channel count differs from config");
  const int axes = cfg.rank == Rank::k3D ? 3 : 2;
  if (cfg.rank == Rank::k2D && s[2] != 1) throw Error(ErrorCode::kShapeMismatch, "2D network needs z extent 1");
  for (int a = 0; a < axes; ++a) {
    if (s[a] < 2 || s[a] % 2 != 0) throw Error(ErrorCode::kShapeMismatch, "spatial input extents must be even");
  }
}

}  // namespace

template <typename T>
nn::Tensor<T> LinkNet<T>::forward(const nn::Tensor<T>& x) const {
  check_input(cfg_, x.spatial, x.channels);
  Tape<T> tape(params_, false);
  const int out = build_graph(tape, cfg_, layout_, x);
  return tape.value(out);
}

template <typename T>
GradientResult<T> LinkNet<T>::gradients(const nn::Tensor<T>& x, const nn::Tensor<T>& target,
                                        const LossConfig& loss) const {
  check_input(cfg_, x.spatial, x.channels);
  if (target.batch != x.batch || target.channels != cfg_.out_channels || target.spatial != x.spatial) {
    throw Error(ErrorCode::kShapeMismatch, "target shape differs from network output");
  }
  Tape<T> tape(params_, true);
  const int out = build_graph(tape, cfg_, layout_, x);
  nn::Tensor<T> dlogits;
  GradientResult<T> r;
  r.loss = generalized_dice_focal_loss(tape.value(out), target, loss, &dlogits);
  r.grads = tape.backward(out, std::move(dlogits));
  return r;
}

template class LinkNet<float>;
template class LinkNet<double>;

ParamView<float> param_view(const NetworkWeights& w) {
  ParamView<float> v;
  v.reserve(w.tensors.size());
  for (const auto& t : w.tensors) v.emplace_back(t.values);
  return v;
}

nn::Tensor<float> forward(const NetworkWeights& w, const nn::Tensor<float>& x) {
  return LinkNet<float>(load_config(w.metadata), param_view(w)).forward(x);
}

GradientResult<float> gradients(const NetworkWeights& w, const nn::Tensor<float>& x, const nn::Tensor<float>& target,
                                const LossConfig& loss) {
  return LinkNet<float>(load_config(w.metadata), param_view(w)).gradients(x, target, loss);
}

}  // namespace deepbet
