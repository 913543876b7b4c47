#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepbet/loss.hpp"
#include "deepbet/rng.hpp"
#include "deepbet/tensor.hpp"

namespace deepbet {

enum class Rank { k2D, k3D };
enum class NormType { kInstance, kBatch };

struct NetworkConfig {
  Rank rank = Rank::k3D;
  int in_channels = 1;
  int encoder_depth = 4;
  int base_channels = 16;
  NormType norm = NormType::kInstance;
  int out_channels = 1;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;

  /// Reference 3D model: LinkNet channels divided by four.
  static NetworkConfig linknet_3d(int base = 16);
  /// 2D model on five neighboring slices.
  static NetworkConfig linknet_2d(int base = 64);
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  bool operator==(const NamedTensor&) const = default;
};

/// Ordered parameter table plus free-form string metadata (the network
/// config is stored there so a file is self-describing).
struct NetworkWeights {
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> metadata;

  const NamedTensor* find(std::string_view name) const;
  NamedTensor* find(std::string_view name);
  std::int64_t parameter_count() const;
  bool operator==(const NetworkWeights&) const = default;
};

enum class ParamKind { kWeight, kGamma, kBeta, kBias };

struct ParamSpec {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::int64_t fan_in = 1;
  ParamKind kind = ParamKind::kWeight;

  std::int64_t size() const;
};

/// Parameter schedule of the LinkNet for a config, in storage order.
std::vector<ParamSpec> linknet_layout(const NetworkConfig& cfg);

/// He-uniform convolutions (bound sqrt(6 / fan_in)), unit scale, zero
/// shift and zero output bias.
NetworkWeights build_linknet(const NetworkConfig& cfg, Rng& rng);

void store_config(const NetworkConfig& cfg, std::map<std::string, std::string>& metadata);
NetworkConfig load_config(const std::map<std::string, std::string>& metadata);

/// Optimizer groups for per-group learning-rate multipliers.
enum class ParamGroup { kEncoder, kDecoder, kHead };
ParamGroup param_group(std::string_view name);

template <typename T>
using ParamView = std::vector<std::span<const T>>;

template <typename T>
struct GradientResult {
  double loss = 0.0;
  std::vector<std::vector<T>> grads;  // aligned with the layout
};

/// LinkNet bound to a parameter set. Spatial input dims must be even on
/// every convolved axis; decoder outputs are sized to match their skips.
template <typename T>
class LinkNet {
 public:
  LinkNet(NetworkConfig cfg, ParamView<T> params);

  const NetworkConfig& config() const { return cfg_; }

  /// Logits with the input's spatial dims and out_channels channels.
  nn::Tensor<T> forward(const nn::Tensor<T>& x) const;

  /// Loss of forward(x) against target and its gradient for every parameter.
  GradientResult<T> gradients(const nn::Tensor<T>& x, const nn::Tensor<T>& target, const LossConfig& loss) const;

 private:
  NetworkConfig cfg_;
  std::vector<ParamSpec> layout_;
  ParamView<T> params_;
};

ParamView<float> param_view(const NetworkWeights& w);

nn::Tensor<float> forward(const NetworkWeights& w, const nn::Tensor<float>& x);
GradientResult<float> gradients(const NetworkWeights& w, const nn::Tensor<float>& x, const nn::Tensor<float>& target,
                                const LossConfig& loss);

}  // namespace deepbet
