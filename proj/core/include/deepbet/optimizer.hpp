#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace deepbet {

/// Rectified Adam with decoupled weight decay, wrapped in LookAhead.
struct RangerConfig {
  double beta1 = 0.95;
  double beta2 = 0.99;
  double eps = 1e-6;
  double weight_decay = 0.01;
  /// Rectification switches on once the SMA length exceeds this.
  double sma_threshold = 4.0;
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;

  void validate() const;
};

/// Optimizer state over a list of parameter tensors. Master copies and
/// moments are kept in double precision.
class Ranger {
 public:
  Ranger(std::vector<std::vector<double>> params, RangerConfig cfg);

  /// One update with a learning rate per tensor. Throws NonFiniteGradient
  /// before touching any state if a gradient is NaN or infinite.
  template <typename G>
  void step(const std::vector<std::vector<G>>& grads, std::span<const double> lrs);

  const std::vector<std::vector<double>>& fast() const { return fast_; }
  const std::vector<std::vector<double>>& slow() const { return slow_; }
  std::int64_t steps() const { return step_; }
  const RangerConfig& config() const { return cfg_; }

 private:
  RangerConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> fast_;
  std::vector<std::vector<double>> slow_;
  std::vector<std::vector<double>> avg_;
  std::vector<std::vector<double>> sqr_;
};

/// Flat then cosine-annealed learning rate: base_lr for
/// step < floor(flat_fraction * total_steps), then
/// base_lr * (1 + cos(pi * t)) / 2 with t running to 1 at the last step.
double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double flat_fraction);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename G>
double clip_global_norm(std::vector<std::vector<G>>& grads, double max_norm);

}  // namespace deepbet
