#include "deepbet/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "deepbet/error.hpp"

namespace deepbet {

void RangerConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw Error(ErrorCode::kInvalidArgument, "eps must be positive");
  if (weight_decay < 0) throw Error(ErrorCode::kInvalidArgument, "weight_decay must be >= 0");
  if (lookahead_k < 1) throw Error(ErrorCode::kInvalidArgument, "lookahead_k must be >= 1");
  if (!(lookahead_alpha >= 0 && lookahead_alpha <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "lookahead_alpha must lie in [0, 1]");
  }
}

Ranger::Ranger(std::vector<std::vector<double>> params, RangerConfig cfg)
    : cfg_(cfg), fast_(std::move(params)) {
  cfg_.validate();
  slow_ = fast_;
  avg_.resize(fast_.size());
  sqr_.resize(fast_.size());
  for (std::size_t i = 0; i < fast_.size(); ++i) {
    avg_[i].assign(fast_[i].size(), 0.0);
    sqr_[i].assign(fast_[i].size(), 0.0);
  }
}

template <typename G>
void Ranger::step(const std::vector<std::vector<G>>& grads, std::span<const double> lrs) {
  if (grads.size() != fast_.size() || lrs.size() != fast_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient table does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != fast_[i].size()) throw Error(ErrorCode::kShapeMismatch, "gradient tensor size");
    for (G g : grads[i]) {
      if (!std::isfinite(static_cast<double>(g))) throw Error(ErrorCode::kNonFiniteGradient, "gradient is not finite");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double debias1 = 1.0 - std::pow(b1, t);
  const double debias2 = 1.0 - std::pow(b2, t);
  const double r_inf = 2.0 / (1.0 - b2) - 1.0;
  const double r = r_inf - 2.0 * t * std::pow(b2, t) / debias2;
  const bool rectify = r > cfg_.sma_threshold;
  const double v = rectify ? std::sqrt((r - 4.0) * (r - 2.0) * r_inf / ((r_inf - 4.0) * (r_inf - 2.0) * r)) : 0.0;

  for (std::size_t i = 0; i < fast_.size(); ++i) {
    const double lr = lrs[i];
    auto& p = fast_[i];
    auto& m = avg_[i];
    auto& s = sqr_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = static_cast<double>(grads[i][j]);
      p[j] *= 1.0 - lr * cfg_.weight_decay;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      s[j] = b2 * s[j] + (1.0 - b2) * g * g;
      if (rectify) {
        p[j] -= lr * v / debias1 * m[j] / (std::sqrt(s[j] / debias2) + cfg_.eps);
      } else {
        p[j] -= lr / debias1 * m[j];
      }
    }
  }

  if (step_ % cfg_.lookahead_k == 0) {
    for (std::size_t i = 0; i < fast_.size(); ++i) {
      for (std::size_t j = 0; j < fast_[i].size(); ++j) {
        slow_[i][j] += cfg_.lookahead_alpha * (fast_[i][j] - slow_[i][j]);
        fast_[i][j] = slow_[i][j];
      }
    }
  }
}

template void Ranger::step<float>(const std::vector<std::vector<float>>&, std::span<const double>);
template void Ranger::step<double>(const std::vector<std::vector<double>>&, std::span<const double>);

double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double flat_fraction) {
  if (total_steps < 1) throw Error(ErrorCode::kInvalidArgument, "total_steps must be >= 1");
  const auto flat = static_cast<std::int64_t>(std::floor(flat_fraction * static_cast<double>(total_steps)));
  if (step < flat) return base_lr;
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - 1 - flat));
  const double t = std::min(1.0, static_cast<double>(step - flat) / span);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

template <typename G>
double clip_global_norm(std::vector<std::vector<G>>& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& g : grads) {
    for (G v : g) ss += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0) {
    const double k = max_norm / norm;
    for (auto& g : grads) {
      for (G& v : g) v = static_cast<G>(v * k);
    }
  }
  return norm;
}

template double clip_global_norm<float>(std::vector<std::vector<float>>&, double);
template double clip_global_norm<double>(std::vector<std::vector<double>>&, double);

}  // namespace deepbet
