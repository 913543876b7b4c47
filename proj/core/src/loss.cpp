#include "deepbet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace deepbet {
namespace {

// Sigmoid and both log-probabilities from one exp and one log1p.
struct Logistic {
  double p;
  double log_p;
  double log_q;
};

Logistic logistic(double z) {
  const double e = std::exp(-std::abs(z));
  const double l = std::log1p(e);
  if (z >= 0) return {1.0 / (1.0 + e), -l, -z - l};
  return {e / (1.0 + e), z - l, -l};
}

double power(double base, double gamma) {
  if (gamma == 2.0) return base * base;
  if (gamma == 1.0) return base;
  if (gamma == 0.0) return 1.0;
  return std::pow(base, gamma);
}

}  // namespace

LossTerms dice_focal_terms(std::span<const double> logits, std::span<const double> target, const LossConfig& cfg,
                           std::span<double> dlogits, double grad_scale) {
  if (logits.size() != target.size() || logits.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "loss inputs differ in size");
  }
  if (!dlogits.empty() && dlogits.size() != logits.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient buffer size");
  }
  const std::size_t n = logits.size();
  const double gamma = cfg.focal_gamma;

  double sum_t = 0.0;
  for (double t : target) sum_t += t;
  const double sum_bg = static_cast<double>(n) - sum_t;
  double w_fg = sum_t > 0 ? 1.0 / (sum_t * sum_t) : 0.0;
  double w_bg = sum_bg > 0 ? 1.0 / (sum_bg * sum_bg) : 0.0;
  // An empty class takes the largest finite weight.
  if (sum_t <= 0) w_fg = w_bg;
  if (sum_bg <= 0) w_bg = w_fg;

  std::vector<Logistic> lg(n);
  double inter = 0.0;
  double denom = 0.0;
  double focal = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = target[i];
    lg[i] = logistic(logits[i]);
    const double p = lg[i].p;
    inter += w_fg * p * t + w_bg * (1.0 - p) * (1.0 - t);
    denom += w_fg * (p + t) + w_bg * ((1.0 - p) + (1.0 - t));
    if (t > 0) focal -= t * power(1.0 - p, gamma) * lg[i].log_p;
    if (t < 1) focal -= (1.0 - t) * power(p, gamma) * lg[i].log_q;
  }
  const double num = 2.0 * inter + cfg.smooth;
  const double den = denom + cfg.smooth;
  LossTerms out;
  out.gdl = 1.0 - num / den;
  out.focal = focal / static_cast<double>(n);
  out.total = cfg.scale * (out.gdl + cfg.lambda_focal * out.focal);

  if (!dlogits.empty()) {
    const double k = cfg.scale * grad_scale;
    const double ddenom = w_fg - w_bg;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = target[i];
      const double pi = lg[i].p;
      const double dinter = w_fg * t - w_bg * (1.0 - t);
      const double dgdl_dp = -(2.0 * dinter * den - num * ddenom) / (den * den);
      double dfocal = 0.0;
      if (t > 0) {
        const double q_g = power(1.0 - pi, gamma);
        dfocal += t * (gamma * pi * q_g * lg[i].log_p - q_g * (1.0 - pi));
      }
      if (t < 1) {
        const double p_g = power(pi, gamma);
        dfocal += (1.0 - t) * (-gamma * p_g * (1.0 - pi) * lg[i].log_q + p_g * pi);
      }
      dlogits[i] = k * (dgdl_dp * pi * (1.0 - pi) + cfg.lambda_focal * dfocal / static_cast<double>(n));
    }
  }
  return out;
}

template <typename T>
double generalized_dice_focal_loss(const nn::Tensor<T>& logits, const nn::Tensor<T>& target, const LossConfig& cfg,
                                   nn::Tensor<T>* dlogits) {
  if (!logits.same_shape(target)) throw Error(ErrorCode::kShapeMismatch, "logits and target shapes differ");
  if (dlogits != nullptr) *dlogits = nn::Tensor<T>(logits.batch, logits.channels, logits.spatial);
  const auto per = static_cast<std::size_t>(logits.sample_size());
  std::vector<double> z(per);
  std::vector<double> t(per);
  std::vector<double> g(dlogits != nullptr ? per : 0);
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(logits.batch);
  for (std::int64_t b = 0; b < logits.batch; ++b) {
    std::copy_n(logits.sample(b), per, z.begin());
    std::copy_n(target.sample(b), per, t.begin());
    total += dice_focal_terms(z, t, cfg, g, inv_batch).total;
    if (dlogits != nullptr) std::copy(g.begin(), g.end(), dlogits->sample(b));
  }
  total *= inv_batch;
  if (!std::isfinite(total)) throw Error(ErrorCode::kNonFiniteLoss, "loss is not finite");
  return total;
}

template double generalized_dice_focal_loss<float>(const nn::Tensor<float>&, const nn::Tensor<float>&,
                                                   const LossConfig&, nn::Tensor<float>*);
template double generalized_dice_focal_loss<double>(const nn::Tensor<double>&, const nn::Tensor<double>&,
                                                    const LossConfig&, nn::Tensor<double>*);

}  // namespace deepbet
