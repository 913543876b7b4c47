#pragma once

#include <span>

#include "deepbet/tensor.hpp"

namespace deepbet {

struct LossConfig {
  double lambda_focal = 0.2;
  double focal_gamma = 2.0;
  double smooth = 1e-5;
  /// Overall multiplier on the loss (and therefore on every gradient).
  double scale = 1.0;
};

struct LossTerms {
  double gdl = 0.0;
  double focal = 0.0;
  double total = 0.0;
};

/// Two-class generalized Dice (foreground p, background 1 - p, class
/// weights 1 / (sum target_c)^2) plus lambda times the mean focal term, on
/// one sample. `dlogits`, when non-empty, receives dL/dlogit scaled by
/// `grad_scale`.
LossTerms dice_focal_terms(std::span<const double> logits, std::span<const double> target, const LossConfig& cfg,
                           std::span<double> dlogits = {}, double grad_scale = 1.0);

/// Batch mean of the per-sample loss; fills dlogits when given.
template <typename T>
double generalized_dice_focal_loss(const nn::Tensor<T>& logits, const nn::Tensor<T>& target, const LossConfig& cfg,
                                   nn::Tensor<T>* dlogits = nullptr);

}  // namespace deepbet
