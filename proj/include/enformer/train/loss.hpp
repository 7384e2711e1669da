#pragma once

#include <stdexcept>

#include "enformer/core/graph.hpp"
#include "enformer/core/ops.hpp"

namespace enformer {

namespace detail {

template <typename T>
inline void check_loss_shapes(const Var<T>& pred, const Var<T>& target, const char* who) {
  if (pred.value().shape() != target.value().shape())
    throw std::invalid_argument(std::string(who) + ": prediction and target shapes differ");
}

}  // namespace detail

// Soft dice loss over the whole tensor: 1 - (2*sum(P*Y) + eps) / (sum(P) + sum(Y) + eps).
// The +1 smoothing keeps the value in [0,1) and defined when both maps are empty.
template <typename T>
Var<T> dice_loss(const Var<T>& pred, const Var<T>& target, T eps = T(1)) {
  detail::check_loss_shapes(pred, target, "dice_loss");
  auto inter = ops::sum_all(ops::mul(pred, target));
  auto num = ops::add_scalar(ops::scale(inter, T(2)), eps);
  auto den = ops::add_scalar(ops::add(ops::sum_all(pred), ops::sum_all(target)), eps);
  return ops::one_minus(ops::div(num, den));
}

// Mean binary cross-entropy. Probabilities are clamped to [1e-7, 1-1e-7] so the
// loss stays finite even for saturated predictions.
template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Var<T>& target) {
  detail::check_loss_shapes(pred, target, "bce_loss");
  auto p = ops::clamp(pred, T(1e-7), T(1) - T(1e-7));
  auto pos = ops::mul(target, ops::log_op(p));
  auto neg = ops::mul(ops::one_minus(target), ops::log_op(ops::one_minus(p)));
  return ops::neg(ops::mean_all(ops::add(pos, neg)));
}

// Training objective: average of dice and BCE.
template <typename T>
Var<T> combined_loss(const Var<T>& pred, const Var<T>& target) {
  return ops::scale(ops::add(dice_loss(pred, target), bce_loss(pred, target)), T(0.5));
}

}  // namespace enformer
