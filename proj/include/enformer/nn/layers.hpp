#pragma once

#include "enformer/core/ops.hpp"
#include "enformer/nn/module.hpp"

namespace enformer {

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad, Rng& rng,
         bool bias = true, int64_t groups = 1)
      : stride_(stride), pad_(pad), groups_(groups) {
    if (in_ch % groups != 0 || out_ch % groups != 0)
      throw std::invalid_argument("conv2d layer: channels not divisible by groups");
    weight = this->add_param("weight", kaiming_conv_init<T>(out_ch, in_ch / groups, k, k, groups, rng));
    if (bias) this->bias = this->add_param("bias", Tensor<T>({out_ch}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride_, pad_, groups_); }

  Var<T> weight, bias;

 private:
  int64_t stride_, pad_, groups_;
};

inline int64_t gn_group_count(int64_t channels) {
  int64_t g = std::min<int64_t>(32, channels);
  return channels % g == 0 ? g : channels;
}

template <typename T>
class GroupNorm : public Module<T> {
 public:
  explicit GroupNorm(int64_t channels, T eps = T(1e-5))
      : groups_(gn_group_count(channels)), eps_(eps) {
    gamma = this->add_param("gamma", Tensor<T>({channels}, T(1)));
    beta = this->add_param("beta", Tensor<T>({channels}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::group_norm(x, gamma, beta, groups_, eps_); }

  Var<T> gamma, beta;
  int64_t groups() const { return groups_; }

 private:
  int64_t groups_;
  T eps_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int64_t channels, T eps = T(1e-5), T momentum = T(0.1)) : eps_(eps), momentum_(momentum) {
    gamma = this->add_param("gamma", Tensor<T>({channels}, T(1)));
    beta = this->add_param("beta", Tensor<T>({channels}));
    running_mean = this->add_buffer("running_mean", Tensor<T>({channels}));
    running_var = this->add_buffer("running_var", Tensor<T>({channels}, T(1)));
  }

  Var<T> forward(const Var<T>& x) const {
    return ops::batch_norm(x, gamma, beta, *running_mean, *running_var, this->is_training(), momentum_, eps_);
  }

  Var<T> gamma, beta;
  Tensor<T>* running_mean;
  Tensor<T>* running_var;

 private:
  T eps_, momentum_;
};

template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(int64_t channels, T eps = T(1e-6)) : eps_(eps) {
    gamma = this->add_param("gamma", Tensor<T>({channels}, T(1)));
    beta = this->add_param("beta", Tensor<T>({channels}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta, eps_); }

  Var<T> gamma, beta;

 private:
  T eps_;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int64_t in_f, int64_t out_f, Rng& rng, bool bias = true) {
    weight = this->add_param("weight", trunc_normal_init<T>({in_f, out_f}, 0.02, rng));
    if (bias) this->bias = this->add_param("bias", Tensor<T>({out_f}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::linear(x, weight, bias); }

  Var<T> weight, bias;
};

}  // namespace enformer
