#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "enformer/core/tensor.hpp"
#include "enformer/nn/module.hpp"
#include "enformer/nn/weights.hpp"

namespace enformer {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay. Moment buffers are kept per parameter and
// can be exported/imported as weight records for checkpointing.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<T>> params, AdamWConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.param.value().shape());
      v_.emplace_back(p.param.value().shape());
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Var<T> p = params_[i].param;
      const Tensor<T>& g = p.grad();
      if (g.empty()) continue;  // parameter untouched by the last graph
      Tensor<T>& w = p.mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < w.numel(); ++j) {
        double gj = static_cast<double>(g[j]);
        double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        w[j] = static_cast<T>(static_cast<double>(w[j]) -
                              cfg_.lr * (update + cfg_.weight_decay * static_cast<double>(w[j])));
      }
    }
  }

  // Moments and the step counter as weight records, names prefixed "opt.".
  std::vector<WeightRecord> state_records() const {
    std::vector<WeightRecord> out;
    out.reserve(params_.size() * 2 + 1);
    for (size_t i = 0; i < params_.size(); ++i) {
      out.push_back({"opt.m." + params_[i].name, m_[i].shape(),
                     std::vector<double>(m_[i].vec().begin(), m_[i].vec().end())});
      out.push_back({"opt.v." + params_[i].name, v_[i].shape(),
                     std::vector<double>(v_[i].vec().begin(), v_[i].vec().end())});
    }
    out.push_back({"opt.t", Shape{1}, {static_cast<double>(t_)}});
    return out;
  }

  void load_state(const std::vector<WeightRecord>& records) {
    bool saw_t = false;
    for (const auto& r : records) {
      if (r.name == "opt.t") {
        t_ = static_cast<int64_t>(std::llround(r.data.at(0)));
        saw_t = true;
        continue;
      }
      bool is_m = r.name.rfind("opt.m.", 0) == 0;
      bool is_v = r.name.rfind("opt.v.", 0) == 0;
      if (!is_m && !is_v)
        throw std::runtime_error("optimizer state: unexpected record '" + r.name + "'");
      std::string pname = r.name.substr(6);
      Tensor<T>* slot = nullptr;
      for (size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == pname) slot = is_m ? &m_[i] : &v_[i];
      if (!slot) throw std::runtime_error("optimizer state: no parameter named '" + pname + "'");
      if (slot->shape() != r.shape)
        throw std::runtime_error("optimizer state: shape mismatch for '" + r.name + "'");
      for (int64_t j = 0; j < slot->numel(); ++j)
        (*slot)[j] = static_cast<T>(r.data[static_cast<size_t>(j)]);
    }
    if (!saw_t) throw std::runtime_error("optimizer state: missing step counter 'opt.t'");
  }

 private:
  std::vector<NamedParam<T>> params_;
  AdamWConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace enformer
