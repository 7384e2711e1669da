#pragma once

#include <memory>
#include <string>
#include <vector>

#include "enformer/core/graph.hpp"
#include "enformer/core/rng.hpp"
#include "enformer/core/tensor.hpp"

namespace enformer {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> param;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* buffer;
};

// Base for everything with parameters. Children and params are registered at
// construction in a fixed order, so parameter enumeration (and therefore
// checkpoints and optimizer state) is deterministic.
template <typename T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    for (const auto& [name, p] : params_) out.push_back({join(prefix, name), p});
    for (const auto& [name, c] : children_) c->collect_params(join(prefix, name), out);
  }

  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    for (auto& [name, b] : buffers_) out.push_back({join(prefix, name), b.get()});
    for (auto& [name, c] : children_) c->collect_buffers(join(prefix, name), out);
  }

  std::vector<NamedParam<T>> named_params() const {
    std::vector<NamedParam<T>> out;
    collect_params("", out);
    return out;
  }

  std::vector<NamedBuffer<T>> named_buffers() {
    std::vector<NamedBuffer<T>> out;
    collect_buffers("", out);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : named_params()) n += p.param.value().numel();
    return n;
  }

  void set_training(bool on) {
    training_ = on;
    for (auto& [name, c] : children_) c->set_training(on);
  }
  bool is_training() const { return training_; }

  void zero_grad() {
    for (auto& p : named_params()) {
      Var<T> v = p.param;
      v.zero_grad();
    }
  }

 protected:
  Var<T> add_param(const std::string& name, Tensor<T> init) {
    Var<T> v(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
  }

  Tensor<T>* add_buffer(const std::string& name, Tensor<T> init) {
    buffers_.emplace_back(name, std::make_unique<Tensor<T>>(std::move(init)));
    return buffers_.back().second.get();
  }

  void add_child(const std::string& name, Module<T>* child) { children_.emplace_back(name, child); }

  // construct a child held by unique_ptr and register it in one go
  template <typename M, typename... Args>
  std::unique_ptr<M> make_child(const std::string& name, Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    add_child(name, m.get());
    return m;
  }

 private:
  static std::string join(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    return a + "." + b;
  }

  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
  std::vector<std::pair<std::string, Module<T>*>> children_;
  bool training_ = true;
};

// ---- initializers ----

template <typename T>
Tensor<T> kaiming_conv_init(int64_t oc, int64_t icg, int64_t kh, int64_t kw, int64_t groups, Rng& rng) {
  // fan-out variant: std = sqrt(2 / (oc * kh * kw / groups))
  double fan_out = static_cast<double>(oc) * kh * kw / static_cast<double>(groups);
  double std = std::sqrt(2.0 / fan_out);
  Tensor<T> w({oc, icg, kh, kw});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
  return w;
}

template <typename T>
Tensor<T> kaiming_fanin_conv_init(int64_t oc, int64_t icg, int64_t kh, int64_t kw, Rng& rng) {
  // fan-in variant for projections with few output channels, where fan-out
  // scaling degenerates (fan_out == 1 gives std sqrt(2))
  double fan_in = static_cast<double>(icg) * kh * kw;
  double std = std::sqrt(2.0 / fan_in);
  Tensor<T> w({oc, icg, kh, kw});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
  return w;
}

template <typename T>
Tensor<T> trunc_normal_init(Shape shape, double std, Rng& rng) {
  Tensor<T> w(std::move(shape));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.truncated_normal(0.0, std));
  return w;
}

}  // namespace enformer
