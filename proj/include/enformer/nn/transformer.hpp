#pragma once

#include <tuple>

#include "enformer/nn/encoder.hpp"

// Pyramid transformer encoder: overlapping patch embedding, spatial-reduction
// attention and a convolutional feed-forward per stage. The named configs
// cover the published B-series widths plus a tiny test config; co-scale
// backbones are served through the same interface with externally supplied
// weights (see backbone.hpp).

namespace enformer {

struct PvtStageConfig {
  int64_t dim, depth, heads, sr, mlp_ratio;
};

struct PvtConfig {
  std::array<PvtStageConfig, 4> stages;
};

inline PvtConfig pvt_config_for(const std::string& variant) {
  if (variant == "b3" || variant.empty())
    return {{{{64, 3, 1, 8, 8}, {128, 4, 2, 4, 8}, {320, 18, 5, 2, 4}, {512, 3, 8, 1, 4}}}};
  if (variant == "b0")
    return {{{{32, 2, 1, 8, 8}, {64, 2, 2, 4, 8}, {160, 2, 5, 2, 4}, {256, 2, 8, 1, 4}}}};
  if (variant == "tiny")
    return {{{{16, 1, 1, 8, 2}, {32, 1, 2, 4, 2}, {64, 1, 4, 2, 2}, {128, 1, 8, 1, 2}}}};
  throw std::invalid_argument("pvtv2: unknown variant '" + variant + "'");
}

template <typename T>
class SpatialReductionAttention : public Module<T> {
 public:
  SpatialReductionAttention(int64_t dim, int64_t heads, int64_t sr, Rng& rng) : heads_(heads), sr_(sr) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    scale_ = T(1) / std::sqrt(static_cast<T>(dim / heads));
    q_lin = this->template make_child<Linear<T>>("q", dim, dim, rng);
    k_lin = this->template make_child<Linear<T>>("k", dim, dim, rng);
    v_lin = this->template make_child<Linear<T>>("v", dim, dim, rng);
    proj = this->template make_child<Linear<T>>("proj", dim, dim, rng);
    if (sr > 1) {
      sr_conv = this->template make_child<Conv2d<T>>("sr_conv", dim, dim, sr, sr, 0, rng);
      sr_norm = this->template make_child<LayerNorm<T>>("sr_norm", dim);
    }
  }

  Var<T> attention_probs(const Var<T>& x, int64_t h, int64_t w) const {
    auto q = ops::split_heads(q_lin->forward(x), heads_);
    Var<T> xr = reduce(x, h, w);
    auto k = ops::split_heads(k_lin->forward(xr), heads_);
    return ops::softmax_lastdim(ops::scale(ops::matmul_nt(q, k), scale_));
  }

  Var<T> forward(const Var<T>& x, int64_t h, int64_t w) const {
    auto att = attention_probs(x, h, w);
    Var<T> xr = reduce(x, h, w);
    auto v = ops::split_heads(v_lin->forward(xr), heads_);
    return proj->forward(ops::merge_heads(ops::matmul(att, v), heads_));
  }

  std::unique_ptr<Linear<T>> q_lin, k_lin, v_lin, proj;
  std::unique_ptr<Conv2d<T>> sr_conv;
  std::unique_ptr<LayerNorm<T>> sr_norm;

 private:
  Var<T> reduce(const Var<T>& x, int64_t h, int64_t w) const {
    if (sr_ == 1) return x;
    if (h % sr_ != 0 || w % sr_ != 0)
      throw std::invalid_argument("attention: grid " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by reduction " + std::to_string(sr_));
    auto g = ops::grid_from_tokens(x, h, w);
    auto r = sr_conv->forward(g);
    return sr_norm->forward(ops::tokens_from_grid(r));
  }

  int64_t heads_, sr_;
  T scale_;
};

template <typename T>
class ConvFeedForward : public Module<T> {
 public:
  ConvFeedForward(int64_t dim, int64_t hidden, Rng& rng) {
    fc1 = this->template make_child<Linear<T>>("fc1", dim, hidden, rng);
    dw = this->template make_child<Conv2d<T>>("dwconv", hidden, hidden, 3, 1, 1, rng, true, hidden);
    fc2 = this->template make_child<Linear<T>>("fc2", hidden, dim, rng);
  }

  Var<T> forward(const Var<T>& x, int64_t h, int64_t w) const {
    auto t = fc1->forward(x);
    t = ops::tokens_from_grid(dw->forward(ops::grid_from_tokens(t, h, w)));
    return fc2->forward(ops::gelu(t));
  }

  std::unique_ptr<Linear<T>> fc1, fc2;
  std::unique_ptr<Conv2d<T>> dw;
};

template <typename T>
class TransformerBlock : public Module<T> {
 public:
  TransformerBlock(int64_t dim, int64_t heads, int64_t sr, int64_t mlp_ratio, Rng& rng) {
    norm1 = this->template make_child<LayerNorm<T>>("norm1", dim);
    attn = this->template make_child<SpatialReductionAttention<T>>("attn", dim, heads, sr, rng);
    norm2 = this->template make_child<LayerNorm<T>>("norm2", dim);
    ffn = this->template make_child<ConvFeedForward<T>>("ffn", dim, dim * mlp_ratio, rng);
  }

  Var<T> forward(const Var<T>& x, int64_t h, int64_t w) const {
    auto y = ops::add(x, attn->forward(norm1->forward(x), h, w));
    return ops::add(y, ffn->forward(norm2->forward(y), h, w));
  }

  std::unique_ptr<LayerNorm<T>> norm1, norm2;
  std::unique_ptr<SpatialReductionAttention<T>> attn;
  std::unique_ptr<ConvFeedForward<T>> ffn;
};

template <typename T>
class OverlapPatchEmbed : public Module<T> {
 public:
  OverlapPatchEmbed(int64_t in_ch, int64_t dim, int64_t k, int64_t stride, int64_t pad, Rng& rng) {
    conv = this->template make_child<Conv2d<T>>("conv", in_ch, dim, k, stride, pad, rng);
    norm = this->template make_child<LayerNorm<T>>("norm", dim);
  }

  // returns tokens plus the embedded grid size
  std::tuple<Var<T>, int64_t, int64_t> forward(const Var<T>& x) const {
    auto g = conv->forward(x);
    int64_t h = g.value().dim(2), w = g.value().dim(3);
    return {norm->forward(ops::tokens_from_grid(g)), h, w};
  }

  std::unique_ptr<Conv2d<T>> conv;
  std::unique_ptr<LayerNorm<T>> norm;
};

template <typename T>
class PyramidTransformerEncoder : public Encoder<T> {
 public:
  PyramidTransformerEncoder(const PvtConfig& cfg, Rng& rng) : cfg_(cfg) {
    int64_t in_ch = 3;
    for (int s = 0; s < 4; ++s) {
      const auto& sc = cfg.stages[s];
      std::string p = "stage" + std::to_string(s + 1);
      embeds[s] = this->template make_child<OverlapPatchEmbed<T>>(p + ".embed", in_ch, sc.dim, s == 0 ? 7 : 3,
                                                                  s == 0 ? 4 : 2, s == 0 ? 3 : 1, rng);
      for (int64_t b = 0; b < sc.depth; ++b)
        blocks[s].push_back(this->template make_child<TransformerBlock<T>>(p + ".block" + std::to_string(b), sc.dim,
                                                                           sc.heads, sc.sr, sc.mlp_ratio, rng));
      norms[s] = this->template make_child<LayerNorm<T>>(p + ".norm", sc.dim);
      in_ch = sc.dim;
    }
  }

  StageFeatures<T> encode(const Var<T>& image) override {
    check_encoder_input(image.value());
    StageFeatures<T> out;
    Var<T> x = image;
    for (int s = 0; s < 4; ++s) {
      auto [tokens, h, w] = embeds[s]->forward(x);
      for (auto& b : blocks[s]) tokens = b->forward(tokens, h, w);
      tokens = norms[s]->forward(tokens);
      x = ops::grid_from_tokens(tokens, h, w);
      out.stages[s] = x;
    }
    return out;
  }

  std::array<int64_t, 4> stage_widths() const override {
    return {cfg_.stages[0].dim, cfg_.stages[1].dim, cfg_.stages[2].dim, cfg_.stages[3].dim};
  }

  const PvtConfig& config() const { return cfg_; }

  std::array<std::unique_ptr<OverlapPatchEmbed<T>>, 4> embeds;
  std::array<std::vector<std::unique_ptr<TransformerBlock<T>>>, 4> blocks;
  std::array<std::unique_ptr<LayerNorm<T>>, 4> norms;

 private:
  PvtConfig cfg_;
};

}  // namespace enformer
