#pragma once

#include <array>

#include "enformer/nn/layers.hpp"

// Residual block algebra shared by every assembly:
//   gsc(x)  = conv3x3(silu(groupnorm(x)))
//   rb(x)   = skip(x) + gsc(gsc(x)), skip = identity or 1x1 projection
//   rb2     = rb(rb(.)), independent parameters
//   le(x)   = up(rb2(x)) to the stride-4 grid
//   d(x,y)  = rb2(concat(x, y))
//   sfa     = d(d(d(e4,e3),e2),e1)            (with le, this is the enhanced
//                                              progressive locality decoder)
//   mlp(x)  = up(relu(bn(conv1x1(x)))) to the stride-4 grid
//   fuse_stage(a,b) = mlp(concat(rb2(a), rb2(b)))
//   fuse_decoder    = mlp(concat(fuse_stage_j, j=1..4))
//   head(x) = sigmoid(conv1x1(rb2(up(x))))    (up targets full resolution)

namespace enformer {

template <typename T>
class Gsc : public Module<T> {
 public:
  Gsc(int64_t in_ch, int64_t out_ch, Rng& rng) {
    norm = this->template make_child<GroupNorm<T>>("norm", in_ch);
    conv = this->template make_child<Conv2d<T>>("conv", in_ch, out_ch, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const { return conv->forward(ops::silu(norm->forward(x))); }

  std::unique_ptr<GroupNorm<T>> norm;
  std::unique_ptr<Conv2d<T>> conv;
};

template <typename T>
class Rb : public Module<T> {
 public:
  Rb(int64_t in_ch, int64_t out_ch, Rng& rng) {
    g1 = this->template make_child<Gsc<T>>("gsc1", in_ch, out_ch, rng);
    g2 = this->template make_child<Gsc<T>>("gsc2", out_ch, out_ch, rng);
    if (in_ch != out_ch) proj = this->template make_child<Conv2d<T>>("proj", in_ch, out_ch, 1, 1, 0, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> h = g2->forward(g1->forward(x));
    Var<T> s = proj ? proj->forward(x) : x;
    return ops::add(s, h);
  }

  std::unique_ptr<Gsc<T>> g1, g2;
  std::unique_ptr<Conv2d<T>> proj;
};

template <typename T>
class Rb2 : public Module<T> {
 public:
  Rb2(int64_t in_ch, int64_t out_ch, Rng& rng) {
    r1 = this->template make_child<Rb<T>>("rb1", in_ch, out_ch, rng);
    r2 = this->template make_child<Rb<T>>("rb2", out_ch, out_ch, rng);
  }

  Var<T> forward(const Var<T>& x) const { return r2->forward(r1->forward(x)); }

  std::unique_ptr<Rb<T>> r1, r2;
};

template <typename T>
Var<T> upsample(const Var<T>& x, int64_t th, int64_t tw) {
  if (th < 1 || tw < 1) throw std::invalid_argument("upsample: non-positive target size");
  return ops::bilinear_resize(x, th, tw);
}

// local emphasis: rb2 then upsample to the stride-4 grid
template <typename T>
class Le : public Module<T> {
 public:
  Le(int64_t in_ch, int64_t width, Rng& rng) {
    body = this->template make_child<Rb2<T>>("rb2", in_ch, width, rng);
  }

  Var<T> forward(const Var<T>& x, int64_t th, int64_t tw) const { return upsample(body->forward(x), th, tw); }

  std::unique_ptr<Rb2<T>> body;
};

template <typename T>
class DBlock : public Module<T> {
 public:
  DBlock(int64_t in_x, int64_t in_y, int64_t width, Rng& rng) {
    body = this->template make_child<Rb2<T>>("rb2", in_x + in_y, width, rng);
  }

  Var<T> forward(const Var<T>& x, const Var<T>& y) const {
    if (x.value().dim(2) != y.value().dim(2) || x.value().dim(3) != y.value().dim(3))
      throw std::invalid_argument("d_block: spatial mismatch " + shape_str(x.value().shape()) + " vs " +
                                  shape_str(y.value().shape()));
    return body->forward(ops::concat_channels<T>({x, y}));
  }

  std::unique_ptr<Rb2<T>> body;
};

// stepwise aggregation over four stride-4 maps, deepest first
template <typename T>
class Sfa : public Module<T> {
 public:
  Sfa(int64_t stage_width, int64_t width, Rng& rng) {
    d43 = this->template make_child<DBlock<T>>("d43", stage_width, stage_width, width, rng);
    d2 = this->template make_child<DBlock<T>>("d2", width, stage_width, width, rng);
    d1 = this->template make_child<DBlock<T>>("d1", width, stage_width, width, rng);
  }

  Var<T> forward(const Var<T>& e1, const Var<T>& e2, const Var<T>& e3, const Var<T>& e4) const {
    return d1->forward(d2->forward(d43->forward(e4, e3), e2), e1);
  }

  std::unique_ptr<DBlock<T>> d43, d2, d1;
};

// conv is bias-free: a bias feeding straight into BN would get zero gradient
template <typename T>
class MlpBlock : public Module<T> {
 public:
  MlpBlock(int64_t in_ch, int64_t width, Rng& rng) {
    conv = this->template make_child<Conv2d<T>>("conv", in_ch, width, 1, 1, 0, rng, /*bias=*/false);
    bn = this->template make_child<BatchNorm2d<T>>("bn", width);
  }

  Var<T> forward(const Var<T>& x, int64_t th, int64_t tw) const {
    return upsample(ops::relu(bn->forward(conv->forward(x))), th, tw);
  }

  std::unique_ptr<Conv2d<T>> conv;
  std::unique_ptr<BatchNorm2d<T>> bn;
};

template <typename T>
class FuseStage : public Module<T> {
 public:
  FuseStage(int64_t c1, int64_t c2, int64_t width, Rng& rng) {
    rb_conv = this->template make_child<Rb2<T>>("rb2_conv", c1, c1, rng);
    rb_tr = this->template make_child<Rb2<T>>("rb2_tr", c2, c2, rng);
    mlp = this->template make_child<MlpBlock<T>>("mlp", c1 + c2, width, rng);
  }

  // convolution-branch features occupy the leading channels
  Var<T> forward(const Var<T>& e1j, const Var<T>& e2j, int64_t th, int64_t tw) const {
    if (e1j.value().dim(2) != e2j.value().dim(2) || e1j.value().dim(3) != e2j.value().dim(3))
      throw std::invalid_argument("fuse_stage: spatial mismatch " + shape_str(e1j.value().shape()) + " vs " +
                                  shape_str(e2j.value().shape()));
    return mlp->forward(ops::concat_channels<T>({rb_conv->forward(e1j), rb_tr->forward(e2j)}), th, tw);
  }

  std::unique_ptr<Rb2<T>> rb_conv, rb_tr;
  std::unique_ptr<MlpBlock<T>> mlp;
};

template <typename T>
class FuseDecoder : public Module<T> {
 public:
  // c1/c2: per-stage channel widths of the two encoders, shallow to deep
  FuseDecoder(std::array<int64_t, 4> c1, std::array<int64_t, 4> c2, int64_t width, Rng& rng) {
    for (int j = 0; j < 4; ++j)
      stages[j] = this->template make_child<FuseStage<T>>("stage" + std::to_string(j + 1), c1[j], c2[j], width, rng);
    mlp = this->template make_child<MlpBlock<T>>("mlp", 4 * width, width, rng);
  }

  Var<T> forward(const std::array<std::pair<Var<T>, Var<T>>, 4>& pairs, int64_t th, int64_t tw) const {
    std::vector<Var<T>> fs;
    for (int j = 0; j < 4; ++j) fs.push_back(stages[j]->forward(pairs[j].first, pairs[j].second, th, tw));
    return mlp->forward(ops::concat_channels<T>(fs), th, tw);
  }

  std::array<std::unique_ptr<FuseStage<T>>, 4> stages;
  std::unique_ptr<MlpBlock<T>> mlp;
};

template <typename T>
class PredictionHead : public Module<T> {
 public:
  PredictionHead(int64_t in_ch, int64_t width, Rng& rng) {
    body = this->template make_child<Rb2<T>>("rb2", in_ch, width, rng);
    out_conv = this->template make_child<Conv2d<T>>("conv", width, 1, 1, 1, 0, rng);
    // the 1-channel logit projection starts at fan-in scale so a fresh head
    // emits moderate logits instead of saturating the sigmoid
    out_conv->weight.mutable_value() = kaiming_fanin_conv_init<T>(1, width, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x, int64_t out_h, int64_t out_w) const {
    auto p = ops::sigmoid(out_conv->forward(body->forward(upsample(x, out_h, out_w))));
    // keep the map strictly inside (0,1): a saturated logit would otherwise
    // round to exactly 0 or 1 in floating point
    return ops::clamp(p, T(1e-15), T(1) - T(1e-15));
  }

  std::unique_ptr<Rb2<T>> body;
  std::unique_ptr<Conv2d<T>> out_conv;
};

}  // namespace enformer
