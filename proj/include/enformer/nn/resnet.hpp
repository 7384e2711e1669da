#pragma once

#include "enformer/nn/encoder.hpp"

// Bottleneck residual encoder (50-layer layout). Post-activation blocks, the
// stride carried by the 3x3 conv, convs bias-free since each feeds a batch
// norm. width_factor scales every channel count for scaled-down test models.

namespace enformer {

template <typename T>
class Bottleneck : public Module<T> {
 public:
  Bottleneck(int64_t in_ch, int64_t width, int64_t stride, Rng& rng) {
    int64_t out = width * 4;
    conv1 = this->template make_child<Conv2d<T>>("conv1", in_ch, width, 1, 1, 0, rng, false);
    bn1 = this->template make_child<BatchNorm2d<T>>("bn1", width);
    conv2 = this->template make_child<Conv2d<T>>("conv2", width, width, 3, stride, 1, rng, false);
    bn2 = this->template make_child<BatchNorm2d<T>>("bn2", width);
    conv3 = this->template make_child<Conv2d<T>>("conv3", width, out, 1, 1, 0, rng, false);
    bn3 = this->template make_child<BatchNorm2d<T>>("bn3", out);
    if (stride != 1 || in_ch != out) {
      down_conv = this->template make_child<Conv2d<T>>("downsample.conv", in_ch, out, 1, stride, 0, rng, false);
      down_bn = this->template make_child<BatchNorm2d<T>>("downsample.bn", out);
    }
  }

  Var<T> forward(const Var<T>& x) const {
    auto y = ops::relu(bn1->forward(conv1->forward(x)));
    y = ops::relu(bn2->forward(conv2->forward(y)));
    y = bn3->forward(conv3->forward(y));
    Var<T> skip = down_conv ? down_bn->forward(down_conv->forward(x)) : x;
    return ops::relu(ops::add(skip, y));
  }

  std::unique_ptr<Conv2d<T>> conv1, conv2, conv3, down_conv;
  std::unique_ptr<BatchNorm2d<T>> bn1, bn2, bn3, down_bn;
};

template <typename T>
class ResNetEncoder : public Encoder<T> {
 public:
  explicit ResNetEncoder(Rng& rng, double width_factor = 1.0) {
    auto scaled = [&](int64_t c) { return std::max<int64_t>(1, std::llround(c * width_factor)); };
    stem_width_ = scaled(64);
    stem_conv = this->template make_child<Conv2d<T>>("stem.conv", 3, stem_width_, 7, 2, 3, rng, false);
    stem_bn = this->template make_child<BatchNorm2d<T>>("stem.bn", stem_width_);
    const std::array<int64_t, 4> depths = {3, 4, 6, 3};
    int64_t in_ch = stem_width_;
    for (int s = 0; s < 4; ++s) {
      int64_t width = scaled(64ll << s);
      widths_[s] = width * 4;
      for (int64_t b = 0; b < depths[s]; ++b) {
        int64_t stride = (s > 0 && b == 0) ? 2 : 1;
        std::string name = "layer" + std::to_string(s + 1) + ".block" + std::to_string(b);
        stages[s].push_back(this->template make_child<Bottleneck<T>>(name, in_ch, width, stride, rng));
        in_ch = widths_[s];
      }
    }
  }

  StageFeatures<T> encode(const Var<T>& image) override {
    check_encoder_input(image.value());
    auto x = ops::maxpool2d(ops::relu(stem_bn->forward(stem_conv->forward(image))), 3, 2, 1);
    StageFeatures<T> out;
    for (int s = 0; s < 4; ++s) {
      for (auto& b : stages[s]) x = b->forward(x);
      out.stages[s] = x;
    }
    return out;
  }

  std::array<int64_t, 4> stage_widths() const override { return widths_; }

  std::unique_ptr<Conv2d<T>> stem_conv;
  std::unique_ptr<BatchNorm2d<T>> stem_bn;
  std::array<std::vector<std::unique_ptr<Bottleneck<T>>>, 4> stages;

 private:
  int64_t stem_width_ = 64;
  std::array<int64_t, 4> widths_{};
};

}  // namespace enformer
