#pragma once

#include "enformer/nn/encoder.hpp"

namespace enformer {

// Convolution-branch encoder: 6 resolution levels (strides 1..32), a strided
// 3x3 projection between levels and 2 residual blocks per level. The 4-stage
// encoder interface exposes the stride-4..32 levels; the stride-1/2 outputs
// are kept as skips for the matching decoder.
inline std::array<int64_t, 6> cb_level_widths(double factor) {
  std::array<int64_t, 6> base{16, 32, 64, 128, 256, 512};
  std::array<int64_t, 6> w{};
  for (int i = 0; i < 6; ++i) {
    w[i] = static_cast<int64_t>(std::llround(base[i] * factor));
    if (w[i] < 1) w[i] = 1;
  }
  return w;
}

template <typename T>
struct CbFeatures {
  StageFeatures<T> stages;
  Var<T> skip_s1, skip_s2;  // stride-1 and stride-2 level outputs
};

template <typename T>
class ConvBranchEncoder : public Encoder<T> {
 public:
  ConvBranchEncoder(double width_factor, Rng& rng) : widths_(cb_level_widths(width_factor)) {
    stem = this->template make_child<Conv2d<T>>("stem", 3, widths_[0], 3, 1, 1, rng);
    for (int k = 0; k < 6; ++k) {
      rbs[k][0] = this->template make_child<Rb<T>>("level" + std::to_string(k) + ".rb1", widths_[k], widths_[k], rng);
      rbs[k][1] = this->template make_child<Rb<T>>("level" + std::to_string(k) + ".rb2", widths_[k], widths_[k], rng);
      if (k > 0)
        downs[k - 1] =
            this->template make_child<Conv2d<T>>("down" + std::to_string(k), widths_[k - 1], widths_[k], 3, 2, 1, rng);
    }
  }

  CbFeatures<T> encode_with_skips(const Var<T>& image) {
    check_encoder_input(image.value());
    CbFeatures<T> out;
    Var<T> x = stem->forward(image);
    for (int k = 0; k < 6; ++k) {
      if (k > 0) x = downs[k - 1]->forward(x);
      x = rbs[k][1]->forward(rbs[k][0]->forward(x));
      if (k == 0) out.skip_s1 = x;
      else if (k == 1) out.skip_s2 = x;
      else out.stages.stages[k - 2] = x;
    }
    return out;
  }

  StageFeatures<T> encode(const Var<T>& image) override { return encode_with_skips(image).stages; }

  std::array<int64_t, 4> stage_widths() const override { return {widths_[2], widths_[3], widths_[4], widths_[5]}; }
  const std::array<int64_t, 6>& level_widths() const { return widths_; }

  std::unique_ptr<Conv2d<T>> stem;
  std::array<std::array<std::unique_ptr<Rb<T>>, 2>, 6> rbs;
  std::array<std::unique_ptr<Conv2d<T>>, 5> downs;

 private:
  std::array<int64_t, 6> widths_;
};

// Unet-style decoder over the conv-branch skip pyramid: at each level,
// upsample x2, concat the matching skip, rb2. Intermediate widths mirror the
// encoder levels; the final stride-1 block emits the configured d1 width.
template <typename T>
class ConvBranchDecoder : public Module<T> {
 public:
  ConvBranchDecoder(const std::array<int64_t, 6>& enc_widths, int64_t d1_width, Rng& rng) : d1_width_(d1_width) {
    // steps[i]: from stride 2^(5-i) to 2^(4-i), consuming the skip at the finer level
    int64_t carried = enc_widths[5];
    for (int i = 0; i < 5; ++i) {
      int64_t skip_w = enc_widths[4 - i];
      int64_t out_w = (i == 4) ? d1_width : enc_widths[4 - i];
      steps[i] = this->template make_child<Rb2<T>>("step" + std::to_string(i), carried + skip_w, out_w, rng);
      carried = out_w;
    }
  }

  Var<T> forward(const CbFeatures<T>& f) const {
    const Var<T>* skips[5] = {&f.stages.stages[2], &f.stages.stages[1], &f.stages.stages[0], &f.skip_s2, &f.skip_s1};
    for (int i = 0; i < 4; ++i)
      if (!f.stages.stages[i].defined()) throw std::invalid_argument("conv branch decoder: missing encoder stage");
    if (!f.skip_s1.defined() || !f.skip_s2.defined())
      throw std::invalid_argument("conv branch decoder: missing stride-1/2 skip features");
    Var<T> x = f.stages.stages[3];
    for (int i = 0; i < 5; ++i) {
      const Var<T>& skip = *skips[i];
      x = upsample(x, skip.value().dim(2), skip.value().dim(3));
      x = steps[i]->forward(ops::concat_channels<T>({x, skip}));
    }
    return x;
  }

  int64_t out_width() const { return d1_width_; }

  std::array<std::unique_ptr<Rb2<T>>, 5> steps;

 private:
  int64_t d1_width_;
};

// PLD+: local emphasis on each stage, then stepwise aggregation.
template <typename T>
class PldPlus : public Module<T> {
 public:
  PldPlus(std::array<int64_t, 4> stage_widths, int64_t le_width, int64_t width, Rng& rng) {
    for (int j = 0; j < 4; ++j)
      les[j] = this->template make_child<Le<T>>("le" + std::to_string(j + 1), stage_widths[j], le_width, rng);
    sfa = this->template make_child<Sfa<T>>("sfa", le_width, width, rng);
  }

  // th/tw: the stride-4 grid of the model input
  Var<T> forward(const StageFeatures<T>& f, int64_t th, int64_t tw) const {
    std::array<Var<T>, 4> e;
    for (int j = 0; j < 4; ++j) e[j] = les[j]->forward(f.stages[j], th, tw);
    return sfa->forward(e[0], e[1], e[2], e[3]);
  }

  std::array<std::unique_ptr<Le<T>>, 4> les;
  std::unique_ptr<Sfa<T>> sfa;
};

}  // namespace enformer
