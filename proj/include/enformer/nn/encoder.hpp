#pragma once

#include <array>

#include "enformer/nn/blocks.hpp"

namespace enformer {

// e1..e4 at strides 4/8/16/32
template <typename T>
struct StageFeatures {
  std::array<Var<T>, 4> stages;
};

template <typename T>
inline void check_encoder_input(const Tensor<T>& img) {
  if (img.rank() != 4 || img.dim(1) != 3)
    throw std::invalid_argument("encode: expected (N,3,H,W) input, got " + shape_str(img.shape()));
  if (img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0)
    throw std::invalid_argument("encode: input dims " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(3)) +
                                " must be divisible by 32");
}

// Uniform 4-stage interface: assemblies only consume stages and widths,
// never backbone internals.
template <typename T>
class Encoder : public Module<T> {
 public:
  virtual StageFeatures<T> encode(const Var<T>& image) = 0;
  virtual std::array<int64_t, 4> stage_widths() const = 0;
};

struct EncoderSpec {
  std::string name;               // cb_e | resnet50 | pvtv2 | coat-lite-{mini,small,medium} | tiny_conv | tiny_vit
  std::string variant;            // pvtv2 config name, default "b3"
  double width_factor = 1.0;      // cb_e / resnet50 scaling
  std::string pretrained;         // optional weight-manifest path; mandatory for coat-lite
  uint64_t seed = 0;
};

}  // namespace enformer
