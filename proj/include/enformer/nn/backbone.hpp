#pragma once

#include <cctype>

#include "enformer/nn/conv_branch.hpp"
#include "enformer/nn/resnet.hpp"
#include "enformer/nn/transformer.hpp"
#include "enformer/nn/weights.hpp"

// Backbone factory. Every encoder is served through the uniform 4-stage
// interface; co-scale (coat-lite) backbones have no native definition here
// and are only available when a weight manifest supplies one, hosted on the
// pyramid-transformer skeleton with the published stage widths.

namespace enformer {

inline PvtConfig coat_lite_config_for(const std::string& variant) {
  // published stage widths; serial depths chosen for the desk-scale stand-in
  if (variant == "mini")
    return {{{{64, 2, 1, 8, 8}, {128, 2, 2, 4, 8}, {320, 2, 5, 2, 4}, {512, 2, 8, 1, 4}}}};
  if (variant == "small")
    return {{{{64, 3, 1, 8, 8}, {128, 4, 2, 4, 8}, {320, 6, 5, 2, 4}, {512, 3, 8, 1, 4}}}};
  if (variant == "medium")
    return {{{{128, 3, 1, 8, 8}, {256, 6, 2, 4, 8}, {320, 10, 5, 2, 4}, {512, 8, 8, 1, 4}}}};
  throw std::invalid_argument("coat_lite: unknown variant '" + variant + "'");
}

namespace detail {

inline std::pair<std::string, std::string> normalize_backbone_name(const EncoderSpec& spec) {
  std::string name = spec.name, variant = spec.variant;
  for (auto& c : name) c = (c == '-') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const char* v : {"mini", "small", "medium"})
    if (name == std::string("coat_lite_") + v) return {"coat_lite", v};
  if (name == "pvtv2_b3" || name == "pvtv2_b0") return {"pvtv2", name.substr(6)};
  return {name, variant};
}

}  // namespace detail

template <typename T>
inline std::unique_ptr<Encoder<T>> build_backbone(const EncoderSpec& spec, Rng& rng) {
  auto [name, variant] = detail::normalize_backbone_name(spec);
  std::unique_ptr<Encoder<T>> enc;
  if (name == "cb_e") {
    enc = std::make_unique<ConvBranchEncoder<T>>(spec.width_factor, rng);
  } else if (name == "tiny_conv") {
    enc = std::make_unique<ConvBranchEncoder<T>>(0.25 * spec.width_factor, rng);
  } else if (name == "resnet50") {
    enc = std::make_unique<ResNetEncoder<T>>(rng, spec.width_factor);
  } else if (name == "pvtv2") {
    enc = std::make_unique<PyramidTransformerEncoder<T>>(pvt_config_for(variant), rng);
  } else if (name == "tiny_vit") {
    enc = std::make_unique<PyramidTransformerEncoder<T>>(pvt_config_for("tiny"), rng);
  } else if (name == "coat_lite") {
    if (spec.pretrained.empty())
      throw std::runtime_error("coat_lite-" + variant +
                               ": backbone requires external definition (pass a pretrained weight manifest)");
    enc = std::make_unique<PyramidTransformerEncoder<T>>(coat_lite_config_for(variant), rng);
  } else {
    throw std::invalid_argument("unknown backbone '" + spec.name + "'");
  }
  if (!spec.pretrained.empty()) load_into_module(*enc, read_weights_file(spec.pretrained));
  return enc;
}

}  // namespace enformer
