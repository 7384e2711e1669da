#pragma once

#include "enformer/nn/backbone.hpp"

// Model registry and the two prediction compositions. Every model pairs two
// encoders (K = 2). The stacked form decodes each branch and lets the head
// combine them; the fused form routes stage-paired features through the fuse
// decoder. The full composition uses both, concatenated (d1, d2, fused) at
// full resolution before the head.

namespace enformer {

struct AssemblyPlan {
  std::string name;
  // component display tuple: encoder1, encoder2, decoder1, decoder2, fusion, head
  std::array<std::string, 6> display;
  EncoderSpec enc1, enc2;
  bool has_decoders = false, has_fusion = false;
  int64_t d1_width = 32, le_width = 64, pld_width = 64, fuse_width = 64, head_width = 64;
};

inline std::vector<AssemblyPlan> model_registry() {
  auto tiny = [](AssemblyPlan p) {
    p.d1_width = 8;
    p.le_width = p.pld_width = p.fuse_width = 16;
    p.head_width = 8;
    return p;
  };
  AssemblyPlan fcb{"fcbformer",
                   {"CB_E", "PVTv2-B3", "CB_D", "PLD+", "—", "PH"},
                   {.name = "cb_e"},
                   {.name = "pvtv2", .variant = "b3"},
                   true,
                   false};
  AssemblyPlan enf = fcb;
  enf.name = "enformer";
  enf.display[4] = "FD";
  enf.has_fusion = true;
  auto lite = [](const std::string& variant, std::string display) {
    AssemblyPlan p{"enformer-lite-" + variant,
                   {"CB_E", std::move(display), "—", "—", "FD", "PH"},
                   {.name = "cb_e"},
                   {.name = "coat_lite", .variant = variant},
                   false,
                   true};
    return p;
  };
  AssemblyPlan large = lite("large", "CoaT-Lite Medium");
  large.enc1 = {.name = "resnet50"};
  large.enc2 = {.name = "coat_lite", .variant = "medium"};
  large.display[0] = "ResNet50";

  AssemblyPlan tfcb = tiny(fcb);
  tfcb.name = "tiny-fcbformer";
  tfcb.display = {"tiny_conv", "tiny_vit", "CB_D", "PLD+", "—", "PH"};
  tfcb.enc1 = {.name = "tiny_conv"};
  tfcb.enc2 = {.name = "tiny_vit"};
  AssemblyPlan tenf = tfcb;
  tenf.name = "tiny-enformer";
  tenf.display[4] = "FD";
  tenf.has_fusion = true;
  AssemblyPlan tlite = tenf;
  tlite.name = "tiny-enformer-lite";
  tlite.display[2] = tlite.display[3] = "—";
  tlite.has_decoders = false;
  AssemblyPlan tlarge = tlite;
  tlarge.name = "tiny-enformer-lite-large";
  tlarge.display[0] = "ResNet50×0.125";
  tlarge.enc1 = {.name = "resnet50", .width_factor = 0.125};

  return {fcb,
          enf,
          lite("mini", "CoaT-Lite Mini"),
          lite("small", "CoaT-Lite Small"),
          lite("medium", "CoaT-Lite Medium"),
          large,
          tfcb,
          tenf,
          tlite,
          tlarge};
}

inline AssemblyPlan assembly_plan(const std::string& name) {
  for (auto& p : model_registry())
    if (p.name == name) return p;
  std::string known;
  for (auto& p : model_registry()) known += (known.empty() ? "" : ", ") + p.name;
  throw std::invalid_argument("unknown model '" + name + "' (known: " + known + ")");
}

// probability map contract: (N,1,H,W), every value strictly inside (0,1)
template <typename T>
class ModelAssembly : public Module<T> {
 public:
  static constexpr int kNumEncoders = 2;

  ModelAssembly(const AssemblyPlan& plan, Rng& rng) : plan_(plan) {
    if (!plan.has_decoders && !plan.has_fusion)
      throw std::invalid_argument("assembly invariant: at least one of the decoders or the fusion must be present");
    encoder1 = this->add_encoder("encoder1", build_backbone<T>(plan.enc1, rng));
    encoder2 = this->add_encoder("encoder2", build_backbone<T>(plan.enc2, rng));
    auto w1 = encoder1->stage_widths(), w2 = encoder2->stage_widths();
    int64_t head_in = 0;
    if (plan.has_decoders) {
      auto* cb = dynamic_cast<ConvBranchEncoder<T>*>(encoder1);
      if (!cb) throw std::invalid_argument("assembly invariant: branch decoding requires the conv-branch encoder");
      decoder1 = this->template make_child<ConvBranchDecoder<T>>("decoder1", cb->level_widths(), plan.d1_width, rng);
      decoder2 = this->template make_child<PldPlus<T>>("decoder2", w2, plan.le_width, plan.pld_width, rng);
      head_in += plan.d1_width + plan.pld_width;
    }
    if (plan.has_fusion) {
      fusion = this->template make_child<FuseDecoder<T>>("fusion", w1, w2, plan.fuse_width, rng);
      head_in += plan.fuse_width;
    }
    head = this->template make_child<PredictionHead<T>>("head", head_in, plan.head_width, rng);
  }

  struct Trace {
    StageFeatures<T> e1, e2;
    Var<T> d1, d2, fused;  // d2/fused at the stride-4 grid; d1 at full resolution
    Var<T> out;
  };

  Trace forward_traced(const Var<T>& image) {
    const int64_t h = image.value().dim(2), w = image.value().dim(3);
    const int64_t th = h / 4, tw = w / 4;
    Trace t;
    CbFeatures<T> cbf;
    if (plan_.has_decoders) {
      auto* cb = dynamic_cast<ConvBranchEncoder<T>*>(encoder1);
      cbf = cb->encode_with_skips(image);
      t.e1 = cbf.stages;
    } else {
      t.e1 = encoder1->encode(image);
    }
    t.e2 = encoder2->encode(image);
    std::vector<Var<T>> head_parts;
    if (plan_.has_decoders) {
      t.d1 = decoder1->forward(cbf);
      t.d2 = decoder2->forward(t.e2, th, tw);
      head_parts.push_back(t.d1);
      head_parts.push_back(upsample(t.d2, h, w));
    }
    if (plan_.has_fusion) {
      std::array<std::pair<Var<T>, Var<T>>, 4> pairs;
      for (int j = 0; j < 4; ++j) pairs[j] = {t.e1.stages[j], t.e2.stages[j]};
      t.fused = fusion->forward(pairs, th, tw);
      if (plan_.has_decoders) head_parts.push_back(upsample(t.fused, h, w));
    }
    if (plan_.has_decoders)
      t.out = head->forward(ops::concat_channels<T>(head_parts), h, w);
    else
      t.out = head->forward(t.fused, h, w);
    return t;
  }

  Var<T> forward(const Var<T>& image) { return forward_traced(image).out; }

  const AssemblyPlan& plan() const { return plan_; }

  Encoder<T>* encoder1 = nullptr;
  Encoder<T>* encoder2 = nullptr;
  std::unique_ptr<ConvBranchDecoder<T>> decoder1;
  std::unique_ptr<PldPlus<T>> decoder2;
  std::unique_ptr<FuseDecoder<T>> fusion;
  std::unique_ptr<PredictionHead<T>> head;

 private:
  Encoder<T>* add_encoder(const std::string& name, std::unique_ptr<Encoder<T>> enc) {
    Encoder<T>* raw = enc.get();
    owned_.push_back(std::move(enc));
    this->add_child(name, raw);
    return raw;
  }

  AssemblyPlan plan_;
  std::vector<std::unique_ptr<Encoder<T>>> owned_;
};

template <typename T>
inline std::unique_ptr<ModelAssembly<T>> assemble(const std::string& name, Rng& rng) {
  return std::make_unique<ModelAssembly<T>>(assembly_plan(name), rng);
}

// composition-specific entry points with their invariants spelled out
template <typename T>
inline Var<T> enformer_forward(ModelAssembly<T>& m, const Var<T>& image) {
  if (!m.decoder1 || !m.decoder2 || !m.fusion)
    throw std::invalid_argument("assembly invariant: the full composition needs both decoders and the fusion");
  return m.forward(image);
}

template <typename T>
inline Var<T> enformer_lite_forward(ModelAssembly<T>& m, const Var<T>& image) {
  if (!m.fusion || m.decoder1 || m.decoder2)
    throw std::invalid_argument("assembly invariant: the lite composition is fusion-only");
  return m.forward(image);
}

struct ParameterReport {
  std::vector<std::pair<std::string, int64_t>> components;
  int64_t total = 0;
};

template <typename T>
inline ParameterReport parameter_report(const ModelAssembly<T>& m) {
  ParameterReport r;
  auto add = [&](const char* label, const Module<T>* mod) {
    int64_t n = mod ? mod->param_count() : 0;
    r.components.emplace_back(label, n);
    r.total += n;
  };
  add("encoder1", m.encoder1);
  add("encoder2", m.encoder2);
  add("decoder1", m.decoder1.get());
  add("decoder2", m.decoder2.get());
  add("fusion", m.fusion.get());
  add("head", m.head.get());
  return r;
}

}  // namespace enformer
