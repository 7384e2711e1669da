#include "enformer/models/assembly.hpp"
#include "testutil.hpp"

using namespace enformer;
using namespace testutil;
using Catch::Matchers::ContainsSubstring;

namespace {

Var<double> image(int64_t h, int64_t w, Rng& rng) { return leaf({1, 3, h, w}, rng, 0.0, 1.0); }

double grad_norm(const Var<double>& p) {
  double s = 0;
  for (int64_t i = 0; i < p.grad().numel(); ++i) s += p.grad()[i] * p.grad()[i];
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("registry rows match the published component table", "[models]") {
  using Row = std::array<std::string, 6>;
  const std::vector<std::pair<std::string, Row>> want = {
      {"fcbformer", {"CB_E", "PVTv2-B3", "CB_D", "PLD+", "—", "PH"}},
      {"enformer", {"CB_E", "PVTv2-B3", "CB_D", "PLD+", "FD", "PH"}},
      {"enformer-lite-mini", {"CB_E", "CoaT-Lite Mini", "—", "—", "FD", "PH"}},
      {"enformer-lite-small", {"CB_E", "CoaT-Lite Small", "—", "—", "FD", "PH"}},
      {"enformer-lite-medium", {"CB_E", "CoaT-Lite Medium", "—", "—", "FD", "PH"}},
      {"enformer-lite-large", {"ResNet50", "CoaT-Lite Medium", "—", "—", "FD", "PH"}},
  };
  for (const auto& [name, row] : want) {
    auto plan = assembly_plan(name);
    INFO(name);
    REQUIRE(plan.display == row);
    REQUIRE(plan.has_fusion == (row[4] == "FD"));
    REQUIRE(plan.has_decoders == (row[2] == "CB_D"));
  }
  REQUIRE(model_registry().size() == 10);
  REQUIRE_THROWS_WITH(assembly_plan("transunet"), ContainsSubstring("unknown model"));
}

TEST_CASE("tiny assemblies map images to open-interval probability maps", "[models]") {
  Rng rng(101);
  for (const char* name : {"tiny-fcbformer", "tiny-enformer", "tiny-enformer-lite", "tiny-enformer-lite-large"}) {
    INFO(name);
    Rng mr(7);
    auto m = assemble<double>(name, mr);
    auto out = m->forward(image(64, 64, rng));
    REQUIRE(out.value().shape() == Shape{1, 1, 64, 64});
    for (int64_t i = 0; i < out.value().numel(); ++i) {
      REQUIRE(out.value()[i] > 0.0);
      REQUIRE(out.value()[i] < 1.0);
    }
  }
}

TEST_CASE("output follows the input spatial size", "[models]") {
  Rng rng(103), mr(9);
  auto m = assemble<double>("tiny-enformer-lite", mr);
  auto out = m->forward(image(96, 160, rng));
  REQUIRE(out.value().shape() == Shape{1, 1, 96, 160});
}

TEST_CASE("one backward pass reaches every trainable parameter", "[models]") {
  Rng rng(107);
  for (const char* name : {"tiny-enformer", "tiny-enformer-lite", "tiny-enformer-lite-large"}) {
    INFO(name);
    Rng mr(11);
    auto m = assemble<double>(name, mr);
    auto out = m->forward(image(64, 64, rng));
    m->zero_grad();
    backward(ops::sum_all(out));
    for (auto& np : m->named_params()) {
      INFO(np.name);
      REQUIRE(grad_norm(np.param) > 0.0);
    }
  }
}

TEST_CASE("parameter report is additive and mirrors the composition", "[models]") {
  Rng mr1(13), mr2(13);
  auto enf = assemble<double>("tiny-enformer", mr1);
  auto lite = assemble<double>("tiny-enformer-lite", mr2);
  auto re = parameter_report(*enf), rl = parameter_report(*lite);
  auto find = [](const ParameterReport& r, const std::string& k) {
    for (auto& [name, n] : r.components)
      if (name == k) return n;
    return int64_t(-1);
  };
  REQUIRE(re.total == enf->param_count());
  REQUIRE(rl.total == lite->param_count());
  REQUIRE(rl.total < re.total);
  REQUIRE(find(rl, "decoder1") == 0);
  REQUIRE(find(rl, "decoder2") == 0);
  REQUIRE(find(re, "decoder1") > 0);
  REQUIRE(find(re, "fusion") > 0);
  Rng mr3(13);
  auto fcb = assemble<double>("tiny-fcbformer", mr3);
  REQUIRE(find(parameter_report(*fcb), "fusion") == 0);
}

TEST_CASE("fused features are load-bearing in the full composition", "[models]") {
  Rng rng(109), mr(17);
  auto m = assemble<double>("tiny-enformer", mr);
  auto img = image(64, 64, rng);
  auto t = m->forward_traced(img);
  auto d2_full = upsample(t.d2, 64, 64);
  auto f_full = upsample(t.fused, 64, 64);
  auto rebuilt = m->head->forward(ops::concat_channels<double>({t.d1, d2_full, f_full}), 64, 64);
  REQUIRE(rebuilt.value().vec() == t.out.value().vec());
  auto zeros = ops::constant(Tensor<double>(f_full.value().shape()));
  auto ablated = m->head->forward(ops::concat_channels<double>({t.d1, d2_full, zeros}), 64, 64);
  REQUIRE(ablated.value().vec() != t.out.value().vec());
}

TEST_CASE("stacked composition concatenates the two branch decodings", "[models]") {
  Rng rng(113), mr(19);
  auto m = assemble<double>("tiny-fcbformer", mr);
  auto img = image(64, 64, rng);
  auto t = m->forward_traced(img);
  REQUIRE_FALSE(t.fused.defined());
  auto rebuilt = m->head->forward(ops::concat_channels<double>({t.d1, upsample(t.d2, 64, 64)}), 64, 64);
  REQUIRE(rebuilt.value().vec() == t.out.value().vec());
}

TEST_CASE("composition entry points enforce their invariants", "[models]") {
  Rng rng(127), mr(21), mr2(22);
  auto enf = assemble<double>("tiny-enformer", mr);
  auto lite = assemble<double>("tiny-enformer-lite", mr2);
  auto img = image(64, 64, rng);
  REQUIRE_THROWS_WITH(enformer_forward(*lite, img), ContainsSubstring("assembly invariant"));
  REQUIRE_THROWS_WITH(enformer_lite_forward(*enf, img), ContainsSubstring("assembly invariant"));
  REQUIRE(enformer_forward(*enf, img).value().shape() == Shape{1, 1, 64, 64});
  REQUIRE(enformer_lite_forward(*lite, img).value().shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("assembly is seed deterministic end to end", "[models]") {
  Rng ra(23), rb(23), ri(31);
  auto a = assemble<double>("tiny-enformer-lite", ra);
  auto b = assemble<double>("tiny-enformer-lite", rb);
  auto img = image(64, 64, ri);
  auto ya = a->forward(img), yb = b->forward(img);
  REQUIRE(ya.value().vec() == yb.value().vec());
  auto ya2 = a->forward(img);
  REQUIRE(ya.value().vec() == ya2.value().vec());
}

TEST_CASE("full-scale co-scale rows refuse to build without weights", "[models]") {
  Rng mr(37);
  REQUIRE_THROWS_WITH(assemble<double>("enformer-lite-mini", mr),
                      ContainsSubstring("backbone requires external definition"));
}
