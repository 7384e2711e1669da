#include <catch2/catch_amalgamated.hpp>

#include "enformer/core/ops.hpp"
#include "testutil.hpp"

using namespace enformer;
using testutil::gradcheck;
using testutil::leaf;
using testutil::rand_tensor;

namespace {

// straight-line conv reference, no reuse of library loops
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                             int64_t stride, int64_t pad, int64_t groups) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OC = w.dim(0), ICg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  int64_t ocg = OC / groups;
  Tensor<double> out({N, OC, OH, OW});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc) {
      int64_t g = oc / ocg;
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = b ? (*b)[oc] : 0.0;
          for (int64_t icl = 0; icl < ICg; ++icl)
            for (int64_t ky = 0; ky < KH; ++ky)
              for (int64_t kx = 0; kx < KW; ++kx) {
                int64_t iy = oh * stride + ky - pad;
                int64_t ix = ow * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at(n, g * ICg + icl, iy, ix) * w.at(oc, icl, ky, kx);
              }
          out.at(n, oc, oh, ow) = acc;
        }
    }
  return out;
}

}  // namespace

TEST_CASE("conv2d forward matches direct reference", "[ops]") {
  Rng rng(7);
  struct Case {
    int64_t n, c, h, w, oc, k, stride, pad, groups;
  };
  for (const Case& cs : {Case{2, 3, 7, 6, 4, 3, 1, 1, 1}, Case{1, 4, 8, 8, 6, 3, 2, 1, 2},
                         Case{1, 6, 5, 5, 6, 3, 1, 1, 6}, Case{2, 2, 9, 7, 3, 1, 1, 0, 1},
                         Case{1, 3, 11, 11, 2, 7, 4, 3, 1}}) {
    auto x = rand_tensor({cs.n, cs.c, cs.h, cs.w}, rng);
    auto w = rand_tensor({cs.oc, cs.c / cs.groups, cs.k, cs.k}, rng);
    auto b = rand_tensor({cs.oc}, rng);
    auto got = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(b), cs.stride, cs.pad, cs.groups);
    auto want = conv2d_oracle(x, w, &b, cs.stride, cs.pad, cs.groups);
    testutil::require_tensors_close(got.value(), want, 1e-12);
  }
}

TEST_CASE("conv2d rejects bad geometry", "[ops]") {
  Rng rng(1);
  auto x = Var<double>(rand_tensor({1, 4, 8, 8}, rng));
  auto w = Var<double>(rand_tensor({6, 2, 3, 3}, rng));
  REQUIRE_THROWS_AS(ops::conv2d(x, w, Var<double>(), 1, 1, 1), std::invalid_argument);
  auto w2 = Var<double>(rand_tensor({6, 4, 11, 11}, rng));
  REQUIRE_THROWS_AS(ops::conv2d(x, w2, Var<double>(), 1, 0, 1), std::invalid_argument);
}

TEST_CASE("conv2d gradients", "[ops]") {
  Rng rng(11);
  auto x = leaf({2, 3, 5, 5}, rng);
  auto w = leaf({4, 3, 3, 3}, rng);
  auto b = leaf({4}, rng);
  gradcheck([&] { return ops::sum_all(ops::conv2d(x, w, b, 1, 1, 1)); }, {x, w, b});
  auto xs = leaf({1, 4, 6, 6}, rng);
  auto ws = leaf({4, 2, 3, 3}, rng);
  gradcheck([&] { return ops::sum_all(ops::conv2d(xs, ws, Var<double>(), 2, 1, 2)); }, {xs, ws});
}

TEST_CASE("elementwise and scalar op gradients", "[ops]") {
  Rng rng(3);
  auto a = leaf({2, 3}, rng);
  auto b = leaf({2, 3}, rng, 0.5, 2.0);
  gradcheck([&] { return ops::sum_all(ops::mul(ops::add(a, b), ops::sub(a, b))); }, {a, b});
  gradcheck([&] { return ops::sum_all(ops::div(a, b)); }, {a, b});
  gradcheck([&] { return ops::mean_all(ops::affine(a, 2.5, -1.0)); }, {a});
  auto c = leaf({3, 3}, rng, 0.1, 0.9);
  gradcheck([&] { return ops::sum_all(ops::log_op(c)); }, {c});
  gradcheck([&] { return ops::sum_all(ops::one_minus(c)); }, {c});
}

TEST_CASE("activation gradients", "[ops]") {
  Rng rng(5);
  auto x = leaf({2, 7}, rng, -2.0, 2.0);
  // keep clear of the relu kink
  for (int64_t i = 0; i < x.value().numel(); ++i)
    if (std::fabs(x.value()[i]) < 1e-2) x.mutable_value()[i] = 0.1;
  gradcheck([&] { return ops::sum_all(ops::relu(x)); }, {x});
  gradcheck([&] { return ops::sum_all(ops::silu(x)); }, {x});
  gradcheck([&] { return ops::sum_all(ops::gelu(x)); }, {x});
  gradcheck([&] { return ops::sum_all(ops::sigmoid(x)); }, {x});
}

TEST_CASE("sigmoid output in open unit interval", "[ops]") {
  Rng rng(6);
  auto x = Var<double>(rand_tensor({1, 100}, rng, -30.0, 30.0));
  auto s = ops::sigmoid(x);
  for (int64_t i = 0; i < s.value().numel(); ++i) {
    REQUIRE(s.value()[i] > 0.0);
    REQUIRE(s.value()[i] < 1.0);
  }
}

TEST_CASE("clamp passes gradient only inside the interval", "[ops]") {
  Tensor<double> t({4}, {-1.0, 0.2, 0.8, 2.0});
  Var<double> x(t, true);
  auto y = ops::sum_all(ops::clamp(x, 0.0, 1.0));
  backward(y);
  REQUIRE(x.grad()[0] == 0.0);
  REQUIRE(x.grad()[1] == 1.0);
  REQUIRE(x.grad()[2] == 1.0);
  REQUIRE(x.grad()[3] == 0.0);
}

TEST_CASE("matmul matches naive and gradients hold", "[ops]") {
  Rng rng(9);
  auto a = leaf({2, 3, 4}, rng);
  auto b = leaf({2, 4, 5}, rng);
  auto out = ops::matmul(a, b);
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < 4; ++k) acc += a.value().at(bb, i, k) * b.value().at(bb, k, j);
        testutil::require_close(out.value().at(bb, i, j), acc, 1e-12);
      }
  gradcheck([&] { return ops::sum_all(ops::matmul(a, b)); }, {a, b});
  auto c = leaf({2, 5, 4}, rng);
  gradcheck([&] { return ops::sum_all(ops::matmul_nt(a, c)); }, {a, c});
  // matmul_nt(a, c) == matmul(a, c^T)
  auto nt = ops::matmul_nt(a, c).value();
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < 4; ++k) acc += a.value().at(bb, i, k) * c.value().at(bb, j, k);
        testutil::require_close(nt.at(bb, i, j), acc, 1e-12);
      }
}

TEST_CASE("linear bias and gradients", "[ops]") {
  Rng rng(13);
  auto x = leaf({2, 3, 4}, rng);
  auto w = leaf({4, 5}, rng);
  auto b = leaf({5}, rng);
  gradcheck([&] { return ops::sum_all(ops::linear(x, w, b)); }, {x, w, b});
  auto y = ops::linear(x, w, b).value();
  REQUIRE(y.shape() == Shape{2, 3, 5});
}

TEST_CASE("softmax rows sum to one and gradients hold", "[ops]") {
  Rng rng(17);
  auto x = leaf({3, 6}, rng, -3.0, 3.0);
  auto p = ops::softmax_lastdim(x);
  for (int64_t r = 0; r < 3; ++r) {
    double s = 0;
    for (int64_t j = 0; j < 6; ++j) s += p.value().at(r, j);
    testutil::require_close(s, 1.0, 1e-12);
  }
  auto w = Var<double>(rand_tensor({3, 6}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::softmax_lastdim(x), w)); }, {x});
}

TEST_CASE("group norm normalizes groups and gradients hold", "[ops]") {
  Rng rng(19);
  auto x = leaf({2, 6, 3, 3}, rng);
  auto g = leaf({6}, rng, 0.5, 1.5);
  auto b = leaf({6}, rng);
  auto y = ops::group_norm(x, ops::constant(Tensor<double>({6}, 1.0)), ops::constant(Tensor<double>({6})), 3, 1e-5);
  // each (sample, group) slab of the normalized output has mean ~0 var ~1
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t gr = 0; gr < 3; ++gr) {
      double mu = 0, var = 0;
      for (int64_t cl = 0; cl < 2; ++cl)
        for (int64_t i = 0; i < 9; ++i) mu += y.value()[((n * 6 + gr * 2 + cl) * 9) + i];
      mu /= 18.0;
      for (int64_t cl = 0; cl < 2; ++cl)
        for (int64_t i = 0; i < 9; ++i) {
          double d = y.value()[((n * 6 + gr * 2 + cl) * 9) + i] - mu;
          var += d * d;
        }
      var /= 18.0;
      testutil::require_close(mu, 0.0, 1e-9);
      testutil::require_close(var, 1.0, 1e-4);
    }
  auto wgt = ops::constant(rand_tensor({2, 6, 3, 3}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::group_norm(x, g, b, 3, 1e-5), wgt)); }, {x, g, b}, 1e-4, 1e-6);
}

TEST_CASE("group norm rejects indivisible groups", "[ops]") {
  Rng rng(2);
  auto x = Var<double>(rand_tensor({1, 5, 2, 2}, rng));
  auto g = Var<double>(Tensor<double>({5}, 1.0));
  auto b = Var<double>(Tensor<double>({5}));
  REQUIRE_THROWS_AS(ops::group_norm(x, g, b, 2, 1e-5), std::invalid_argument);
}

TEST_CASE("batch norm train vs eval and running stats", "[ops]") {
  Rng rng(23);
  auto xt = rand_tensor({4, 3, 2, 2}, rng);
  Var<double> x(xt, true);
  auto g = Var<double>(Tensor<double>({3}, 1.0), true);
  auto b = Var<double>(Tensor<double>({3}), true);
  Tensor<double> rm({3});
  Tensor<double> rv({3}, 1.0);
  auto y = ops::batch_norm(x, g, b, rm, rv, true, 0.1, 1e-5);
  // per-channel batch stats of output are ~(0,1)
  for (int64_t c = 0; c < 3; ++c) {
    double mu = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 4; ++i) mu += y.value()[(n * 3 + c) * 4 + i];
    mu /= 16.0;
    testutil::require_close(mu, 0.0, 1e-9);
  }
  // running stats oracle: rm = 0.9*0 + 0.1*batch_mean, rv uses unbiased variance
  for (int64_t c = 0; c < 3; ++c) {
    double mu = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 4; ++i) mu += xt[(n * 3 + c) * 4 + i];
    mu /= 16.0;
    double var = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 4; ++i) {
        double d = xt[(n * 3 + c) * 4 + i] - mu;
        var += d * d;
      }
    var /= 16.0;
    testutil::require_close(rm[c], 0.1 * mu, 1e-12);
    testutil::require_close(rv[c], 0.9 + 0.1 * var * 16.0 / 15.0, 1e-12);
  }
  // eval mode is a per-channel affine map using the running stats
  auto ye = ops::batch_norm(x, g, b, rm, rv, false, 0.1, 1e-5);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 4; ++i) {
        double want = (xt[(n * 3 + c) * 4 + i] - rm[c]) / std::sqrt(rv[c] + 1e-5);
        testutil::require_close(ye.value()[(n * 3 + c) * 4 + i], want, 1e-12);
      }
  Tensor<double> rm2 = rm, rv2 = rv;
  auto wbn = ops::constant(rand_tensor({4, 3, 2, 2}, rng));
  gradcheck(
      [&] {
        Tensor<double> m = rm2, v = rv2;  // keep buffers stable across re-evaluations
        return ops::sum_all(ops::mul(ops::batch_norm(x, g, b, m, v, true, 0.1, 1e-5), wbn));
      },
      {x, g, b});
}

TEST_CASE("layer norm gradients", "[ops]") {
  Rng rng(29);
  auto x = leaf({2, 5, 4}, rng);
  auto g = leaf({4}, rng, 0.5, 1.5);
  auto b = leaf({4}, rng);
  auto wln = ops::constant(rand_tensor({2, 5, 4}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::layer_norm(x, g, b, 1e-6), wln)); }, {x, g, b});
}

TEST_CASE("token/grid reshapes are exact inverses", "[ops]") {
  Rng rng(31);
  auto x = leaf({2, 3, 4, 5}, rng);
  auto t = ops::tokens_from_grid(x);
  REQUIRE(t.value().shape() == Shape{2, 20, 3});
  auto back = ops::grid_from_tokens(t, 4, 5);
  REQUIRE(back.value().vec() == x.value().vec());
  auto wtg = ops::constant(rand_tensor({2, 3, 4, 5}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::grid_from_tokens(ops::tokens_from_grid(x), 4, 5), wtg)); }, {x});
}

TEST_CASE("head split/merge round trip", "[ops]") {
  Rng rng(37);
  auto x = leaf({2, 5, 8}, rng);
  auto s = ops::split_heads(x, 4);
  REQUIRE(s.value().shape() == Shape{8, 5, 2});
  auto m = ops::merge_heads(s, 4);
  REQUIRE(m.value().vec() == x.value().vec());
  auto whm = ops::constant(rand_tensor({2, 5, 8}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::merge_heads(ops::split_heads(x, 4), 4), whm)); }, {x});
}

TEST_CASE("concat_channels layout and gradients", "[ops]") {
  Rng rng(41);
  auto a = leaf({2, 2, 3, 3}, rng);
  auto b = leaf({2, 3, 3, 3}, rng);
  auto cat = ops::concat_channels<double>({a, b});
  REQUIRE(cat.value().shape() == Shape{2, 5, 3, 3});
  // first argument occupies the leading channels
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 9; ++i)
        REQUIRE(cat.value()[(n * 5 + c) * 9 + i] == a.value()[(n * 2 + c) * 9 + i]);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 9; ++i)
        REQUIRE(cat.value()[(n * 5 + 2 + c) * 9 + i] == b.value()[(n * 3 + c) * 9 + i]);
  }
  auto wcc = ops::constant(rand_tensor({2, 5, 3, 3}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::concat_channels<double>({a, b}), wcc)); }, {a, b});
}

TEST_CASE("bilinear resize identity, constants and gradients", "[ops]") {
  Rng rng(43);
  auto x = leaf({1, 2, 5, 7}, rng);
  auto same = ops::bilinear_resize(x, 5, 7);
  REQUIRE(same.value().vec() == x.value().vec());
  auto cst = ops::bilinear_resize(ops::constant(Tensor<double>({1, 1, 3, 3}, 2.5)), 9, 6);
  for (int64_t i = 0; i < cst.value().numel(); ++i) testutil::require_close(cst.value()[i], 2.5, 1e-12);
  auto wup = ops::constant(rand_tensor({1, 2, 11, 4}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::bilinear_resize(x, 11, 4), wup)); }, {x});
  auto wdn = ops::constant(rand_tensor({1, 2, 3, 9}, rng));
  gradcheck([&] { return ops::sum_all(ops::mul(ops::bilinear_resize(x, 3, 9), wdn)); }, {x});
}

TEST_CASE("bilinear resize midpoint interpolation", "[ops]") {
  // 1x1x1x2 image upscaled 2x: half-pixel centers land on 0.25/0.75 blends
  Tensor<double> t({1, 1, 1, 2}, {0.0, 1.0});
  auto y = ops::bilinear_resize(Var<double>(t), 1, 4).value();
  testutil::require_close(y[0], 0.0, 1e-12);
  testutil::require_close(y[1], 0.25, 1e-12);
  testutil::require_close(y[2], 0.75, 1e-12);
  testutil::require_close(y[3], 1.0, 1e-12);
}

TEST_CASE("maxpool picks maxima and routes gradient", "[ops]") {
  Tensor<double> t({1, 1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) t[i] = static_cast<double>(i);
  Var<double> x(t, true);
  auto y = ops::maxpool2d(x, 3, 2, 1);
  REQUIRE(y.value().shape() == Shape{1, 1, 2, 2});
  REQUIRE(y.value()[0] == 5.0);
  REQUIRE(y.value()[1] == 7.0);
  REQUIRE(y.value()[2] == 13.0);
  REQUIRE(y.value()[3] == 15.0);
  backward(ops::sum_all(y));
  REQUIRE(x.grad()[5] == 1.0);
  REQUIRE(x.grad()[15] == 1.0);
  REQUIRE(x.grad()[0] == 0.0);
}

TEST_CASE("backward accumulates through shared subexpressions", "[ops]") {
  Rng rng(47);
  auto x = leaf({3}, rng);
  gradcheck([&] {
    auto y = ops::mul(x, x);
    return ops::sum_all(ops::add(y, ops::scale(x, 3.0)));
  }, {x});
}

TEST_CASE("backward is repeatable bit for bit", "[ops]") {
  Rng rng(53);
  auto x = leaf({2, 3, 6, 6}, rng);
  auto w = leaf({4, 3, 3, 3}, rng);
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    auto y = ops::sum_all(ops::silu(ops::conv2d(x, w, Var<double>(), 1, 1, 1)));
    backward(y);
    return std::make_pair(x.grad().vec(), w.grad().vec());
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.first == b.first);
  REQUIRE(a.second == b.second);
}
