// Rough single-thread conv throughput probe, used to size the tiny configs.
#include <chrono>
#include <cstdio>

#include "enformer/core/ops.hpp"
#include "enformer/core/rng.hpp"

using namespace enformer;

template <typename T>
double bench(int64_t C, int64_t OC, int64_t H, int64_t reps) {
  Rng rng(1);
  Tensor<T> xt({1, C, H, H});
  for (int64_t i = 0; i < xt.numel(); ++i) xt[i] = static_cast<T>(rng.uniform(-1, 1));
  Tensor<T> wt({OC, C, 3, 3});
  for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = static_cast<T>(rng.uniform(-1, 1));

  auto t0 = std::chrono::steady_clock::now();
  double sink = 0;
  for (int64_t r = 0; r < reps; ++r) {
    Var<T> x(xt, true);
    Var<T> w(wt, true);
    auto y = ops::sum_all(ops::conv2d(x, w, Var<T>(), 1, 1, 1));
    backward(y);
    sink += static_cast<double>(y.value()[0]);
  }
  auto t1 = std::chrono::steady_clock::now();
  double secs = std::chrono::duration<double>(t1 - t0).count();
  double macs = static_cast<double>(reps) * C * OC * H * H * 9;  // forward only
  std::printf("C=%lld OC=%lld H=%lld  fwd+bwd %.3f s for %.0f fwd-MMAC  (~%.2f fwd-GMAC/s incl bwd) sink=%g\n",
              (long long)C, (long long)OC, (long long)H, secs, macs / 1e6, macs / 1e9 / secs, sink);
  return macs / secs;
}

int main() {
  std::puts("double:");
  bench<double>(16, 16, 64, 20);
  bench<double>(32, 32, 32, 20);
  bench<double>(64, 64, 16, 40);
  std::puts("float:");
  bench<float>(16, 16, 64, 20);
  bench<float>(32, 32, 32, 20);
  return 0;
}
