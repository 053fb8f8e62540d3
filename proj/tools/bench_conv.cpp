// Micro-benchmark for the hot convolution shapes.

#include <chrono>
#include <cstdio>

#include "kpx/conv_kernels.hpp"
#include "kpx/rng.hpp"

using namespace kpx;

static Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

int main() {
  Rng rng(42);
  // Lateral coupling shape: 8x32x32 field, 8x8x13x13 kernel, stride 1 pad 6.
  Tensor x = random_tensor({8, 32, 32}, rng);
  Tensor k = random_tensor({8, 8, 13, 13}, rng);
  Tensor out, gx(x.shape()), gk(k.shape());

  const int reps = 200;
  const double macs = 8.0 * 8.0 * 13.0 * 13.0 * 32.0 * 32.0;  // per call

  auto bench = [&](const char* name, auto&& fn) {
    fn();  // warmup
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    double sec = std::chrono::duration<double>(t1 - t0).count() / reps;
    std::printf("%-22s %8.3f ms  %7.2f GFLOP/s\n", name, sec * 1e3,
                2.0 * macs / sec * 1e-9);
  };

  bench("conv2d_forward", [&] { detail::conv2d_forward(x, k, 1, 6, 6, out); });
  bench("conv2d_input_grad", [&] { detail::conv2d_input_grad(out, k, 1, 6, 6, gx); });
  bench("conv2d_kernel_grad", [&] { detail::conv2d_kernel_grad(x, out, 1, 6, 6, gk); });
  return 0;
}
