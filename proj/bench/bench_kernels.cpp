// Parallel kernels against their serial references. The parallel matmul owns
// one output row per iteration with a fixed inner summation order, so both
// variants produce identical bits; the benchmark only measures the speedup.

#include <benchmark/benchmark.h>

#include "mocgvq/quantizer.hpp"
#include "mocgvq/rng.hpp"
#include "mocgvq/tensor.hpp"

using namespace mocgvq;

namespace {

Tensor random_tensor(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_normal();
    return t;
}

void bm_matmul_serial(benchmark::State& state) {
    const int n = int(state.range(0));
    Tensor a = random_tensor(n, n, 1);
    Tensor b = random_tensor(n, n, 2);
    for (auto _ : state) {
        Tensor c = serial::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

void bm_matmul_parallel(benchmark::State& state) {
    const int n = int(state.range(0));
    Tensor a = random_tensor(n, n, 1);
    Tensor b = random_tensor(n, n, 2);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}

// Desk-scale quantization: 600 nodes through an M x K bank, nearest-code
// search parallel over nodes.
void bm_quantize(benchmark::State& state) {
    BankConfig cfg;
    cfg.num_codebooks = 2;
    cfg.codes_per_book = 32;
    cfg.dim = int(state.range(0));
    ParamStore ps;
    Rng rng(3);
    init_bank(ps, cfg, rng);
    Tensor h = random_tensor(600, cfg.dim, 4);
    for (auto _ : state) {
        QuantizeOutcome out = quantize(h, ps, cfg, 2);
        benchmark::DoNotOptimize(out.zq.data());
    }
    state.SetItemsProcessed(state.iterations() * 600);
}

} // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_parallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_quantize)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
