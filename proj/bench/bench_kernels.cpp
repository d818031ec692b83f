// Compares the OpenMP kernel entry points against the serial reference on
// representative shapes, checks bit-identical results, and reports timings.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hypergen/kernels.hpp"
#include "hypergen/rng.hpp"

namespace {

using hypergen::kernels::Unary;
namespace K = hypergen::kernels;

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const double t0 = now_ms();
        f();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

std::vector<double> random_vec(size_t n, uint64_t seed) {
    hypergen::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n",
                name.c_str(), serial_ms, parallel_ms,
                parallel_ms > 0 ? serial_ms / parallel_ms : 0.0,
                identical ? "bit-identical" : "MISMATCH");
}

int g_mismatches = 0;

void bench_matmul(int m, int k, int n) {
    const auto a = random_vec(static_cast<size_t>(m) * k, 11);
    const auto b = random_vec(static_cast<size_t>(k) * n, 22);
    std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs.size());

    const double ts = time_best_of(3, [&] { K::serial::matmul_nn(a.data(), b.data(), cs.data(), m, k, n); });
    K::set_parallel(true);
    const double tp = time_best_of(3, [&] { K::matmul_nn(a.data(), b.data(), cp.data(), m, k, n); });
    const bool same = bit_equal(cs, cp);
    if (!same) ++g_mismatches;
    report("matmul_nn " + std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n),
           ts, tp, same);
}

void bench_map(size_t n) {
    const auto x = random_vec(n, 33);
    std::vector<double> ys(n), yp(n);
    const double ts = time_best_of(3, [&] { K::serial::map_unary(Unary::Tanh, x.data(), ys.data(), n); });
    K::set_parallel(true);
    const double tp = time_best_of(3, [&] { K::map_unary(Unary::Tanh, x.data(), yp.data(), n); });
    const bool same = bit_equal(ys, yp);
    if (!same) ++g_mismatches;
    report("map tanh n=" + std::to_string(n), ts, tp, same);
}

void bench_elementwise(size_t n) {
    const auto a = random_vec(n, 44);
    const auto b = random_vec(n, 55);
    std::vector<double> cs(n), cp(n);
    const double ts = time_best_of(3, [&] { K::serial::mul(a.data(), b.data(), cs.data(), n); });
    K::set_parallel(true);
    const double tp = time_best_of(3, [&] { K::mul(a.data(), b.data(), cp.data(), n); });
    const bool same = bit_equal(cs, cp);
    if (!same) ++g_mismatches;
    report("mul n=" + std::to_string(n), ts, tp, same);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n\n", omp_get_max_threads());
#else
    std::printf("OpenMP not available, parallel path falls back to serial\n\n");
#endif

    bench_matmul(64, 64, 64);
    bench_matmul(256, 256, 256);
    bench_matmul(512, 128, 512);
    bench_map(1u << 16);
    bench_map(1u << 20);
    bench_elementwise(1u << 20);

    if (g_mismatches > 0) {
        std::printf("\n%d kernel(s) diverged from the serial reference\n", g_mismatches);
        return 1;
    }
    std::printf("\nall kernels bit-identical to the serial reference\n");
    return 0;
}
