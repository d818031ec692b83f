#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "hypergen/kernels.hpp"
#include "hypergen/rng.hpp"

namespace K = hypergen::kernels;
using K::Unary;

namespace {

std::vector<double> rand_vec(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    hypergen::Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Independent triple-loop oracle, accumulation order deliberately different
// from the library kernels.
std::vector<double> naive_nn(const std::vector<double>& a, const std::vector<double>& b,
                             int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += a[static_cast<size_t>(i) * k + l] * b[static_cast<size_t>(l) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    return c;
}

bool close_all(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (std::fabs(a[i] - b[i]) > tol * std::max(1.0, std::fabs(b[i]))) return false;
    return true;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("matmul_nn matches a naive oracle") {
    const int m = 13, k = 17, n = 11;
    const auto a = rand_vec(static_cast<size_t>(m) * k, 1);
    const auto b = rand_vec(static_cast<size_t>(k) * n, 2);
    std::vector<double> c(static_cast<size_t>(m) * n);
    K::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    CHECK(close_all(c, naive_nn(a, b, m, k, n), 1e-12));
}

TEST_CASE("matmul_nt matches the equivalent nn product") {
    const int m = 9, k = 14, n = 8;
    const auto a = rand_vec(static_cast<size_t>(m) * k, 3);
    const auto bt = rand_vec(static_cast<size_t>(n) * k, 4);  // (n,k)
    std::vector<double> b(static_cast<size_t>(k) * n);        // (k,n)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            b[static_cast<size_t>(j) * n + i] = bt[static_cast<size_t>(i) * k + j];

    std::vector<double> c(static_cast<size_t>(m) * n);
    K::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
    CHECK(close_all(c, naive_nn(a, b, m, k, n), 1e-12));
}

TEST_CASE("matmul_tn matches the equivalent nn product") {
    const int m = 10, k = 12, n = 7;
    const auto at = rand_vec(static_cast<size_t>(k) * m, 5);  // (k,m)
    const auto b = rand_vec(static_cast<size_t>(k) * n, 6);
    std::vector<double> a(static_cast<size_t>(m) * k);  // (m,k)
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < m; ++j)
            a[static_cast<size_t>(j) * k + i] = at[static_cast<size_t>(i) * m + j];

    std::vector<double> c(static_cast<size_t>(m) * n);
    K::matmul_tn(at.data(), b.data(), c.data(), m, k, n);
    CHECK(close_all(c, naive_nn(a, b, m, k, n), 1e-12));
}

TEST_CASE("unary maps match the standard library") {
    const auto x = rand_vec(501, 7, -2.0, 2.0);
    std::vector<double> y(x.size());

    K::map_unary(Unary::Relu, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == (x[i] > 0.0 ? x[i] : 0.0));

    K::map_unary(Unary::Tanh, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(std::tanh(x[i])).epsilon(1e-15));

    K::map_unary(Unary::Sigmoid, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(y[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))).epsilon(1e-15));

    K::map_unary(Unary::Exp, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(std::exp(x[i])).epsilon(1e-15));

    K::map_unary(Unary::Neg, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == -x[i]);

    K::map_unary(Unary::Square, x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i] * x[i]);
}

TEST_CASE("activation backward kernels apply the right local derivative") {
    const auto x = rand_vec(64, 8, -2.0, 2.0);
    const auto g = rand_vec(64, 9);
    std::vector<double> y(64), out(64);

    K::relu_bwd(x.data(), g.data(), out.data(), 64);
    for (size_t i = 0; i < 64; ++i) CHECK(out[i] == (x[i] > 0.0 ? g[i] : 0.0));

    K::map_unary(Unary::Tanh, x.data(), y.data(), 64);
    K::tanh_bwd(y.data(), g.data(), out.data(), 64);
    for (size_t i = 0; i < 64; ++i)
        CHECK(out[i] == doctest::Approx(g[i] * (1.0 - y[i] * y[i])).epsilon(1e-14));

    K::map_unary(Unary::Sigmoid, x.data(), y.data(), 64);
    K::sigmoid_bwd(y.data(), g.data(), out.data(), 64);
    for (size_t i = 0; i < 64; ++i)
        CHECK(out[i] == doctest::Approx(g[i] * y[i] * (1.0 - y[i])).epsilon(1e-14));
}

TEST_CASE("elementwise binary kernels and scale") {
    const auto a = rand_vec(97, 10);
    const auto b = rand_vec(97, 11);
    std::vector<double> c(97);

    K::add(a.data(), b.data(), c.data(), 97);
    for (size_t i = 0; i < 97; ++i) CHECK(c[i] == a[i] + b[i]);
    K::sub(a.data(), b.data(), c.data(), 97);
    for (size_t i = 0; i < 97; ++i) CHECK(c[i] == a[i] - b[i]);
    K::mul(a.data(), b.data(), c.data(), 97);
    for (size_t i = 0; i < 97; ++i) CHECK(c[i] == a[i] * b[i]);
    K::scale(a.data(), 2.5, -0.75, c.data(), 97);
    for (size_t i = 0; i < 97; ++i) CHECK(c[i] == 2.5 * a[i] - 0.75);
}

TEST_CASE("reductions accumulate serially left to right") {
    const auto x = rand_vec(1001, 12);
    const auto y = rand_vec(1001, 13);

    double s = 0.0, d = 0.0, q = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        s += x[i];
        d += x[i] * y[i];
        q += x[i] * x[i];
    }
    // Bitwise equality: the kernel must use the same accumulation order.
    CHECK(K::sum(x.data(), x.size()) == s);
    CHECK(K::dot(x.data(), y.data(), x.size()) == d);
    CHECK(K::sumsq(x.data(), x.size()) == q);
}

TEST_CASE("parallel dispatch is bit-identical to the serial reference") {
    // Sizes straddle the dispatch thresholds so both code paths are exercised.
    const std::vector<std::array<int, 3>> shapes = {
        {4, 4, 4}, {8, 8, 8}, {64, 64, 64}, {96, 128, 80}};
    for (const auto& s : shapes) {
        const int m = s[0], k = s[1], n = s[2];
        const auto a = rand_vec(static_cast<size_t>(m) * k, 20 + static_cast<uint64_t>(m));
        const auto b = rand_vec(static_cast<size_t>(k) * n, 30 + static_cast<uint64_t>(n));
        std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs.size());
        K::serial::matmul_nn(a.data(), b.data(), cs.data(), m, k, n);
        K::set_parallel(true);
        K::matmul_nn(a.data(), b.data(), cp.data(), m, k, n);
        CHECK(bit_equal(cs, cp));
    }

    for (size_t n : {100u, 20000u, 70000u}) {
        const auto x = rand_vec(n, 40 + n);
        std::vector<double> ys(n), yp(n);
        K::serial::map_unary(Unary::Tanh, x.data(), ys.data(), n);
        K::set_parallel(true);
        K::map_unary(Unary::Tanh, x.data(), yp.data(), n);
        CHECK(bit_equal(ys, yp));

        const auto b = rand_vec(n, 50 + n);
        std::vector<double> cs(n), cp(n);
        K::serial::mul(x.data(), b.data(), cs.data(), n);
        K::mul(x.data(), b.data(), cp.data(), n);
        CHECK(bit_equal(cs, cp));
    }
}

TEST_CASE("disabling parallel dispatch still computes the same values") {
    const int m = 32, k = 32, n = 32;
    const auto a = rand_vec(static_cast<size_t>(m) * k, 60);
    const auto b = rand_vec(static_cast<size_t>(k) * n, 61);
    std::vector<double> c1(static_cast<size_t>(m) * n), c2(c1.size());

    K::set_parallel(false);
    CHECK_FALSE(K::parallel_enabled());
    K::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
    K::set_parallel(true);
    CHECK(K::parallel_enabled());
    K::matmul_nn(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(bit_equal(c1, c2));
}

TEST_SUITE_END();
