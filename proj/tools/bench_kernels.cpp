// Times the OpenMP kernels against the serial reference on transformer-shaped
// workloads and checks that the results agree bit for bit.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "caplab/kernels.hpp"
#include "caplab/rng.hpp"

using caplab::Rng;
namespace kernels = caplab::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.normal());
    return v;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct Case {
    std::string name;
    double serial_ms = 0, parallel_ms = 0;
    bool equal = false;
};

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    Rng rng(7);
    std::vector<Case> cases;

    {
        const int m = 512, k = 384, n = 512;
        auto a = random_vec(size_t(m) * k, rng), b = random_vec(size_t(k) * n, rng);
        std::vector<float> cs(size_t(m) * n), cp(size_t(m) * n);
        Case c{"matmul " + std::to_string(m) + "x" + std::to_string(k) + "x" +
               std::to_string(n)};
        c.serial_ms = time_ms(
            [&] { kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); }, reps);
        c.parallel_ms =
            time_ms([&] { kernels::matmul(a.data(), b.data(), cp.data(), m, k, n); }, reps);
        c.equal = bit_equal(cs, cp);
        cases.push_back(c);
    }
    {
        const int m = 512, n = 384, k = 512;  // c[m x k] = a[m x n] * b^T
        auto a = random_vec(size_t(m) * n, rng), b = random_vec(size_t(k) * n, rng);
        std::vector<float> cs(size_t(m) * k), cp(size_t(m) * k);
        Case c{"matmul_nt " + std::to_string(m) + "x" + std::to_string(n) + "x" +
               std::to_string(k)};
        c.serial_ms = time_ms(
            [&] { kernels::serial::matmul_nt(a.data(), b.data(), cs.data(), m, n, k); }, reps);
        c.parallel_ms =
            time_ms([&] { kernels::matmul_nt(a.data(), b.data(), cp.data(), m, n, k); }, reps);
        c.equal = bit_equal(cs, cp);
        cases.push_back(c);
    }
    {
        const int slices = 2048, L = 256;
        auto x = random_vec(size_t(slices) * L, rng);
        std::vector<float> ys(x.size()), yp(x.size());
        Case c{"softmax_lanes " + std::to_string(slices) + "x" + std::to_string(L)};
        c.serial_ms = time_ms(
            [&] { kernels::serial::softmax_lanes(x.data(), ys.data(), slices, L, 1); }, reps);
        c.parallel_ms = time_ms(
            [&] { kernels::softmax_lanes(x.data(), yp.data(), slices, L, 1); }, reps);
        c.equal = bit_equal(ys, yp);
        cases.push_back(c);
    }
    {
        const int rows = 4096, n = 384;
        auto x = random_vec(size_t(rows) * n, rng);
        auto g = random_vec(size_t(n), rng), b = random_vec(size_t(n), rng);
        std::vector<float> ys(x.size()), yp(x.size());
        Case c{"layer_norm_rows " + std::to_string(rows) + "x" + std::to_string(n)};
        c.serial_ms = time_ms(
            [&] {
                kernels::serial::layer_norm_rows(x.data(), g.data(), b.data(), ys.data(), rows,
                                                 n, 1e-5);
            },
            reps);
        c.parallel_ms = time_ms(
            [&] {
                kernels::layer_norm_rows(x.data(), g.data(), b.data(), yp.data(), rows, n,
                                         1e-5);
            },
            reps);
        c.equal = bit_equal(ys, yp);
        cases.push_back(c);
    }
    {
        const size_t n = size_t(1) << 22;
        auto x = random_vec(n, rng);
        std::vector<float> ys(n), yp(n);
        Case c{"gelu 4M"};
        c.serial_ms =
            time_ms([&] { kernels::serial::gelu(x.data(), ys.data(), n); }, reps);
        c.parallel_ms = time_ms([&] { kernels::gelu(x.data(), yp.data(), n); }, reps);
        c.equal = bit_equal(ys, yp);
        cases.push_back(c);
    }

    std::printf("threads: %d\n", kernels::threads());
    std::printf("%-28s %12s %12s %9s %s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "bit-equal");
    bool all_equal = true;
    for (const auto& c : cases) {
        std::printf("%-28s %12.3f %12.3f %8.2fx %s\n", c.name.c_str(), c.serial_ms,
                    c.parallel_ms, c.serial_ms / c.parallel_ms, c.equal ? "yes" : "NO");
        all_equal = all_equal && c.equal;
    }
    if (!all_equal) {
        std::printf("FAIL: parallel kernels diverge from the serial reference\n");
        return 1;
    }
    return 0;
}
