// Times the serial reference kernels against the OpenMP ones on the shapes
// the models actually use, and checks the outputs stay bitwise identical.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "rsmoe/kernels.hpp"
#include "rsmoe/rng.hpp"

namespace {

using namespace rsmoe;
using clk = std::chrono::steady_clock;

double run_ms(int reps, auto&& body) {
    body();  // warm up
    const auto t0 = clk::now();
    for (int r = 0; r < reps; ++r) body();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(std::vector<double>& v, Rng& g) {
    for (auto& x : v) x = uniform(g, -1.0, 1.0);
}

struct Case {
    const char* name;
    int m, k, n;
};

}  // namespace

int main() {
    Rng g = make_rng(7, 0);
    const Case cases[] = {
        {"mm_nn 64x64x64", 64, 64, 64},       {"mm_nn 104x64x128", 104, 64, 128},
        {"mm_nn 104x64x256", 104, 64, 256},   {"mm_nn 16x192x64", 16, 192, 64},
        {"mm_nn 256x256x256", 256, 256, 256},
    };
    std::printf("%-22s %10s %10s %8s  %s\n", "kernel", "serial ms", "openmp ms", "speedup",
                "bitwise");
    for (const Case& c : cases) {
        std::vector<double> a((size_t)c.m * c.k), b((size_t)c.k * c.n);
        std::vector<double> y1((size_t)c.m * c.n, 0.0), y2((size_t)c.m * c.n, 0.0);
        fill(a, g);
        fill(b, g);
        const int reps = c.m >= 256 ? 20 : 200;
        kernels::set_mode(kernels::Mode::serial);
        const double ts = run_ms(reps, [&] {
            std::memset(y1.data(), 0, y1.size() * sizeof(double));
            kernels::mm_nn(a.data(), b.data(), y1.data(), c.m, c.k, c.n);
        });
        kernels::set_mode(kernels::Mode::parallel);
        const double tp = run_ms(reps, [&] {
            std::memset(y2.data(), 0, y2.size() * sizeof(double));
            kernels::mm_nn(a.data(), b.data(), y2.data(), c.m, c.k, c.n);
        });
        const bool same = std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0;
        std::printf("%-22s %10.3f %10.3f %7.2fx  %s\n", c.name, ts, tp, ts / tp,
                    same ? "yes" : "NO");
        if (!same) return 1;
    }

    // softmax and layer norm at attention-row shapes
    {
        const int rows = 104, cols = 104;
        std::vector<double> x((size_t)rows * cols), y1(x.size()), y2(x.size());
        fill(x, g);
        kernels::set_mode(kernels::Mode::serial);
        const double ts = run_ms(500, [&] {
            kernels::softmax_lanes(x.data(), y1.data(), rows, cols, cols, 1);
        });
        kernels::set_mode(kernels::Mode::parallel);
        const double tp = run_ms(500, [&] {
            kernels::softmax_lanes(x.data(), y2.data(), rows, cols, cols, 1);
        });
        const bool same = std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0;
        std::printf("%-22s %10.3f %10.3f %7.2fx  %s\n", "softmax 104x104", ts, tp, ts / tp,
                    same ? "yes" : "NO");
        if (!same) return 1;
    }
    {
        const int rows = 104, cols = 64;
        std::vector<double> x((size_t)rows * cols), gm(cols, 1.0), bt(cols, 0.0);
        std::vector<double> y1(x.size()), y2(x.size()), mean(rows), rstd(rows);
        fill(x, g);
        kernels::set_mode(kernels::Mode::serial);
        const double ts = run_ms(500, [&] {
            kernels::layer_norm_rows(x.data(), gm.data(), bt.data(), y1.data(), mean.data(),
                                     rstd.data(), rows, cols, 1e-5);
        });
        kernels::set_mode(kernels::Mode::parallel);
        const double tp = run_ms(500, [&] {
            kernels::layer_norm_rows(x.data(), gm.data(), bt.data(), y2.data(), mean.data(),
                                     rstd.data(), rows, cols, 1e-5);
        });
        const bool same = std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0;
        std::printf("%-22s %10.3f %10.3f %7.2fx  %s\n", "layer_norm 104x64", ts, tp, ts / tp,
                    same ? "yes" : "NO");
        if (!same) return 1;
    }
    return 0;
}
