// Times the parallel kernels against their serial references on shapes the
// models actually use, and checks that both give the same numbers.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "colearn/autograd/kernels.hpp"
#include "colearn/geometry/geometry.hpp"
#include "colearn/runtime.hpp"

using namespace colearn;
namespace k = colearn::ag::kernels;

namespace {

double best_ms(int repeats, const std::function<void()>& f) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void row(const std::string& name, double fast, double ref, const std::string& check) {
    std::printf("%-44s %10.3f %10.3f %8.2fx  %s\n", name.c_str(), fast, ref, ref / fast, check.c_str());
}

bool bench_conv(std::size_t batch, std::size_t cin, std::size_t cout, std::size_t size, int repeats, std::mt19937_64& rng) {
    const auto g = k::make_conv3d_geometry({batch, cin, size, size, size}, {cout, cin, 3, 3, 3}, 1, 1);
    const auto x = random_values(batch * cin * g.in_plane(), rng);
    const auto w = random_values(cout * g.patch(), rng);
    const auto b = random_values(cout, rng);
    std::vector<double> fast(batch * cout * g.out_plane()), ref(fast.size());
    const double tf = best_ms(repeats, [&] { k::conv3d_forward(g, x, w, b, fast); });
    const double tr = best_ms(repeats, [&] { k::reference::conv3d_forward(g, x, w, b, ref); });
    const double d = max_diff(fast, ref);
    char name[96];
    std::snprintf(name, sizeof name, "conv3d B%zu %zu->%zu %zu^3 k3", batch, cin, cout, size);
    char check[64];
    std::snprintf(check, sizeof check, "max |diff| %.1e", d);
    row(name, tf, tr, check);
    return d <= 1e-10;
}

bool bench_pool(std::size_t planes, std::size_t size, int repeats, std::mt19937_64& rng) {
    const auto g = k::make_pool3d_geometry({1, planes, size, size, size}, 2, 2);
    const auto x = random_values(planes * size * size * size, rng);
    const std::size_t n = planes * g.out_depth * g.out_height * g.out_width;
    std::vector<double> fast(n), ref(n);
    std::vector<std::size_t> af(n), ar(n);
    const double tf = best_ms(repeats, [&] { k::maxpool3d_forward(g, x, fast, af); });
    const double tr = best_ms(repeats, [&] { k::reference::maxpool3d_forward(g, x, ref, ar); });
    char name[96];
    std::snprintf(name, sizeof name, "maxpool3d %zu planes %zu^3", planes, size);
    const bool same = fast == ref && af == ar;
    row(name, tf, tr, same ? "identical" : "MISMATCH");
    return same;
}

bool bench_gemm(std::size_t m, std::size_t n, std::size_t kk, int repeats, std::mt19937_64& rng) {
    const auto a = random_values(m * kk, rng);
    const auto b = random_values(kk * n, rng);
    std::vector<double> fast(m * n), ref(m * n);
    const double tf = best_ms(repeats, [&] { k::gemm_nn(m, n, kk, a.data(), b.data(), fast.data(), false); });
    const double tr = best_ms(repeats, [&] { k::reference::gemm_nn(m, n, kk, a.data(), b.data(), ref.data()); });
    const double d = max_diff(fast, ref);
    char name[96];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", m, n, kk);
    char check[64];
    std::snprintf(check, sizeof check, "max |diff| %.1e", d);
    row(name, tf, tr, check);
    return d <= 1e-9 * static_cast<double>(kk);
}

bool bench_radius(std::size_t n, double radius, int repeats, std::mt19937_64& rng) {
    geom::point_cloud cloud;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        geom::vec3 p{gauss(rng), gauss(rng), gauss(rng)};
        const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        for (auto& c : p) c /= r;
        cloud.points.push_back(p);
    }
    geom::spatial_graph fast, ref;
    const double tf = best_ms(repeats, [&] { fast = geom::radius_graph(cloud, radius); });
    const double tr = best_ms(repeats, [&] { ref = geom::reference::radius_graph(cloud, radius); });
    const bool same = fast.sources == ref.sources && fast.targets == ref.targets;
    char name[96];
    std::snprintf(name, sizeof name, "radius_graph %zu pts r=%.2f (%zu edges)", n, radius, fast.edge_count());
    row(name, tf, tr, same ? "identical" : "MISMATCH");
    return same;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Parallel kernels against their serial references."};
    bool quick = false;
    int repeats = 5;
    app.add_flag("--quick", quick, "small shapes, one repeat");
    app.add_option("--repeats", repeats, "best of this many runs");
    CLI11_PARSE(app, argc, argv);
    if (quick) repeats = 1;

    std::mt19937_64 rng(2024);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-44s %10s %10s %9s  %s\n", "kernel", "fast ms", "ref ms", "speedup", "agreement");
    bool ok = true;
    if (quick) {
        ok &= bench_conv(2, 4, 8, 8, repeats, rng);
        ok &= bench_pool(8, 8, repeats, rng);
        ok &= bench_gemm(32, 32, 32, repeats, rng);
        ok &= bench_radius(256, 0.5, repeats, rng);
    } else {
        ok &= bench_conv(8, 4, 32, 32, repeats, rng);
        ok &= bench_conv(8, 32, 64, 16, repeats, rng);
        ok &= bench_conv(8, 64, 128, 8, repeats, rng);
        ok &= bench_pool(256, 32, repeats, rng);
        ok &= bench_gemm(256, 256, 256, repeats, rng);
        ok &= bench_gemm(4096, 64, 32, repeats, rng);
        ok &= bench_radius(512, 0.25, repeats, rng);
        ok &= bench_radius(512, 0.5, repeats, rng);
        ok &= bench_radius(4096, 0.25, repeats, rng);
    }
    std::printf("%s\n", ok ? "all kernels agree with their references" : "DISAGREEMENT");
    return ok ? 0 : 1;
}
