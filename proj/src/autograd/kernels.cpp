#include "colearn/autograd/kernels.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace colearn::ag::kernels {

namespace {

using row_matrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using cmap = Eigen::Map<const row_matrix>;
using mmap = Eigen::Map<row_matrix>;

using index_t = std::ptrdiff_t;

// col[(ci,kz,ky,kx), (oz,oy,ox)] for a single batch item.
void im2col(const conv3d_geometry& g, const real* in, real* col) {
    const std::size_t k = g.kernel;
    const std::size_t rows = g.patch();
    const std::size_t cols = g.out_plane();
#pragma omp parallel for schedule(static)
    for (index_t r = 0; r < static_cast<index_t>(rows); ++r) {
        const std::size_t ci = static_cast<std::size_t>(r) / (k * k * k);
        const std::size_t rem = static_cast<std::size_t>(r) % (k * k * k);
        const std::size_t kz = rem / (k * k), ky = (rem / k) % k, kx = rem % k;
        const real* plane = in + ci * g.in_plane();
        real* dst = col + static_cast<std::size_t>(r) * cols;
        for (std::size_t oz = 0; oz < g.out_depth; ++oz) {
            const index_t z = static_cast<index_t>(oz * g.stride + kz) - static_cast<index_t>(g.padding);
            for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                const index_t y = static_cast<index_t>(oy * g.stride + ky) - static_cast<index_t>(g.padding);
                real* row = dst + (oz * g.out_height + oy) * g.out_width;
                const bool inside = z >= 0 && z < static_cast<index_t>(g.depth) && y >= 0 &&
                                    y < static_cast<index_t>(g.height);
                for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                    const index_t x = static_cast<index_t>(ox * g.stride + kx) - static_cast<index_t>(g.padding);
                    row[ox] = (inside && x >= 0 && x < static_cast<index_t>(g.width))
                        ? plane[(static_cast<std::size_t>(z) * g.height + static_cast<std::size_t>(y)) * g.width +
                                static_cast<std::size_t>(x)]
                        : 0.0;
                }
            }
        }
    }
}

// Scatter-add of im2col's adjoint; parallel over input channels so that no two
// threads write the same plane.
void col2im(const conv3d_geometry& g, const real* col, real* in) {
    const std::size_t k = g.kernel;
    const std::size_t cols = g.out_plane();
#pragma omp parallel for schedule(static)
    for (index_t ci = 0; ci < static_cast<index_t>(g.in_channels); ++ci) {
        real* plane = in + static_cast<std::size_t>(ci) * g.in_plane();
        for (std::size_t rem = 0; rem < k * k * k; ++rem) {
            const std::size_t kz = rem / (k * k), ky = (rem / k) % k, kx = rem % k;
            const real* src = col + (static_cast<std::size_t>(ci) * k * k * k + rem) * cols;
            for (std::size_t oz = 0; oz < g.out_depth; ++oz) {
                const index_t z = static_cast<index_t>(oz * g.stride + kz) - static_cast<index_t>(g.padding);
                if (z < 0 || z >= static_cast<index_t>(g.depth)) continue;
                for (std::size_t oy = 0; oy < g.out_height; ++oy) {
                    const index_t y = static_cast<index_t>(oy * g.stride + ky) - static_cast<index_t>(g.padding);
                    if (y < 0 || y >= static_cast<index_t>(g.height)) continue;
                    const real* row = src + (oz * g.out_height + oy) * g.out_width;
                    real* dst = plane + (static_cast<std::size_t>(z) * g.height + static_cast<std::size_t>(y)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        const index_t x = static_cast<index_t>(ox * g.stride + kx) - static_cast<index_t>(g.padding);
                        if (x >= 0 && x < static_cast<index_t>(g.width)) dst[x] += row[ox];
                    }
                }
            }
        }
    }
}

} // namespace

conv3d_geometry make_conv3d_geometry(const shape_t& input, const shape_t& kernel,
                                     std::size_t stride, std::size_t padding) {
    if (input.size() != 5) throw shape_error("conv3d: input must be [B,C,D,H,W], got " + shape_str(input));
    if (kernel.size() != 5) throw shape_error("conv3d: kernel must be [Cout,Cin,k,k,k], got " + shape_str(kernel));
    if (kernel[1] != input[1]) {
        throw shape_error("conv3d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                          std::to_string(input[1]));
    }
    if (kernel[2] != kernel[3] || kernel[2] != kernel[4]) throw shape_error("conv3d: kernel must be cubic");
    if (kernel[2] % 2 == 0) throw shape_error("conv3d: kernel size must be odd");
    if (stride == 0) throw shape_error("conv3d: stride must be positive");
    conv3d_geometry g;
    g.batch = input[0];
    g.in_channels = input[1];
    g.out_channels = kernel[0];
    g.depth = input[2];
    g.height = input[3];
    g.width = input[4];
    g.kernel = kernel[2];
    g.stride = stride;
    g.padding = padding;
    for (std::size_t extent : {g.depth, g.height, g.width}) {
        if (extent + 2 * padding < g.kernel) throw shape_error("conv3d: padded input smaller than kernel");
    }
    g.out_depth = (g.depth + 2 * padding - g.kernel) / stride + 1;
    g.out_height = (g.height + 2 * padding - g.kernel) / stride + 1;
    g.out_width = (g.width + 2 * padding - g.kernel) / stride + 1;
    return g;
}

void conv3d_forward(const conv3d_geometry& g, std::span<const real> input,
                    std::span<const real> kernel, std::span<const real> bias,
                    std::span<real> out) {
    const std::size_t patch = g.patch(), cols = g.out_plane();
    std::vector<real> col(patch * cols);
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(g, input.data() + b * g.in_channels * g.in_plane(), col.data());
        real* dst = out.data() + b * g.out_channels * cols;
        gemm_nn(g.out_channels, cols, patch, kernel.data(), col.data(), dst, false);
        if (!bias.empty()) {
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                real* row = dst + co * cols;
                for (std::size_t p = 0; p < cols; ++p) row[p] += bias[co];
            }
        }
    }
}

void conv3d_backward(const conv3d_geometry& g, std::span<const real> input,
                     std::span<const real> kernel, std::span<const real> grad_out,
                     std::span<real> grad_input, std::span<real> grad_kernel,
                     std::span<real> grad_bias) {
    const std::size_t patch = g.patch(), cols = g.out_plane();
    std::vector<real> col(patch * cols);
    for (std::size_t b = 0; b < g.batch; ++b) {
        const real* go = grad_out.data() + b * g.out_channels * cols;
        if (!grad_bias.empty()) {
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                real acc = 0.0;
                for (std::size_t p = 0; p < cols; ++p) acc += go[co * cols + p];
                grad_bias[co] += acc;
            }
        }
        if (!grad_kernel.empty()) {
            im2col(g, input.data() + b * g.in_channels * g.in_plane(), col.data());
            gemm_nt(g.out_channels, patch, cols, go, col.data(), grad_kernel.data(), true);
        }
        if (!grad_input.empty()) {
            gemm_tn(patch, cols, g.out_channels, kernel.data(), go, col.data(), false);
            col2im(g, col.data(), grad_input.data() + b * g.in_channels * g.in_plane());
        }
    }
}

pool3d_geometry make_pool3d_geometry(const shape_t& input, std::size_t window, std::size_t stride) {
    if (input.size() != 5) throw shape_error("maxpool3d: input must be [B,C,D,H,W], got " + shape_str(input));
    if (window == 0 || stride == 0) throw shape_error("maxpool3d: window and stride must be positive");
    pool3d_geometry g;
    g.planes = input[0] * input[1];
    g.depth = input[2];
    g.height = input[3];
    g.width = input[4];
    if (window > g.depth || window > g.height || window > g.width) {
        throw shape_error("maxpool3d: window " + std::to_string(window) + " exceeds volume " + shape_str(input));
    }
    g.window = window;
    g.stride = stride;
    g.out_depth = (g.depth - window) / stride + 1;
    g.out_height = (g.height - window) / stride + 1;
    g.out_width = (g.width - window) / stride + 1;
    return g;
}

void maxpool3d_forward(const pool3d_geometry& g, std::span<const real> input,
                       std::span<real> out, std::span<std::size_t> argmax) {
    const std::size_t in_plane = g.depth * g.height * g.width;
    const std::size_t out_plane = g.out_depth * g.out_height * g.out_width;
#pragma omp parallel for schedule(static)
    for (index_t pl = 0; pl < static_cast<index_t>(g.planes); ++pl) {
        const std::size_t base = static_cast<std::size_t>(pl) * in_plane;
        for (std::size_t oz = 0; oz < g.out_depth; ++oz)
            for (std::size_t oy = 0; oy < g.out_height; ++oy)
                for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                    real best = -std::numeric_limits<real>::infinity();
                    std::size_t best_idx = base + (oz * g.stride * g.height + oy * g.stride) * g.width + ox * g.stride;
                    for (std::size_t dz = 0; dz < g.window; ++dz)
                        for (std::size_t dy = 0; dy < g.window; ++dy)
                            for (std::size_t dx = 0; dx < g.window; ++dx) {
                                const std::size_t idx = base +
                                    ((oz * g.stride + dz) * g.height + oy * g.stride + dy) * g.width + ox * g.stride + dx;
                                if (input[idx] > best) {
                                    best = input[idx];
                                    best_idx = idx;
                                }
                            }
                    const std::size_t o = static_cast<std::size_t>(pl) * out_plane +
                                          (oz * g.out_height + oy) * g.out_width + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate) {
    mmap cm(c, static_cast<index_t>(m), static_cast<index_t>(n));
    cmap am(a, static_cast<index_t>(m), static_cast<index_t>(k));
    cmap bm(b, static_cast<index_t>(k), static_cast<index_t>(n));
    if (accumulate) cm.noalias() += am * bm;
    else cm.noalias() = am * bm;
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate) {
    mmap cm(c, static_cast<index_t>(m), static_cast<index_t>(n));
    cmap am(a, static_cast<index_t>(m), static_cast<index_t>(k));
    cmap bm(b, static_cast<index_t>(n), static_cast<index_t>(k));
    if (accumulate) cm.noalias() += am * bm.transpose();
    else cm.noalias() = am * bm.transpose();
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate) {
    mmap cm(c, static_cast<index_t>(m), static_cast<index_t>(n));
    cmap am(a, static_cast<index_t>(k), static_cast<index_t>(m));
    cmap bm(b, static_cast<index_t>(k), static_cast<index_t>(n));
    if (accumulate) cm.noalias() += am.transpose() * bm;
    else cm.noalias() = am.transpose() * bm;
}

namespace reference {

void conv3d_forward(const conv3d_geometry& g, std::span<const real> input,
                    std::span<const real> kernel, std::span<const real> bias,
                    std::span<real> out) {
    const std::size_t k = g.kernel;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oz = 0; oz < g.out_depth; ++oz)
                for (std::size_t oy = 0; oy < g.out_height; ++oy)
                    for (std::size_t ox = 0; ox < g.out_width; ++ox) {
                        real acc = bias.empty() ? 0.0 : bias[co];
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                            for (std::size_t kz = 0; kz < k; ++kz)
                                for (std::size_t ky = 0; ky < k; ++ky)
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const index_t z = static_cast<index_t>(oz * g.stride + kz) - static_cast<index_t>(g.padding);
                                        const index_t y = static_cast<index_t>(oy * g.stride + ky) - static_cast<index_t>(g.padding);
                                        const index_t x = static_cast<index_t>(ox * g.stride + kx) - static_cast<index_t>(g.padding);
                                        if (z < 0 || y < 0 || x < 0 || z >= static_cast<index_t>(g.depth) ||
                                            y >= static_cast<index_t>(g.height) || x >= static_cast<index_t>(g.width))
                                            continue;
                                        const real v = input[(((b * g.in_channels + ci) * g.depth + static_cast<std::size_t>(z)) * g.height +
                                                              static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)];
                                        const real w = kernel[(((co * g.in_channels + ci) * k + kz) * k + ky) * k + kx];
                                        acc += v * w;
                                    }
                        out[(((b * g.out_channels + co) * g.out_depth + oz) * g.out_height + oy) * g.out_width + ox] = acc;
                    }
}

void maxpool3d_forward(const pool3d_geometry& g, std::span<const real> input,
                       std::span<real> out, std::span<std::size_t> argmax) {
    const std::size_t in_plane = g.depth * g.height * g.width;
    std::size_t o = 0;
    for (std::size_t pl = 0; pl < g.planes; ++pl)
        for (std::size_t oz = 0; oz < g.out_depth; ++oz)
            for (std::size_t oy = 0; oy < g.out_height; ++oy)
                for (std::size_t ox = 0; ox < g.out_width; ++ox, ++o) {
                    bool first = true;
                    for (std::size_t dz = 0; dz < g.window; ++dz)
                        for (std::size_t dy = 0; dy < g.window; ++dy)
                            for (std::size_t dx = 0; dx < g.window; ++dx) {
                                const std::size_t idx = pl * in_plane +
                                    ((oz * g.stride + dz) * g.height + oy * g.stride + dy) * g.width + ox * g.stride + dx;
                                if (first || input[idx] > out[o]) {
                                    out[o] = input[idx];
                                    argmax[o] = idx;
                                    first = false;
                                }
                            }
                }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            real acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

} // namespace reference

} // namespace colearn::ag::kernels
