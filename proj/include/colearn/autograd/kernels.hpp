#ifndef COLEARN_AUTOGRAD_KERNELS_HPP
#define COLEARN_AUTOGRAD_KERNELS_HPP

// Raw numeric kernels behind the differentiable primitives. The default
// versions are OpenMP-parallel (outer loops over channels or planes, GEMM via
// Eigen); `reference::` keeps straightforward serial loops for testing and
// benchmarking. Parallel loops never reduce across threads, so results do not
// depend on the thread count.

#include <cstddef>
#include <span>

#include "colearn/autograd/tensor.hpp"

namespace colearn::ag::kernels {

struct conv3d_geometry {
    std::size_t batch = 0, in_channels = 0, out_channels = 0;
    std::size_t depth = 0, height = 0, width = 0;
    std::size_t kernel = 0, stride = 1, padding = 0;
    std::size_t out_depth = 0, out_height = 0, out_width = 0;

    std::size_t in_plane() const { return depth * height * width; }
    std::size_t out_plane() const { return out_depth * out_height * out_width; }
    std::size_t patch() const { return in_channels * kernel * kernel * kernel; }
};

/// Validates extents and computes output size floor((D + 2p - k)/s) + 1.
conv3d_geometry make_conv3d_geometry(const shape_t& input, const shape_t& kernel,
                                     std::size_t stride, std::size_t padding);

void conv3d_forward(const conv3d_geometry& g, std::span<const real> input,
                    std::span<const real> kernel, std::span<const real> bias,
                    std::span<real> out);

/// Accumulates into whichever gradient spans are non-empty.
void conv3d_backward(const conv3d_geometry& g, std::span<const real> input,
                     std::span<const real> kernel, std::span<const real> grad_out,
                     std::span<real> grad_input, std::span<real> grad_kernel,
                     std::span<real> grad_bias);

struct pool3d_geometry {
    std::size_t planes = 0; // batch * channels
    std::size_t depth = 0, height = 0, width = 0;
    std::size_t window = 0, stride = 0;
    std::size_t out_depth = 0, out_height = 0, out_width = 0;
};

pool3d_geometry make_pool3d_geometry(const shape_t& input, std::size_t window, std::size_t stride);

/// Max over each window; `argmax` receives the flat input index of the winner
/// (first maximum in linear order).
void maxpool3d_forward(const pool3d_geometry& g, std::span<const real> input,
                       std::span<real> out, std::span<std::size_t> argmax);

/// C[m x n] (+)= A[m x k] * B[k x n], row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate);
/// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate);
/// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c,
             bool accumulate);

namespace reference {

void conv3d_forward(const conv3d_geometry& g, std::span<const real> input,
                    std::span<const real> kernel, std::span<const real> bias,
                    std::span<real> out);

void maxpool3d_forward(const pool3d_geometry& g, std::span<const real> input,
                       std::span<real> out, std::span<std::size_t> argmax);

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c);

} // namespace reference

} // namespace colearn::ag::kernels

#endif // COLEARN_AUTOGRAD_KERNELS_HPP
