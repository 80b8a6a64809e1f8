#ifndef COLEARN_AUTOGRAD_OPS_HPP
#define COLEARN_AUTOGRAD_OPS_HPP

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "colearn/autograd/tensor.hpp"

namespace colearn::ag {

using rng_t = std::mt19937_64;

/// Cross-correlation of [B,Cin,D,H,W] with [Cout,Cin,k,k,k] plus per-channel
/// bias (`bias` may be undefined).
tensor conv3d(const tensor& input, const tensor& kernel, const tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

struct pool_result {
    tensor output;
    std::vector<std::size_t> argmax; ///< flat input index of each output cell
};

/// Max pooling over cubic windows. Ties resolve to the lowest linear index,
/// which is also the only input receiving gradient.
pool_result maxpool3d(const tensor& input, std::size_t window, std::size_t stride);

/// Per-channel running statistics owned by the caller.
struct running_stats {
    std::vector<real> mean;
    std::vector<real> var;
    real momentum = 0.1;
    real eps = 1e-5;

    static running_stats init(std::size_t channels);
};

/// Normalizes [B,C,...] per channel. Train mode uses batch statistics and
/// updates `stats` (stored at single precision); eval mode uses `stats`.
tensor batchnorm(const tensor& input, const tensor& gamma, const tensor& beta,
                 running_stats& stats, mode m);

/// [B,Fin] x [Fout,Fin]^T + bias[Fout]
tensor linear(const tensor& input, const tensor& weight, const tensor& bias);

tensor relu(const tensor& x);
tensor sigmoid(const tensor& x);
tensor log_softmax(const tensor& x, std::size_t axis);
tensor exp(const tensor& x);
tensor log(const tensor& x);
/// Gradient passes only where lo < x < hi.
tensor clamp(const tensor& x, real lo, real hi);

/// Row i of the [out_size, F] result sums the rows of `values` targeting i.
tensor scatter_sum(const tensor& values, std::span<const std::size_t> targets, std::size_t out_size);

/// Inverted dropout; identity in eval mode or when p == 0.
tensor dropout(const tensor& x, real p, mode m, rng_t& rng);

tensor add(const tensor& a, const tensor& b);
tensor sub(const tensor& a, const tensor& b);
tensor mul(const tensor& a, const tensor& b);
tensor scale(const tensor& x, real factor);
tensor sum(const tensor& x);
tensor mean(const tensor& x);

tensor concat(const std::vector<tensor>& parts, std::size_t axis);
/// Gathers rows (axis 0).
tensor index_select(const tensor& x, std::span<const std::size_t> rows);
tensor reshape(const tensor& x, shape_t shape);

/// Max over row ranges [offsets[s], offsets[s+1]) of an [N,F] tensor.
tensor segment_max(const tensor& x, std::span<const std::size_t> offsets);

/// out[e] = x[e] * reshape(mats[e], [Fin, Fout]) for an [E,Fin] x and
/// [E, Fin*Fout] mats.
tensor edge_matvec(const tensor& x, const tensor& mats, std::size_t out_features);

/// Multiplies row e of [E,F] x by weights[e].
tensor row_scale(const tensor& x, const tensor& weights);

} // namespace colearn::ag

#endif // COLEARN_AUTOGRAD_OPS_HPP
