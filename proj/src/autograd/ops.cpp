#include "colearn/autograd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "colearn/autograd/kernels.hpp"

namespace colearn::ag {

namespace {

void require_same_shape(const char* op, const tensor& a, const tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank(const char* op, const tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw shape_error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
    }
}

template <class F>
tensor unary(primitive_kind kind, const tensor& x, F&& f, std::function<void(std::span<const real>, std::span<const real>, std::span<real>)> grad_rule) {
    std::vector<real> out(x.size());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    auto result_data = std::make_shared<std::vector<real>>(out);
    tensor xc = x;
    return make_result(kind, x.shape(), std::move(out), {x},
                       [xc, result_data, grad_rule](std::span<const real> g) mutable {
                           if (!xc.requires_grad()) return;
                           grad_rule(g, *result_data, xc.mutable_grad());
                       });
}

} // namespace

tensor conv3d(const tensor& input, const tensor& kernel, const tensor& bias,
              std::size_t stride, std::size_t padding) {
    const auto g = kernels::make_conv3d_geometry(input.shape(), kernel.shape(), stride, padding);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
        throw shape_error("conv3d: bias must be [Cout], got " + shape_str(bias.shape()));
    }
    std::vector<real> out(g.batch * g.out_channels * g.out_plane());
    kernels::conv3d_forward(g, input.data(), kernel.data(),
                            bias.defined() ? bias.data() : std::span<const real>{}, out);
    std::vector<tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    tensor in = input, ker = kernel, b = bias;
    return make_result(primitive_kind::conv3d, {g.batch, g.out_channels, g.out_depth, g.out_height, g.out_width},
                       std::move(out), inputs, [g, in, ker, b](std::span<const real> grad) mutable {
                           kernels::conv3d_backward(
                               g, in.data(), ker.data(), grad,
                               in.requires_grad() ? in.mutable_grad() : std::span<real>{},
                               ker.requires_grad() ? ker.mutable_grad() : std::span<real>{},
                               (b.defined() && b.requires_grad()) ? b.mutable_grad() : std::span<real>{});
                       });
}

pool_result maxpool3d(const tensor& input, std::size_t window, std::size_t stride) {
    const auto g = kernels::make_pool3d_geometry(input.shape(), window, stride);
    const std::size_t n = g.planes * g.out_depth * g.out_height * g.out_width;
    std::vector<real> out(n);
    auto argmax = std::make_shared<std::vector<std::size_t>>(n);
    kernels::maxpool3d_forward(g, input.data(), out, *argmax);
    tensor in = input;
    pool_result r;
    r.output = make_result(primitive_kind::maxpool3d,
                           {input.dim(0), input.dim(1), g.out_depth, g.out_height, g.out_width}, std::move(out),
                           {input}, [in, argmax](std::span<const real> grad) mutable {
                               if (!in.requires_grad()) return;
                               auto gi = in.mutable_grad();
                               for (std::size_t o = 0; o < grad.size(); ++o) gi[(*argmax)[o]] += grad[o];
                           });
    r.argmax = *argmax;
    return r;
}

running_stats running_stats::init(std::size_t channels) {
    running_stats s;
    s.mean.assign(channels, 0.0);
    s.var.assign(channels, 1.0);
    return s;
}

tensor batchnorm(const tensor& input, const tensor& gamma, const tensor& beta,
                 running_stats& stats, mode m) {
    if (input.rank() < 2) throw shape_error("batchnorm: input must be [B,C,...], got " + shape_str(input.shape()));
    const std::size_t batch = input.dim(0), channels = input.dim(1);
    const std::size_t spatial = input.size() / (batch * channels == 0 ? 1 : batch * channels);
    if (gamma.size() != channels || beta.size() != channels || stats.mean.size() != channels ||
        stats.var.size() != channels) {
        throw shape_error("batchnorm: per-channel parameters do not match " + std::to_string(channels) + " channels");
    }
    if (m == mode::train && batch < 2) {
        throw shape_error("batchnorm: train mode needs a batch of at least 2");
    }
    const std::size_t count = batch * spatial;
    auto x = input.data();
    std::vector<real> out(input.size());
    auto xhat = std::make_shared<std::vector<real>>(input.size());
    auto inv_std = std::make_shared<std::vector<real>>(channels);
    const real eps = stats.eps;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
        const std::size_t c = static_cast<std::size_t>(ci);
        real mu = 0.0, var = 0.0;
        if (m == mode::train) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t s = 0; s < spatial; ++s) mu += x[(b * channels + c) * spatial + s];
            mu /= static_cast<real>(count);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t s = 0; s < spatial; ++s) {
                    const real d = x[(b * channels + c) * spatial + s] - mu;
                    var += d * d;
                }
            var /= static_cast<real>(count);
            const real unbiased = count > 1 ? var * static_cast<real>(count) / static_cast<real>(count - 1) : var;
            stats.mean[c] = static_cast<float>((1.0 - stats.momentum) * stats.mean[c] + stats.momentum * mu);
            stats.var[c] = static_cast<float>((1.0 - stats.momentum) * stats.var[c] + stats.momentum * unbiased);
        } else {
            mu = stats.mean[c];
            var = stats.var[c];
        }
        const real is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i = (b * channels + c) * spatial + s;
                const real h = (x[i] - mu) * is;
                (*xhat)[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
    }

    tensor in = input, ga = gamma, be = beta;
    const bool train = m == mode::train;
    return make_result(primitive_kind::batchnorm, input.shape(), std::move(out), {input, gamma, beta},
                       [=](std::span<const real> g) mutable {
                           std::span<real> gx = in.requires_grad() ? in.mutable_grad() : std::span<real>{};
                           std::span<real> gg = ga.requires_grad() ? ga.mutable_grad() : std::span<real>{};
                           std::span<real> gb = be.requires_grad() ? be.mutable_grad() : std::span<real>{};
#pragma omp parallel for schedule(static)
                           for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
                               const std::size_t c = static_cast<std::size_t>(ci);
                               real sum_g = 0.0, sum_gx = 0.0;
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t s = 0; s < spatial; ++s) {
                                       const std::size_t i = (b * channels + c) * spatial + s;
                                       sum_g += g[i];
                                       sum_gx += g[i] * (*xhat)[i];
                                   }
                               if (!gg.empty()) gg[c] += sum_gx;
                               if (!gb.empty()) gb[c] += sum_g;
                               if (gx.empty()) continue;
                               const real scale_c = ga[c] * (*inv_std)[c];
                               const real n = static_cast<real>(count);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t s = 0; s < spatial; ++s) {
                                       const std::size_t i = (b * channels + c) * spatial + s;
                                       if (train) gx[i] += scale_c * (g[i] - sum_g / n - (*xhat)[i] * sum_gx / n);
                                       else gx[i] += scale_c * g[i];
                                   }
                           }
                       });
}

tensor linear(const tensor& input, const tensor& weight, const tensor& bias) {
    require_rank("linear", input, 2);
    require_rank("linear", weight, 2);
    const std::size_t rows = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
    if (weight.dim(1) != fin) {
        throw shape_error("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
    }
    if (bias.defined() && bias.size() != fout) throw shape_error("linear: bias must have " + std::to_string(fout) + " entries");
    std::vector<real> out(rows * fout);
    kernels::gemm_nt(rows, fout, fin, input.data().data(), weight.data().data(), out.data(), false);
    if (bias.defined()) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < fout; ++o) out[r * fout + o] += bias[o];
    }
    std::vector<tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    tensor in = input, w = weight, b = bias;
    return make_result(primitive_kind::linear, {rows, fout}, std::move(out), inputs,
                       [=](std::span<const real> g) mutable {
                           if (in.requires_grad()) kernels::gemm_nn(rows, fin, fout, g.data(), w.data().data(), in.mutable_grad().data(), true);
                           if (w.requires_grad()) kernels::gemm_tn(fout, fin, rows, g.data(), in.data().data(), w.mutable_grad().data(), true);
                           if (b.defined() && b.requires_grad()) {
                               auto gb = b.mutable_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t o = 0; o < fout; ++o) gb[o] += g[r * fout + o];
                           }
                       });
}

tensor relu(const tensor& x) {
    return unary(primitive_kind::relu, x, [](real v) { return v > 0.0 ? v : 0.0; },
                 [](std::span<const real> g, std::span<const real> y, std::span<real> gx) {
                     for (std::size_t i = 0; i < g.size(); ++i) if (y[i] > 0.0) gx[i] += g[i];
                 });
}

tensor sigmoid(const tensor& x) {
    return unary(primitive_kind::sigmoid, x,
                 [](real v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
                 [](std::span<const real> g, std::span<const real> y, std::span<real> gx) {
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
                 });
}

tensor exp(const tensor& x) {
    return unary(primitive_kind::exp, x, [](real v) { return std::exp(v); },
                 [](std::span<const real> g, std::span<const real> y, std::span<real> gx) {
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
                 });
}

tensor log(const tensor& x) {
    tensor xc = x;
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
    return make_result(primitive_kind::log, x.shape(), std::move(out), {x}, [xc](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xc[i];
    });
}

tensor clamp(const tensor& x, real lo, real hi) {
    tensor xc = x;
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
    return make_result(primitive_kind::clamp, x.shape(), std::move(out), {x}, [xc, lo, hi](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) if (xc[i] > lo && xc[i] < hi) gx[i] += g[i];
    });
}

tensor log_softmax(const tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw shape_error("log_softmax: axis out of range for " + shape_str(x.shape()));
    const auto& sh = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
    for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
    const std::size_t n = sh[axis];
    std::vector<real> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            real mx = -std::numeric_limits<real>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[(o * n + j) * inner + in]);
            real s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += std::exp(x[(o * n + j) * inner + in] - mx);
            const real lse = mx + std::log(s);
            for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + in] = x[(o * n + j) * inner + in] - lse;
        }
    auto y = std::make_shared<std::vector<real>>(out);
    tensor xc = x;
    return make_result(primitive_kind::log_softmax, sh, std::move(out), {x},
                       [=](std::span<const real> g) mutable {
                           if (!xc.requires_grad()) return;
                           auto gx = xc.mutable_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t in = 0; in < inner; ++in) {
                                   real gs = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) gs += g[(o * n + j) * inner + in];
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const std::size_t i = (o * n + j) * inner + in;
                                       gx[i] += g[i] - std::exp((*y)[i]) * gs;
                                   }
                               }
                       });
}

tensor scatter_sum(const tensor& values, std::span<const std::size_t> targets, std::size_t out_size) {
    require_rank("scatter_sum", values, 2);
    const std::size_t e = values.dim(0), f = values.dim(1);
    if (targets.size() != e) throw shape_error("scatter_sum: need one target per value row");
    for (std::size_t t : targets) {
        if (t >= out_size) throw shape_error("scatter_sum: target " + std::to_string(t) + " out of range " + std::to_string(out_size));
    }
    std::vector<real> out(out_size * f, 0.0);
    for (std::size_t r = 0; r < e; ++r)
        for (std::size_t c = 0; c < f; ++c) out[targets[r] * f + c] += values[r * f + c];
    auto idx = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
    tensor v = values;
    return make_result(primitive_kind::scatter_sum, {out_size, f}, std::move(out), {values},
                       [v, idx, f](std::span<const real> g) mutable {
                           if (!v.requires_grad()) return;
                           auto gv = v.mutable_grad();
                           for (std::size_t r = 0; r < idx->size(); ++r)
                               for (std::size_t c = 0; c < f; ++c) gv[r * f + c] += g[(*idx)[r] * f + c];
                       });
}

tensor dropout(const tensor& x, real p, mode m, rng_t& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
    std::vector<real> mask(x.size(), 1.0);
    if (m == mode::train && p > 0.0) {
        std::bernoulli_distribution keep(1.0 - p);
        const real s = 1.0 / (1.0 - p);
        for (auto& v : mask) v = keep(rng) ? s : 0.0;
    }
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    auto mk = std::make_shared<std::vector<real>>(std::move(mask));
    tensor xc = x;
    return make_result(primitive_kind::dropout, x.shape(), std::move(out), {x}, [xc, mk](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mk)[i];
    });
}

tensor add(const tensor& a, const tensor& b) {
    require_same_shape("add", a, b);
    std::vector<real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    tensor ac = a, bc = b;
    return make_result(primitive_kind::add, a.shape(), std::move(out), {a, b}, [ac, bc](std::span<const real> g) mutable {
        if (ac.requires_grad()) { auto ga = ac.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; }
        if (bc.requires_grad()) { auto gb = bc.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; }
    });
}

tensor sub(const tensor& a, const tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    tensor ac = a, bc = b;
    return make_result(primitive_kind::sub, a.shape(), std::move(out), {a, b}, [ac, bc](std::span<const real> g) mutable {
        if (ac.requires_grad()) { auto ga = ac.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; }
        if (bc.requires_grad()) { auto gb = bc.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; }
    });
}

tensor mul(const tensor& a, const tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    tensor ac = a, bc = b;
    return make_result(primitive_kind::mul, a.shape(), std::move(out), {a, b}, [ac, bc](std::span<const real> g) mutable {
        if (ac.requires_grad()) { auto ga = ac.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bc[i]; }
        if (bc.requires_grad()) { auto gb = bc.mutable_grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ac[i]; }
    });
}

tensor scale(const tensor& x, real factor) {
    std::vector<real> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    tensor xc = x;
    return make_result(primitive_kind::scale, x.shape(), std::move(out), {x}, [xc, factor](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
}

tensor sum(const tensor& x) {
    real s = 0.0;
    for (real v : x.data()) s += v;
    tensor xc = x;
    return make_result(primitive_kind::sum, {}, {s}, {x}, [xc](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        for (auto& v : xc.mutable_grad()) v += g[0];
    });
}

tensor mean(const tensor& x) {
    if (x.size() == 0) throw shape_error("mean: empty tensor");
    real s = 0.0;
    for (real v : x.data()) s += v;
    const real n = static_cast<real>(x.size());
    tensor xc = x;
    return make_result(primitive_kind::mean, {}, {s / n}, {x}, [xc, n](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        for (auto& v : xc.mutable_grad()) v += g[0] / n;
    });
}

tensor concat(const std::vector<tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw shape_error("concat: no inputs");
    const shape_t& first = parts.front().shape();
    if (axis >= first.size()) throw shape_error("concat: axis out of range");
    shape_t out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) throw shape_error("concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && p.dim(i) != first[i]) throw shape_error("concat: extent mismatch off the concat axis");
        }
        out_shape[axis] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t total = out_shape[axis];
    std::vector<real> out(numel(out_shape));
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t n = p.dim(axis);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * n * inner), n * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
        offset += n;
    }
    std::vector<tensor> ps = parts;
    return make_result(primitive_kind::concat, out_shape, std::move(out), parts,
                       [ps, offsets, outer, inner, total, axis](std::span<const real> g) mutable {
                           for (std::size_t k = 0; k < ps.size(); ++k) {
                               if (!ps[k].requires_grad()) continue;
                               auto gp = ps[k].mutable_grad();
                               const std::size_t n = ps[k].dim(axis);
                               for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t i = 0; i < n * inner; ++i)
                                       gp[o * n * inner + i] += g[(o * total + offsets[k]) * inner + i];
                           }
                       });
}

tensor index_select(const tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1) throw shape_error("index_select: scalar input");
    const std::size_t n = x.dim(0), row = x.size() / (n == 0 ? 1 : n);
    shape_t out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<real> out(rows.size() * row);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) throw shape_error("index_select: row " + std::to_string(rows[r]) + " out of range");
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * row), row,
                    out.begin() + static_cast<std::ptrdiff_t>(r * row));
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    tensor xc = x;
    return make_result(primitive_kind::index_select, out_shape, std::move(out), {x},
                       [xc, idx, row](std::span<const real> g) mutable {
                           if (!xc.requires_grad()) return;
                           auto gx = xc.mutable_grad();
                           for (std::size_t r = 0; r < idx->size(); ++r)
                               for (std::size_t c = 0; c < row; ++c) gx[(*idx)[r] * row + c] += g[r * row + c];
                       });
}

tensor reshape(const tensor& x, shape_t shape) {
    if (numel(shape) != x.size()) {
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<real> out(x.data().begin(), x.data().end());
    tensor xc = x;
    return make_result(primitive_kind::reshape, std::move(shape), std::move(out), {x}, [xc](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

tensor segment_max(const tensor& x, std::span<const std::size_t> offsets) {
    require_rank("segment_max", x, 2);
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.dim(0)) {
        throw shape_error("segment_max: offsets must run from 0 to the row count");
    }
    const std::size_t segments = offsets.size() - 1, f = x.dim(1);
    std::vector<real> out(segments * f);
    auto arg = std::make_shared<std::vector<std::size_t>>(segments * f);
    for (std::size_t s = 0; s < segments; ++s) {
        if (offsets[s + 1] <= offsets[s]) throw shape_error("segment_max: empty segment");
        for (std::size_t c = 0; c < f; ++c) {
            std::size_t best = offsets[s];
            for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
                if (x[r * f + c] > x[best * f + c]) best = r;
            }
            out[s * f + c] = x[best * f + c];
            (*arg)[s * f + c] = best * f + c;
        }
    }
    tensor xc = x;
    return make_result(primitive_kind::segment_max, {segments, f}, std::move(out), {x}, [xc, arg](std::span<const real> g) mutable {
        if (!xc.requires_grad()) return;
        auto gx = xc.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
    });
}

tensor edge_matvec(const tensor& x, const tensor& mats, std::size_t out_features) {
    require_rank("edge_matvec", x, 2);
    require_rank("edge_matvec", mats, 2);
    const std::size_t e = x.dim(0), fin = x.dim(1), fout = out_features;
    if (mats.dim(0) != e || mats.dim(1) != fin * fout) {
        throw shape_error("edge_matvec: matrices " + shape_str(mats.shape()) + " do not match features " +
                          shape_str(x.shape()) + " -> " + std::to_string(fout));
    }
    std::vector<real> out(e * fout, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(e); ++ri) {
        const std::size_t r = static_cast<std::size_t>(ri);
        const real* m = mats.data().data() + r * fin * fout;
        real* o = out.data() + r * fout;
        for (std::size_t i = 0; i < fin; ++i) {
            const real xi = x[r * fin + i];
            for (std::size_t j = 0; j < fout; ++j) o[j] += xi * m[i * fout + j];
        }
    }
    tensor xc = x, mc = mats;
    return make_result(primitive_kind::edge_matvec, {e, fout}, std::move(out), {x, mats},
                       [xc, mc, e, fin, fout](std::span<const real> g) mutable {
                           std::span<real> gx = xc.requires_grad() ? xc.mutable_grad() : std::span<real>{};
                           std::span<real> gm = mc.requires_grad() ? mc.mutable_grad() : std::span<real>{};
#pragma omp parallel for schedule(static)
                           for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(e); ++ri) {
                               const std::size_t r = static_cast<std::size_t>(ri);
                               const real* go = g.data() + r * fout;
                               const real* m = mc.data().data() + r * fin * fout;
                               for (std::size_t i = 0; i < fin; ++i) {
                                   const real xi = xc[r * fin + i];
                                   real acc = 0.0;
                                   for (std::size_t j = 0; j < fout; ++j) {
                                       acc += go[j] * m[i * fout + j];
                                       if (!gm.empty()) gm[r * fin * fout + i * fout + j] += xi * go[j];
                                   }
                                   if (!gx.empty()) gx[r * fin + i] += acc;
                               }
                           }
                       });
}

tensor row_scale(const tensor& x, const tensor& weights) {
    require_rank("row_scale", x, 2);
    const std::size_t e = x.dim(0), f = x.dim(1);
    if (weights.size() != e) throw shape_error("row_scale: need one weight per row");
    std::vector<real> out(x.size());
    for (std::size_t r = 0; r < e; ++r)
        for (std::size_t c = 0; c < f; ++c) out[r * f + c] = x[r * f + c] * weights[r];
    tensor xc = x, wc = weights;
    return make_result(primitive_kind::row_scale, x.shape(), std::move(out), {x, weights},
                       [xc, wc, e, f](std::span<const real> g) mutable {
                           if (xc.requires_grad()) {
                               auto gx = xc.mutable_grad();
                               for (std::size_t r = 0; r < e; ++r)
                                   for (std::size_t c = 0; c < f; ++c) gx[r * f + c] += g[r * f + c] * wc[r];
                           }
                           if (wc.requires_grad()) {
                               auto gw = wc.mutable_grad();
                               for (std::size_t r = 0; r < e; ++r) {
                                   real acc = 0.0;
                                   for (std::size_t c = 0; c < f; ++c) acc += g[r * f + c] * xc[r * f + c];
                                   gw[r] += acc;
                               }
                           }
                       });
}

} // namespace colearn::ag
