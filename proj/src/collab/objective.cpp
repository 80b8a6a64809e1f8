#include <cmath>

#include "colearn/collab/collab.hpp"

namespace colearn::collab {

const char* to_string(arm a) {
    switch (a) {
    case arm::collaborative: return "collaborative";
    case arm::cnn_only: return "cnn";
    case arm::gnn_only: return "gnn";
    }
    return "?";
}

arm arm_from_string(const std::string& s) {
    if (s == "average" || s == "collaborative") return arm::collaborative;
    if (s == "cnn" || s == "cnn_only") return arm::cnn_only;
    if (s == "gnn" || s == "gnn_only") return arm::gnn_only;
    throw std::invalid_argument("unknown fusion \"" + s + "\" (expected average, cnn or gnn)");
}

ag::tensor bce_loss(const ag::tensor& y, const ag::tensor& x) {
    if (y.shape() != x.shape()) throw ag::shape_error("bce_loss: labels and probabilities differ in shape");
    const ag::tensor p = ag::clamp(x, probability_clamp, 1.0 - probability_clamp);
    const ag::tensor one = ag::tensor::full(x.shape(), 1.0);
    const ag::tensor ll = ag::add(ag::mul(y, ag::log(p)), ag::mul(ag::sub(one, y), ag::log(ag::sub(one, p))));
    return ag::scale(ag::sum(ll), -1.0 / static_cast<real>(x.dim(0)));
}

ag::tensor bce_pair_loss(const ag::tensor& y, const ag::tensor& x_u, const ag::tensor& x_v) {
    return ag::add(bce_loss(y, x_u), bce_loss(y, x_v));
}

real bce_pair_loss(int y, real x_u, real x_v) {
    const auto c = [](real v) { return ag::tensor::from({1, 1}, {v}); };
    return bce_pair_loss(c(static_cast<real>(y)), c(x_u), c(x_v)).item();
}

ag::tensor kl_pair_loss(const ag::tensor& z_u, const ag::tensor& z_v) {
    if (z_u.rank() != 2 || z_u.shape() != z_v.shape()) throw ag::shape_error("kl_pair_loss: latents must be matching [B, F]");
    const ag::tensor lp = ag::log_softmax(z_u, 1), lq = ag::log_softmax(z_v, 1);
    // (p - q)(log p - log q) summed is KL(p||q) + KL(q||p).
    const ag::tensor terms = ag::mul(ag::sub(ag::exp(lp), ag::exp(lq)), ag::sub(lp, lq));
    return ag::scale(ag::sum(terms), 1.0 / static_cast<real>(z_u.dim(0)));
}

loss_breakdown total_loss(const ag::tensor& y, const model::branch_output& u, const model::branch_output& v, real lambda,
                          arm a) {
    loss_breakdown out;
    out.lambda = lambda;
    switch (a) {
    case arm::cnn_only: out.total = bce_loss(y, u.probability); break;
    case arm::gnn_only: out.total = bce_loss(y, v.probability); break;
    case arm::collaborative: {
        const ag::tensor bce = bce_pair_loss(y, u.probability, v.probability);
        const ag::tensor kl = kl_pair_loss(u.latent, v.latent);
        out.bce = bce.item();
        out.kl = kl.item();
        out.total = ag::add(bce, ag::scale(kl, lambda));
        return out;
    }
    }
    out.bce = out.total.item();
    return out;
}

void validate(const train_config& c) {
    if (c.epochs == 0) throw std::invalid_argument("train: epochs must be positive");
    if (!(c.lr_end > 0.0) || !(c.lr_start >= c.lr_end)) throw std::invalid_argument("train: need lr_start >= lr_end > 0");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.eps > 0.0)) {
        throw std::invalid_argument("train: Adam betas must lie in [0, 1) and eps be positive");
    }
    if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (c.patience == 0) throw std::invalid_argument("train: patience must be >= 1");
    if (c.batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2 (batchnorm)");
    if (!(c.lambda >= 0.0)) throw std::invalid_argument("train: lambda must be >= 0");
    if (c.n_points < 16) throw std::invalid_argument("train: n_points must be >= 16");
}

real lr_at(std::size_t epoch, const train_config& c) {
    if (epoch >= c.epochs) throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(c.epochs) + ")");
    if (c.epochs == 1) return c.lr_start;
    return c.lr_start + (c.lr_end - c.lr_start) * static_cast<real>(epoch) / static_cast<real>(c.epochs - 1);
}

void adam_step(model::model_state& s, real lr, const train_config& c) {
    for (const auto& p : s.params) {
        if (!p.value.has_grad()) continue;
        for (real g : p.value.grad())
            if (!std::isfinite(g)) throw training_error("non-finite gradient in parameter " + p.name);
    }
    ++s.step;
    const real t = static_cast<real>(s.step);
    const real c1 = 1.0 - std::pow(c.beta1, t), c2 = 1.0 - std::pow(c.beta2, t);
    const auto single = [](real v) { return static_cast<real>(static_cast<float>(v)); };
    for (auto& p : s.params) {
        if (!p.value.has_grad()) continue;
        auto theta = p.value.data();
        const auto g = p.value.grad();
        p.m.resize(theta.size(), 0.0);
        p.v.resize(theta.size(), 0.0);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            real w = theta[i] - lr * c.weight_decay * theta[i];
            p.m[i] = single(c.beta1 * p.m[i] + (1.0 - c.beta1) * g[i]);
            p.v[i] = single(c.beta2 * p.v[i] + (1.0 - c.beta2) * g[i] * g[i]);
            w -= lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + c.eps);
            theta[i] = single(w);
        }
    }
}

} // namespace colearn::collab
