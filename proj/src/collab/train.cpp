#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include "colearn/collab/collab.hpp"

namespace colearn::collab {

namespace {

// Chunks of batch_size; a trailing batch of one joins the previous one so
// that batch statistics always see two samples.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

using mat3 = std::array<real, 9>;

// Uniform over SO(3): normalized Gaussian quaternion.
mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<real> g(0.0, 1.0);
    real q[4], n = 0.0;
    for (auto& v : q) {
        v = g(rng);
        n += v * v;
    }
    n = std::sqrt(n);
    const real w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
            2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
            2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

void apply(const mat3& r, real* v) {
    const real a = v[0], b = v[1], c = v[2];
    v[0] = r[0] * a + r[1] * b + r[2] * c;
    v[1] = r[3] * a + r[4] * b + r[5] * c;
    v[2] = r[6] * a + r[7] * b + r[8] * c;
}

// Distances are preserved, so neighbourhoods and pooling choices stay valid;
// only coordinates and edge offsets turn.
model::graph_hierarchy rotated(const model::graph_hierarchy& h, const mat3& r) {
    model::graph_hierarchy out = h;
    for (auto& lv : out.levels) {
        for (auto& p : lv.cloud.points) apply(r, p.data());
        for (std::size_t e = 0; e < lv.edge_features.size(); e += 3) apply(r, &lv.edge_features[e]);
    }
    return out;
}

struct batch_outputs {
    model::branch_output u, v;
    ag::tensor y;
};

batch_outputs run_batch(model::model_state& s, const dataset& samples, const std::vector<std::size_t>& idx, arm a,
                        ag::mode m, ag::rng_t& rng, std::mt19937_64* rotate = nullptr) {
    batch_outputs out;
    std::vector<real> labels;
    for (std::size_t i : idx) labels.push_back(static_cast<real>(samples[i].label));
    out.y = ag::tensor::from({idx.size(), 1}, std::move(labels));
    if (a != arm::gnn_only) {
        std::vector<const model::crop_input*> crops;
        for (std::size_t i : idx) crops.push_back(&samples[i].crop);
        out.u = model::cnn_forward(s, model::stack_crops(crops), m, rng);
    }
    if (a != arm::cnn_only) {
        std::vector<model::graph_hierarchy> turned;
        if (rotate) {
            turned.reserve(idx.size());
            for (std::size_t i : idx) turned.push_back(rotated(samples[i].graphs, random_rotation(*rotate)));
        }
        std::vector<const model::graph_hierarchy*> graphs;
        for (std::size_t k = 0; k < idx.size(); ++k) graphs.push_back(rotate ? &turned[k] : &samples[idx[k]].graphs);
        out.v = model::gnn_forward(s, graphs, m, rng);
    }
    return out;
}

real fused(const batch_outputs& o, std::size_t row, arm a) {
    switch (a) {
    case arm::cnn_only: return o.u.probability[row];
    case arm::gnn_only: return o.v.probability[row];
    case arm::collaborative: break;
    }
    return 0.5 * (o.u.probability[row] + o.v.probability[row]);
}

std::vector<std::size_t> iota_n(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

eval_report report_from_confusion(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    eval_report r;
    r.tp = tp;
    r.fp = fp;
    r.tn = tn;
    r.fn = fn;
    const auto pct = [](std::size_t num, std::size_t den) {
        return den == 0 ? std::numeric_limits<real>::quiet_NaN() : 100.0 * static_cast<real>(num) / static_cast<real>(den);
    };
    r.accuracy = pct(tp + tn, tp + tn + fp + fn);
    r.sensitivity = pct(tp, tp + fn);
    r.specificity = pct(tn, tn + fp);
    return r;
}

eval_report evaluate(model::model_state& s, const dataset& samples, arm fusion, std::size_t batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    ag::no_grad_guard guard;
    ag::rng_t unused(0);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::vector<real> probs;
    std::vector<std::string> ids;
    for (const auto& b : make_batches(iota_n(samples.size()), std::max<std::size_t>(batch_size, 1))) {
        const auto o = run_batch(s, samples, b, fusion, ag::mode::eval, unused);
        for (std::size_t r = 0; r < b.size(); ++r) {
            const real p = fused(o, r, fusion);
            const bool predicted = p >= 0.5, actual = samples[b[r]].label == 1;
            tp += predicted && actual;
            fp += predicted && !actual;
            tn += !predicted && !actual;
            fn += !predicted && actual;
            probs.push_back(p);
            ids.push_back(samples[b[r]].id);
        }
    }
    eval_report rep = report_from_confusion(tp, fp, tn, fn);
    rep.probabilities = std::move(probs);
    rep.ids = std::move(ids);
    return rep;
}

std::pair<real, real> validation_loss(model::model_state& s, const dataset& samples, const train_config& c, arm a) {
    if (samples.empty()) throw std::invalid_argument("validation_loss: empty dataset");
    ag::no_grad_guard guard;
    ag::rng_t unused(0);
    real loss = 0.0;
    std::size_t correct = 0;
    for (const auto& b : make_batches(iota_n(samples.size()), c.batch_size)) {
        const auto o = run_batch(s, samples, b, a, ag::mode::eval, unused);
        loss += total_loss(o.y, o.u, o.v, c.lambda, a).total.item() * static_cast<real>(b.size());
        for (std::size_t r = 0; r < b.size(); ++r) correct += (fused(o, r, a) >= 0.5) == (samples[b[r]].label == 1);
    }
    const auto n = static_cast<real>(samples.size());
    return {loss / n, static_cast<real>(correct) / n};
}

train_result train(model::model_state init, const dataset& fit, const dataset& val, const train_config& c, arm a) {
    validate(c);
    if (fit.size() < 2) throw std::invalid_argument("train: need at least two training samples");
    if (val.empty()) throw std::invalid_argument("train: validation set is empty");
    train_result res;
    model::model_state& s = init;
    std::mt19937_64 shuffle_rng(c.seed ^ 0x9e3779b97f4a7c15ull);
    ag::rng_t dropout_rng(c.seed + 1);
    std::mt19937_64 rotation_rng(c.seed + 2);

    std::optional<model::model_state> best;
    real best_loss = std::numeric_limits<real>::infinity();
    std::vector<std::size_t> order = iota_n(fit.size());
    for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
        const real lr = lr_at(epoch, c);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        real bce = 0.0, kl = 0.0;
        for (const auto& b : make_batches(order, c.batch_size)) {
            for (auto& p : s.params) p.value.zero_grad();
            const auto o = run_batch(s, fit, b, a, ag::mode::train, dropout_rng, c.rotate_clouds ? &rotation_rng : nullptr);
            const auto l = total_loss(o.y, o.u, o.v, c.lambda, a);
            if (!std::isfinite(l.total.item())) throw training_error("non-finite loss at epoch " + std::to_string(epoch));
            ag::backward(l.total);
            adam_step(s, lr, c);
            bce += l.bce * static_cast<real>(b.size());
            kl += l.kl * static_cast<real>(b.size());
        }
        for (auto& p : s.params) p.value.zero_grad();
        const auto [vloss, vacc] = validation_loss(s, val, c, a);
        const auto n = static_cast<real>(fit.size());
        res.history.push_back({epoch, lr, bce / n, kl / n, vloss, vacc});
        if (vloss < best_loss) {
            best_loss = vloss;
            res.best_epoch = epoch;
            best = s.clone();
        } else if (epoch - res.best_epoch >= c.patience) {
            break;
        }
    }
    res.state = std::move(*best);
    return res;
}

void write_history(const std::vector<epoch_record>& history, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (const auto& r : history) {
        const nlohmann::json j = {{"epoch", r.epoch},       {"lr", r.lr},           {"train_bce", r.train_bce},
                                  {"train_kl", r.train_kl}, {"val_loss", r.val_loss}, {"val_acc", r.val_acc}};
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

nlohmann::json to_json(const eval_report& r) {
    const auto one_decimal = [](real v) -> nlohmann::json {
        if (!std::isfinite(v)) return nullptr;
        return std::round(v * 10.0) / 10.0;
    };
    return {{"tp", r.tp},
            {"fp", r.fp},
            {"tn", r.tn},
            {"fn", r.fn},
            {"accuracy", one_decimal(r.accuracy)},
            {"sensitivity", one_decimal(r.sensitivity)},
            {"specificity", one_decimal(r.specificity)}};
}

} // namespace colearn::collab
