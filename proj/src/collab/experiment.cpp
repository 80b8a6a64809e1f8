#include <cmath>
#include <numeric>
#include <optional>

#include "colearn/collab/collab.hpp"

namespace colearn::collab {

namespace {

std::vector<data::volume_sample> pick(const std::vector<data::volume_sample>& all, const std::vector<std::size_t>& idx) {
    std::vector<data::volume_sample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

std::vector<std::size_t> positions(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

dataset prepare_all(const std::vector<data::volume_sample>& samples, const experiment_config& cfg,
                    std::vector<std::string>* skipped) {
    std::vector<std::optional<model::prepared_sample>> slots(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(samples.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        try {
            slots[i] = model::prepare_sample(samples[i], cfg.cnn, cfg.gnn, cfg.train.n_points, cfg.train.seed);
        } catch (const geom::mesh_error&) {
            // left empty; reported below
        }
    }
    dataset out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) out.push_back(std::move(*slots[i]));
        else if (skipped) skipped->push_back(samples[i].id);
    }
    return out;
}

holdout holdout_fold(const std::vector<data::volume_sample>& pool, std::uint64_t seed) {
    const auto folds = data::cv_folds(positions(pool.size()), 5, seed);
    return {data::balance_minority(pick(pool, folds.front().fit)), pick(pool, folds.front().val)};
}

cv_result cross_validate(const std::vector<data::volume_sample>& pool, std::size_t k, const experiment_config& cfg, arm a) {
    const auto folds = data::cv_folds(positions(pool.size()), k, cfg.train.seed);
    cv_result res;
    for (const auto& f : folds) {
        const dataset fit = prepare_all(data::balance_minority(pick(pool, f.fit)), cfg);
        const dataset val = prepare_all(pick(pool, f.val), cfg);
        auto run = train(model::init_params(cfg.cnn, cfg.gnn, cfg.train.seed), fit, val, cfg.train, a);
        res.folds.push_back(evaluate(run.state, val, a));
    }
    const auto n = static_cast<real>(res.folds.size());
    for (const auto& r : res.folds) {
        res.mean_accuracy += r.accuracy / n;
        res.mean_sensitivity += r.sensitivity / n;
        res.mean_specificity += r.specificity / n;
    }
    return res;
}

std::vector<ablation_row> ablate(const std::vector<data::volume_sample>& train_pool,
                                 const std::vector<data::volume_sample>& test, const experiment_config& cfg) {
    const holdout h = holdout_fold(train_pool, cfg.train.seed);
    const dataset fit = prepare_all(h.fit, cfg);
    const dataset val = prepare_all(h.val, cfg);
    const dataset held_out = prepare_all(test, cfg);
    std::vector<ablation_row> rows;
    for (arm a : {arm::cnn_only, arm::gnn_only, arm::collaborative}) {
        auto run = train(model::init_params(cfg.cnn, cfg.gnn, cfg.train.seed), fit, val, cfg.train, a);
        ablation_row row;
        row.which = a;
        row.best_epoch = run.best_epoch;
        row.val = evaluate(run.state, val, a);
        if (!held_out.empty()) row.test = evaluate(run.state, held_out, a);
        row.cnn_hash = model::parameter_hash(run.state, "cnn.");
        row.gnn_hash = model::parameter_hash(run.state, "gnn.");
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json to_json(const std::vector<ablation_row>& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table) {
        const char* name = r.which == arm::cnn_only ? "CNN only" : r.which == arm::gnn_only ? "GNN only" : "Collaborative framework";
        rows.push_back({{"model", name}, {"arm", to_string(r.which)}, {"best_epoch", r.best_epoch}, {"val", to_json(r.val)},
                        {"test", to_json(r.test)}});
    }
    return {{"rows", rows}};
}

} // namespace colearn::collab
