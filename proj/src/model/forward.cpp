#include <cmath>

#include "colearn/model/model.hpp"

namespace colearn::model {

namespace {

std::string layer_name(const char* branch, const char* what, std::size_t l) {
    return std::string(branch) + "." + what + std::to_string(l);
}

branch_output fc_head(model_state& s, const std::string& branch, const ag::tensor& features, real p, ag::mode m,
                      ag::rng_t& rng) {
    auto lin = [&](const ag::tensor& x, std::size_t i) {
        const std::string n = branch + ".fc" + std::to_string(i);
        return ag::linear(x, s.param(n + ".weight"), s.param(n + ".bias"));
    };
    branch_output out;
    const ag::tensor h = ag::dropout(ag::relu(lin(features, 0)), p, m, rng);
    out.latent = ag::relu(lin(h, 1));
    out.logit = lin(out.latent, 2);
    out.probability = ag::sigmoid(out.logit);
    return out;
}

void require_finite(const ag::tensor& t, const char* who) {
    for (real v : t.data())
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

} // namespace

ag::tensor stack_crops(std::span<const crop_input* const> crops) {
    if (crops.empty()) throw std::invalid_argument("stack_crops: empty batch");
    const std::size_t s = crops.front()->box.size;
    std::vector<real> values;
    values.reserve(crops.size() * crops.front()->values.size());
    for (const auto* c : crops) {
        if (c->box.size != s || c->values.size() != crops.front()->values.size()) {
            throw ag::shape_error("stack_crops: crops differ in size");
        }
        values.insert(values.end(), c->values.begin(), c->values.end());
    }
    const std::size_t channels = crops.front()->values.size() / (s * s * s);
    return ag::tensor::from({crops.size(), channels, s, s, s}, std::move(values));
}

branch_output cnn_forward(model_state& s, const ag::tensor& input, ag::mode m, ag::rng_t& rng,
                          std::vector<ag::tensor>* activations) {
    const auto& c = s.cnn;
    if (input.rank() != 5 || input.dim(1) != c.in_channels || input.dim(2) != c.crop || input.dim(3) != c.crop ||
        input.dim(4) != c.crop) {
        throw ag::shape_error("cnn_forward: expected [B," + std::to_string(c.in_channels) + "," + std::to_string(c.crop) +
                              "^3] input, got " + ag::shape_str(input.shape()));
    }
    require_finite(input, "cnn_forward");
    ag::tensor x = input;
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
        const std::string conv = layer_name("cnn", "conv", l), bn = layer_name("cnn", "bn", l);
        x = ag::conv3d(x, s.param(conv + ".weight"), s.param(conv + ".bias"), c.stride, c.padding);
        x = ag::relu(ag::batchnorm(x, s.param(bn + ".gamma"), s.param(bn + ".beta"), s.stats(bn), m));
        if (activations) activations->push_back(x);
        const std::size_t window = std::min(c.pool, x.dim(2));
        x = ag::maxpool3d(x, window, window).output;
    }
    const std::size_t batch = input.dim(0);
    x = ag::reshape(x, {batch, x.size() / batch});
    return fc_head(s, "cnn", x, c.dropout, m, rng);
}

ag::tensor pointconv(model_state& s, std::size_t layer, const ag::tensor& x, std::span<const std::size_t> sources,
                     std::span<const std::size_t> targets, std::span<const real> edge_features, ag::mode m,
                     const ag::tensor& edge_mask) {
    const auto& g = s.gnn;
    if (layer >= g.widths.size()) throw std::out_of_range("pointconv: layer index out of range");
    const std::size_t n = x.dim(0), fout = g.widths[layer], e = sources.size();
    if (n == 0) throw std::invalid_argument("pointconv: empty cloud");
    if (targets.size() != e || edge_features.size() != 3 * e) throw ag::shape_error("pointconv: edge arrays disagree");
    if (edge_mask.defined() && edge_mask.size() != e) throw ag::shape_error("pointconv: edge mask must have one entry per edge");
    const std::string p = layer_name("gnn", "conv", layer);

    const ag::tensor root = ag::linear(x, s.param(p + ".root.weight"), s.param(p + ".root.bias"));
    if (e == 0) return ag::relu(root);

    const ag::tensor ef = ag::tensor::from({e, 3}, std::vector<real>(edge_features.begin(), edge_features.end()));
    // Batch statistics need two edges; a lone edge falls back to the running ones.
    const ag::mode bn_mode = (m == ag::mode::train && e < 2) ? ag::mode::eval : m;
    ag::tensor hidden = ag::linear(ef, s.param(p + ".edge1.weight"), s.param(p + ".edge1.bias"));
    hidden = ag::relu(ag::batchnorm(hidden, s.param(p + ".edge_bn.gamma"), s.param(p + ".edge_bn.beta"),
                                    s.stats(p + ".edge_bn"), bn_mode));
    const ag::tensor augmented = ag::concat({hidden, ag::tensor::full({e, 1}, 1.0)}, 1);

    // The per-edge filter M(e) is never materialized: each node's features are
    // pushed through every hidden unit's slice once, then mixed per edge.
    const ag::tensor projected = ag::linear(x, s.param(p + ".edge2.weight"), ag::tensor{});
    ag::tensor messages = ag::edge_matvec(augmented, ag::index_select(projected, sources), fout);
    if (edge_mask.defined()) messages = ag::row_scale(messages, edge_mask);
    return ag::relu(ag::add(root, ag::scatter_sum(messages, targets, n)));
}

std::pair<geom::point_cloud, ag::tensor> pointconv_layer(model_state& s, std::size_t layer, const graph_level& level,
                                                         const ag::tensor& features, ag::mode m) {
    if (level.cloud.size() == 0) throw std::invalid_argument("pointconv_layer: empty cloud");
    if (features.dim(0) != level.cloud.size()) throw ag::shape_error("pointconv_layer: feature rows do not match points");
    const ag::tensor out = pointconv(s, layer, features, level.sources, level.targets, level.edge_features, m);
    return geom::pool_cloud(level.cloud, out, level.pooled);
}

std::size_t first_level_edges(std::span<const graph_hierarchy* const> batch) {
    std::size_t e = 0;
    for (const auto* h : batch) e += h->levels.at(0).sources.size();
    return e;
}

branch_output gnn_forward(model_state& s, std::span<const graph_hierarchy* const> batch, ag::mode m, ag::rng_t& rng,
                          const ag::tensor& edge_mask) {
    const auto& g = s.gnn;
    if (batch.empty()) throw std::invalid_argument("gnn_forward: empty batch");
    const std::size_t levels = g.widths.size();
    for (const auto* h : batch) {
        if (h->levels.size() != levels) throw std::invalid_argument("gnn_forward: hierarchy depth does not match the config");
        if (h->levels.front().cloud.size() < (std::size_t{1} << levels)) {
            throw std::invalid_argument("gnn_forward: clouds need at least " + std::to_string(std::size_t{1} << levels) + " points");
        }
    }

    std::vector<real> coords;
    for (const auto* h : batch)
        for (const auto& pt : h->levels.front().cloud.points) coords.insert(coords.end(), pt.begin(), pt.end());
    const std::size_t total = coords.size() / 3;
    ag::tensor x = ag::tensor::from({total, 3}, std::move(coords));
    require_finite(x, "gnn_forward");

    std::vector<std::size_t> offsets;
    for (std::size_t l = 0; l < levels; ++l) {
        std::vector<std::size_t> sources, targets, keep;
        std::vector<real> features;
        offsets.assign(1, 0);
        std::size_t base = 0, pooled_base = 0;
        for (const auto* h : batch) {
            const auto& lv = h->levels[l];
            for (std::size_t i = 0; i < lv.sources.size(); ++i) {
                sources.push_back(base + lv.sources[i]);
                targets.push_back(base + lv.targets[i]);
            }
            features.insert(features.end(), lv.edge_features.begin(), lv.edge_features.end());
            for (std::size_t i : lv.pooled.indices) keep.push_back(base + i);
            base += lv.cloud.size();
            pooled_base += lv.pooled.indices.size();
            offsets.push_back(pooled_base);
        }
        if (base != x.dim(0)) throw ag::shape_error("gnn_forward: hierarchy levels are inconsistent");
        x = pointconv(s, l, x, sources, targets, features, m, l == 0 ? edge_mask : ag::tensor{});
        x = ag::index_select(x, keep);
    }
    return fc_head(s, "gnn", ag::segment_max(x, offsets), g.dropout, m, rng);
}

} // namespace colearn::model
