#include <algorithm>
#include <cmath>

#include "colearn/model/model.hpp"

namespace colearn::model {

crop_input prepare_crop(const data::volume_sample& s, std::size_t size) {
    if (size == 0) throw std::invalid_argument("prepare_crop: size must be positive");
    const dims3& d = s.dims();
    std::array<std::size_t, 3> lo{d.d, d.h, d.w}, hi{0, 0, 0};
    bool any = false;
    for (std::size_t z = 0; z < d.d; ++z)
        for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x) {
                if (!s.mask.at(z, y, x)) continue;
                any = true;
                const std::array<std::size_t, 3> p{z, y, x};
                for (std::size_t a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], p[a]);
                    hi[a] = std::max(hi[a], p[a]);
                }
            }
    if (!any) throw geom::empty_mask_error("prepare_crop: sample " + s.id + " has an empty mask");

    crop_input out;
    out.box.lo = lo;
    out.box.size = size;
    for (std::size_t a = 0; a < 3; ++a) out.box.extent[a] = hi[a] - lo[a] + 1;

    // Nearest source voxel for every output index along each axis.
    std::array<std::vector<std::size_t>, 3> src;
    for (std::size_t a = 0; a < 3; ++a) {
        src[a].resize(size);
        const auto ext = static_cast<double>(out.box.extent[a]);
        for (std::size_t o = 0; o < size; ++o) {
            const auto off = static_cast<std::size_t>(std::floor((static_cast<double>(o) + 0.5) * ext / static_cast<double>(size)));
            src[a][o] = lo[a] + std::min(off, out.box.extent[a] - 1);
        }
    }

    const std::size_t cube = size * size * size;
    out.mask = binary_grid({size, size, size}, 0);
    out.values.assign(data::channel_count * cube, 0.0);
    for (std::size_t c = 0; c < data::channel_count; ++c) {
        const auto& ch = s.channels[c].values;
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < ch.size(); ++i) {
            if (!s.mask.values[i]) continue;
            sum += ch[i];
            ++n;
        }
        const double mu = sum / static_cast<double>(n);
        for (std::size_t i = 0; i < ch.size(); ++i)
            if (s.mask.values[i]) sq += (ch[i] - mu) * (ch[i] - mu);
        double sd = std::sqrt(sq / static_cast<double>(n));
        if (!(sd > 1e-12)) sd = 1.0;
        for (std::size_t z = 0; z < size; ++z)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const std::size_t si = d.index(src[0][z], src[1][y], src[2][x]);
                    const std::size_t oi = (z * size + y) * size + x;
                    if (!s.mask.values[si]) continue;
                    out.mask.values[oi] = 1;
                    out.values[c * cube + oi] = (ch[si] - mu) / sd;
                }
    }
    return out;
}

namespace {

// Point farthest from the centroid (lowest index on ties), so the sampling
// does not depend on the order the points arrive in.
std::size_t canonical_start(const geom::point_cloud& cloud) {
    geom::vec3 c{0.0, 0.0, 0.0};
    for (const auto& p : cloud.points)
        for (std::size_t a = 0; a < 3; ++a) c[a] += p[a] / static_cast<double>(cloud.size());
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double d = 0.0;
        for (std::size_t a = 0; a < 3; ++a) d += (cloud.points[i][a] - c[a]) * (cloud.points[i][a] - c[a]);
        if (d > best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace

graph_hierarchy build_hierarchy(const geom::point_cloud& cloud, const gnn_config& cfg) {
    validate(cfg);
    if (cloud.size() == 0) throw std::invalid_argument("build_hierarchy: empty cloud");
    graph_hierarchy h;
    geom::point_cloud current = cloud;
    for (std::size_t l = 0; l < cfg.radii.size(); ++l) {
        graph_level level;
        const auto g = geom::radius_graph(current, cfg.radii[l], cfg.max_degree);
        level.sources = g.sources;
        level.targets = g.targets;
        level.edge_features.reserve(3 * g.edge_features.size());
        for (const auto& e : g.edge_features) level.edge_features.insert(level.edge_features.end(), e.begin(), e.end());
        level.pooled = geom::fps(current, cfg.ratio, canonical_start(current));
        geom::point_cloud next;
        for (std::size_t i : level.pooled.indices) next.points.push_back(current.points[i]);
        level.cloud = std::move(current);
        current = std::move(next);
        h.levels.push_back(std::move(level));
    }
    return h;
}

prepared_sample prepare_sample(const data::volume_sample& s, const cnn_config& cnn, const gnn_config& gnn,
                               std::size_t n_points, std::uint64_t seed) {
    prepared_sample p;
    p.id = s.id;
    p.label = s.label;
    p.augmented = s.augmented;
    p.crop = prepare_crop(s, cnn.crop);
    p.mesh = geom::marching_cubes(s.mask);
    std::uint64_t id_hash = 0xcbf29ce484222325ull;
    for (unsigned char ch : s.id) {
        id_hash ^= ch;
        id_hash *= 0x100000001b3ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id_hash), static_cast<std::uint32_t>(id_hash >> 32)};
    std::mt19937_64 rng(seq);
    p.cloud = geom::normalize_cloud(geom::sample_point_cloud(p.mesh, n_points, rng), &p.transform);
    p.graphs = build_hierarchy(p.cloud, gnn);
    return p;
}

} // namespace colearn::model
