#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "colearn/autograd/ops.hpp"
#include "colearn/geometry/geometry.hpp"

namespace colearn::geom {

namespace {

double distance(const vec3& a, const vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double distance2(const vec3& a, const vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Keeps the max_degree nearest (distance, index) candidates and appends them
// to the graph sorted by source index.
void emit_neighbors(spatial_graph& g, const point_cloud& cloud, std::size_t target,
                    std::vector<std::pair<double, std::size_t>>& cand, std::size_t max_degree) {
    if (cand.size() > max_degree) {
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(max_degree), cand.end());
        cand.resize(max_degree);
    }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [d, j] : cand) {
        g.sources.push_back(j);
        g.targets.push_back(target);
        const auto& pj = cloud.points[j];
        const auto& pi = cloud.points[target];
        g.edge_features.push_back({pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]});
    }
}

spatial_graph empty_graph(const point_cloud& cloud) {
    spatial_graph g;
    g.node_count = cloud.size();
    g.node_features = cloud.points;
    return g;
}

} // namespace

point_cloud sample_point_cloud(const surface_mesh& mesh, std::size_t n, std::mt19937_64& rng) {
    if (n == 0) throw std::invalid_argument("sample_point_cloud: n must be positive");
    if (mesh.vertices.empty()) throw mesh_error("sample_point_cloud: mesh has no vertices");
    const std::size_t v = mesh.vertices.size();
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first min(n, v) entries become a uniform draw without replacement.
    const std::size_t take = std::min(n, v);
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    point_cloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < take; ++i) cloud.points.push_back(mesh.vertices[order[i]]);
    std::uniform_int_distribution<std::size_t> any(0, v - 1);
    while (cloud.points.size() < n) cloud.points.push_back(mesh.vertices[any(rng)]);
    return cloud;
}

vec3 cloud_transform::apply(const vec3& p) const {
    if (scale == 0.0) return {0.0, 0.0, 0.0};
    return {(p[0] - center[0]) / scale, (p[1] - center[1]) / scale, (p[2] - center[2]) / scale};
}

vec3 cloud_transform::invert(const vec3& q) const {
    return {q[0] * scale + center[0], q[1] * scale + center[1], q[2] * scale + center[2]};
}

point_cloud normalize_cloud(const point_cloud& cloud, cloud_transform* transform) {
    cloud_transform t;
    if (!cloud.points.empty()) {
        vec3 lo = cloud.points.front(), hi = cloud.points.front();
        for (const auto& p : cloud.points)
            for (std::size_t a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        double half = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            t.center[a] = 0.5 * (lo[a] + hi[a]);
            half = std::max(half, 0.5 * (hi[a] - lo[a]));
        }
        t.scale = half;
    }
    point_cloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        vec3 q = t.apply(p);
        for (auto& c : q) c = std::clamp(c, -1.0, 1.0); // rounding can overshoot by an ulp
        out.points.push_back(q);
    }
    if (transform) *transform = t;
    return out;
}

spatial_graph radius_graph(const point_cloud& cloud, double radius, std::size_t max_degree) {
    if (!(radius > 0.0)) throw std::invalid_argument("radius_graph: radius must be positive");
    spatial_graph g = empty_graph(cloud);
    const std::size_t n = cloud.size();
    if (n < 2) return g;

    // Uniform hash grid with cells a hair wider than the radius, so every
    // neighbour sits in one of the 27 surrounding cells.
    const double cell = radius * (1.0 + 1e-9);
    vec3 lo = cloud.points.front();
    for (const auto& p : cloud.points)
        for (std::size_t a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
    auto cell_of = [&](const vec3& p) {
        std::array<long, 3> c{};
        for (std::size_t a = 0; a < 3; ++a) c[a] = static_cast<long>(std::floor((p[a] - lo[a]) / cell));
        return c;
    };
    auto key = [](long x, long y, long z) {
        return (static_cast<std::uint64_t>(x + 1) * 73856093u) ^ (static_cast<std::uint64_t>(y + 1) * 19349663u) ^
               (static_cast<std::uint64_t>(z + 1) * 83492791u);
    };
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    std::vector<std::array<long, 3>> cells(n);
    for (std::size_t i = 0; i < n; ++i) {
        cells[i] = cell_of(cloud.points[i]);
        buckets[key(cells[i][0], cells[i][1], cells[i][2])].push_back(i);
    }

    std::vector<std::vector<std::pair<double, std::size_t>>> per_target(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        auto& cand = per_target[i];
        const auto& c = cells[i];
        for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    auto it = buckets.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == buckets.end()) continue;
                    for (std::size_t j : it->second) {
                        if (j == i) continue;
                        const auto& cj = cells[j];
                        // Hash collisions can alias distant cells.
                        if (std::abs(cj[0] - c[0]) > 1 || std::abs(cj[1] - c[1]) > 1 || std::abs(cj[2] - c[2]) > 1) continue;
                        const double d = distance(cloud.points[i], cloud.points[j]);
                        if (d > 0.0 && d <= radius) cand.emplace_back(d, j);
                    }
                }
        // Aliased cells may repeat a bucket; keep each source once.
        std::sort(cand.begin(), cand.end());
        cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    }
    for (std::size_t i = 0; i < n; ++i) emit_neighbors(g, cloud, i, per_target[i], max_degree);
    return g;
}

fps_selection fps(const point_cloud& cloud, double ratio, std::size_t start) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("fps: ratio must lie in (0, 1]");
    fps_selection sel;
    sel.start = start;
    const std::size_t n = cloud.size();
    if (n == 0) return sel;
    if (start >= n) throw std::invalid_argument("fps: start index out of range");
    const auto count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    std::size_t current = start;
    sel.indices.reserve(count);
    while (sel.indices.size() < count) {
        sel.indices.push_back(current);
        taken[current] = true;
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], distance2(cloud.points[i], cloud.points[current]));
            if (!taken[i] && nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        if (best == n) break;
        current = best;
    }
    return sel;
}

std::pair<point_cloud, ag::tensor> pool_cloud(const point_cloud& cloud, const ag::tensor& node_features,
                                              const fps_selection& selection) {
    point_cloud out;
    out.points.reserve(selection.indices.size());
    for (std::size_t i : selection.indices) {
        if (i >= cloud.size()) throw std::out_of_range("pool_cloud: selection index " + std::to_string(i) + " out of range");
        out.points.push_back(cloud.points[i]);
    }
    ag::tensor features;
    if (node_features.defined()) {
        if (node_features.dim(0) != cloud.size()) throw ag::shape_error("pool_cloud: feature rows do not match points");
        features = ag::index_select(node_features, selection.indices);
    }
    return {std::move(out), std::move(features)};
}

namespace reference {

spatial_graph radius_graph(const point_cloud& cloud, double radius, std::size_t max_degree) {
    if (!(radius > 0.0)) throw std::invalid_argument("radius_graph: radius must be positive");
    spatial_graph g = empty_graph(cloud);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cand.clear();
        for (std::size_t j = 0; j < cloud.size(); ++j) {
            if (j == i) continue;
            const double d = distance(cloud.points[i], cloud.points[j]);
            if (d > 0.0 && d <= radius) cand.emplace_back(d, j);
        }
        emit_neighbors(g, cloud, i, cand, max_degree);
    }
    return g;
}

} // namespace reference

} // namespace colearn::geom
