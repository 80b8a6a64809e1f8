#ifndef COLEARN_TESTS_ORACLES_HPP
#define COLEARN_TESTS_ORACLES_HPP

// Brute-force references used only by the tests. Nothing here calls into the
// library code paths it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

namespace oracle {

// Six-nested-loop cross-correlation (plus channel loops) with zero padding.
inline std::vector<double> conv3d_loops(std::span<const double> x, const std::vector<std::size_t>& xs,
                                        std::span<const double> k, const std::vector<std::size_t>& ks,
                                        std::span<const double> bias, std::size_t stride, std::size_t pad) {
    const long B = static_cast<long>(xs[0]), C = static_cast<long>(xs[1]);
    const long D = static_cast<long>(xs[2]), H = static_cast<long>(xs[3]), W = static_cast<long>(xs[4]);
    const long O = static_cast<long>(ks[0]), K = static_cast<long>(ks[2]);
    const long s = static_cast<long>(stride), p = static_cast<long>(pad);
    const long OD = (D + 2 * p - K) / s + 1, OH = (H + 2 * p - K) / s + 1, OW = (W + 2 * p - K) / s + 1;
    std::vector<double> out(static_cast<std::size_t>(B * O * OD * OH * OW));
    auto at = [&](long b, long c, long z, long y, long xx) -> double {
        if (z < 0 || y < 0 || xx < 0 || z >= D || y >= H || xx >= W) return 0.0;
        return x[static_cast<std::size_t>((((b * C + c) * D + z) * H + y) * W + xx)];
    };
    for (long b = 0; b < B; ++b)
        for (long o = 0; o < O; ++o)
            for (long z = 0; z < OD; ++z)
                for (long y = 0; y < OH; ++y)
                    for (long xx = 0; xx < OW; ++xx) {
                        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                        for (long c = 0; c < C; ++c)
                            for (long dz = 0; dz < K; ++dz)
                                for (long dy = 0; dy < K; ++dy)
                                    for (long dx = 0; dx < K; ++dx)
                                        acc += at(b, c, z * s + dz - p, y * s + dy - p, xx * s + dx - p) *
                                               k[static_cast<std::size_t>((((o * C + c) * K + dz) * K + dy) * K + dx)];
                        out[static_cast<std::size_t>((((b * O + o) * OD + z) * OH + y) * OW + xx)] = acc;
                    }
    return out;
}

using point = std::array<double, 3>;

inline double dist2(const point& a, const point& b) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// For every target i: sources j != i with 0 < |pj - pi| <= r, sorted by
// (distance, index), truncated to max_degree.
inline std::vector<std::vector<std::size_t>> radius_neighbors(const std::vector<point>& pts, double r,
                                                              std::size_t max_degree) {
    std::vector<std::vector<std::size_t>> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (j == i) continue;
            const double d = std::sqrt(dist2(pts[i], pts[j]));
            if (d > 0.0 && d <= r) cand.emplace_back(d, j);
        }
        std::sort(cand.begin(), cand.end());
        for (std::size_t k = 0; k < cand.size() && k < max_degree; ++k) out[i].push_back(cand[k].second);
        std::sort(out[i].begin(), out[i].end());
    }
    return out;
}

// Greedy farthest point sampling recomputing every min-distance from scratch:
// O(N^2 K).
inline std::vector<std::size_t> fps(const std::vector<point>& pts, std::size_t count, std::size_t start) {
    std::vector<std::size_t> chosen{start};
    while (chosen.size() < count) {
        double best = -1.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double m = 1e300;
            for (std::size_t c : chosen) m = std::min(m, dist2(pts[i], pts[c]));
            if (m > best) {
                best = m;
                best_i = i;
            }
        }
        chosen.push_back(best_i);
    }
    return chosen;
}

struct topology {
    std::size_t vertices = 0, edges = 0, faces = 0;
    bool closed = true; // every undirected edge in exactly two triangles
    long euler() const { return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces); }
};

inline topology mesh_topology(std::size_t vertex_count, const std::vector<std::array<std::size_t, 3>>& tris) {
    std::map<std::pair<std::size_t, std::size_t>, int> edge_use;
    for (const auto& t : tris)
        for (int e = 0; e < 3; ++e) {
            auto a = t[e], b = t[(e + 1) % 3];
            edge_use[{std::min(a, b), std::max(a, b)}]++;
        }
    topology topo;
    topo.vertices = vertex_count;
    topo.edges = edge_use.size();
    topo.faces = tris.size();
    for (const auto& [edge, n] : edge_use) {
        if (n != 2) topo.closed = false;
    }
    return topo;
}

// Edge-conditioned convolution that builds every edge's F_in x F_out filter
// explicitly. The edge network's batchnorm uses fixed statistics (eval mode).
// w2 rows are laid out as (k * fout + o) for hidden unit k, plus a final block
// of fout rows acting as the filter bias.
struct nnconv_weights {
    std::size_t hidden = 0, fin = 0, fout = 0;
    std::vector<double> w1, b1, gamma, beta, mean, var;
    double eps = 1e-5;
    std::vector<double> w2, root, root_bias;
};

inline std::vector<double> nnconv_loops(const std::vector<double>& x, std::size_t n, const std::vector<std::size_t>& sources,
                                        const std::vector<std::size_t>& targets, const std::vector<double>& edge_features,
                                        const nnconv_weights& w) {
    const std::size_t H = w.hidden, I = w.fin, O = w.fout;
    std::vector<double> out(n * O, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < O; ++o) {
            double v = w.root_bias[o];
            for (std::size_t a = 0; a < I; ++a) v += w.root[o * I + a] * x[i * I + a];
            out[i * O + o] = v;
        }
    for (std::size_t e = 0; e < sources.size(); ++e) {
        std::vector<double> h(H + 1, 1.0);
        for (std::size_t k = 0; k < H; ++k) {
            double v = w.b1[k];
            for (std::size_t c = 0; c < 3; ++c) v += w.w1[k * 3 + c] * edge_features[e * 3 + c];
            v = (v - w.mean[k]) / std::sqrt(w.var[k] + w.eps) * w.gamma[k] + w.beta[k];
            h[k] = std::max(v, 0.0);
        }
        std::vector<double> filter(I * O, 0.0);
        for (std::size_t a = 0; a < I; ++a)
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t k = 0; k <= H; ++k) filter[a * O + o] += h[k] * w.w2[(k * O + o) * I + a];
        const std::size_t j = sources[e], t = targets[e];
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t a = 0; a < I; ++a) out[t * O + o] += x[j * I + a] * filter[a * O + o];
    }
    for (auto& v : out) v = std::max(v, 0.0);
    return out;
}

} // namespace oracle

#endif // COLEARN_TESTS_ORACLES_HPP
