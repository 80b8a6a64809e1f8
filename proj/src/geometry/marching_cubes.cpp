#include <cstdint>
#include <ostream>
#include <unordered_map>

#include "colearn/geometry/geometry.hpp"

namespace colearn::geom {

namespace {

#include "mc_table.inc"

// Corner offsets (x, y, z) and the corner pair spanned by each cube edge.
constexpr int corner_offset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int edge_corners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

} // namespace

surface_mesh marching_cubes(const binary_grid& mask) {
    if (foreground_count(mask) == 0) throw empty_mask_error("marching_cubes: mask has no foreground voxels");
    if (component_count(mask) != 1) {
        throw multi_component_error("marching_cubes: mask foreground is not a single 6-connected component");
    }
    const long D = static_cast<long>(mask.dims.d), H = static_cast<long>(mask.dims.h), W = static_cast<long>(mask.dims.w);
    // Lattice points run from -1 to extent (one ring of implicit background).
    const long LW = W + 2, LH = H + 2;
    auto lattice = [&](long x, long y, long z) { return ((z + 1) * LH + (y + 1)) * LW + (x + 1); };

    surface_mesh mesh;
    std::unordered_map<long, std::uint32_t> vertex_of_edge;
    auto edge_vertex = [&](long x, long y, long z, int edge) {
        const int* a = corner_offset[edge_corners[edge][0]];
        const int* b = corner_offset[edge_corners[edge][1]];
        const long ax = x + std::min(a[0], b[0]), ay = y + std::min(a[1], b[1]), az = z + std::min(a[2], b[2]);
        const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
        const long key = lattice(ax, ay, az) * 3 + axis;
        auto [it, inserted] = vertex_of_edge.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
        if (inserted) {
            vec3 p{static_cast<double>(ax), static_cast<double>(ay), static_cast<double>(az)};
            p[static_cast<std::size_t>(axis)] += 0.5;
            mesh.vertices.push_back(p);
        }
        return it->second;
    };

    for (long z = -1; z < D; ++z)
        for (long y = -1; y < H; ++y)
            for (long x = -1; x < W; ++x) {
                int cube = 0;
                for (int v = 0; v < 8; ++v) {
                    const auto* o = corner_offset[v];
                    if (mask.get_or_zero(z + o[2], y + o[1], x + o[0]) == 0) cube |= 1 << v;
                }
                if (cube == 0 || cube == 255) continue;
                for (int t = 0; tri_table[cube][t] != -1; t += 3) {
                    mesh.triangles.push_back({edge_vertex(x, y, z, tri_table[cube][t]),
                                              edge_vertex(x, y, z, tri_table[cube][t + 1]),
                                              edge_vertex(x, y, z, tri_table[cube][t + 2])});
                }
            }
    return mesh;
}

void write_off(std::ostream& os, const surface_mesh& mesh) {
    os << "OFF\n" << mesh.vertices.size() << ' ' << mesh.triangles.size() << " 0\n";
    for (const auto& v : mesh.vertices) os << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const auto& t : mesh.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

} // namespace colearn::geom
