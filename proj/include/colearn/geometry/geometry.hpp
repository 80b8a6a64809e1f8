#ifndef COLEARN_GEOMETRY_GEOMETRY_HPP
#define COLEARN_GEOMETRY_GEOMETRY_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "colearn/autograd/tensor.hpp"
#include "colearn/grid.hpp"

namespace colearn::geom {

using vec3 = std::array<double, 3>;

class mesh_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class empty_mask_error : public mesh_error {
public:
    using mesh_error::mesh_error;
};
class multi_component_error : public mesh_error {
public:
    using mesh_error::mesh_error;
};

/// Triangle mesh in voxel coordinates (x, y, z order per vertex).
struct surface_mesh {
    std::vector<vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
};

/// Isosurface at 0.5 of a binary mask using the 256-case lookup table, with
/// vertices at cube-edge midpoints shared between neighbouring cells. The mask
/// is treated as zero outside its bounds.
surface_mesh marching_cubes(const binary_grid& mask);

/// Writes an OFF mesh: header, counts, one vertex per line, "3 a b c" faces.
void write_off(std::ostream& os, const surface_mesh& mesh);

struct point_cloud {
    std::vector<vec3> points;
    std::size_t size() const { return points.size(); }
};

/// Draws n mesh vertices: without replacement when the mesh has at least n,
/// otherwise every vertex once plus uniform extra draws.
point_cloud sample_point_cloud(const surface_mesh& mesh, std::size_t n, std::mt19937_64& rng);

/// Affine map applied by normalize_cloud: normalized = (p - center) / scale.
struct cloud_transform {
    vec3 center{0.0, 0.0, 0.0};
    double scale = 1.0; // 0 marks a degenerate cloud

    vec3 apply(const vec3& p) const;
    vec3 invert(const vec3& q) const;
};

/// Centers on the bounding-box midpoint and divides by the largest half-extent,
/// so the result lies in [-1, 1]^3. Degenerate clouds collapse to the origin.
point_cloud normalize_cloud(const point_cloud& cloud, cloud_transform* transform = nullptr);

/// Directed radius graph; edge k runs sources[k] -> targets[k] and carries
/// p_source - p_target.
struct spatial_graph {
    std::size_t node_count = 0;
    std::vector<std::size_t> sources;
    std::vector<std::size_t> targets;
    std::vector<vec3> edge_features;
    std::vector<vec3> node_features;

    std::size_t edge_count() const { return sources.size(); }
};

/// Links j -> i when 0 < |p_j - p_i| <= radius, keeping per target the
/// max_degree nearest sources (ties by lower index). Edges are grouped by
/// target, sources ascending.
spatial_graph radius_graph(const point_cloud& cloud, double radius, std::size_t max_degree = 32);

struct fps_selection {
    std::vector<std::size_t> indices;
    std::size_t start = 0;
};

/// Greedy farthest point sampling of ceil(ratio * N) points.
fps_selection fps(const point_cloud& cloud, double ratio, std::size_t start = 0);

/// Keeps the selected points and their feature rows, in selection order.
std::pair<point_cloud, ag::tensor> pool_cloud(const point_cloud& cloud, const ag::tensor& node_features,
                                              const fps_selection& selection);

namespace reference {

/// O(N^2) serial radius graph; same contract as geom::radius_graph.
spatial_graph radius_graph(const point_cloud& cloud, double radius, std::size_t max_degree = 32);

} // namespace reference

} // namespace colearn::geom

#endif // COLEARN_GEOMETRY_GEOMETRY_HPP
