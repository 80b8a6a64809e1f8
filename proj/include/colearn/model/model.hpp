#ifndef COLEARN_MODEL_MODEL_HPP
#define COLEARN_MODEL_MODEL_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colearn/autograd/ops.hpp"
#include "colearn/data/volume.hpp"
#include "colearn/geometry/geometry.hpp"

namespace colearn::model {

using ag::real;

struct cnn_config {
    std::size_t in_channels = 4;
    std::vector<std::size_t> widths{8, 16, 32, 64};
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    std::size_t pool = 2; ///< clamped to the current extent on small crops
    std::vector<std::size_t> fc{256, 128, 1};
    real dropout = 0.3;
    std::size_t crop = 32;
    bool operator==(const cnn_config&) const = default;
};

struct gnn_config {
    std::vector<real> radii{0.25, 0.5, 0.75, 1.0};
    real ratio = 0.5;
    std::vector<std::size_t> widths{16, 32, 64, 128}; ///< input width is 3 (coordinates)
    std::size_t edge_hidden = 32;
    std::size_t max_degree = 32;
    std::vector<std::size_t> fc{256, 128, 1};
    real dropout = 0.3;
    bool operator==(const gnn_config&) const = default;
};

/// Throw std::invalid_argument on inconsistent settings.
void validate(const cnn_config& c);
void validate(const gnn_config& c);

/// Spatial extent after each conv + pool stage of the CNN.
std::vector<std::size_t> cnn_extents(const cnn_config& c);
std::size_t cnn_flat_features(const cnn_config& c);

// ------------------------------------------------------------------ state

struct parameter {
    std::string name;
    ag::tensor value;
    std::vector<real> m; ///< Adam first moment (empty until the first step)
    std::vector<real> v; ///< Adam second moment
};

struct norm_state {
    std::string name;
    ag::running_stats stats;
};

/// Every learnable tensor of both branches plus batchnorm running statistics
/// and optimizer moments. Names start with "cnn." or "gnn.".
struct model_state {
    cnn_config cnn;
    gnn_config gnn;
    std::uint64_t seed = 0;
    std::size_t step = 0; ///< Adam steps taken
    std::vector<parameter> params;
    std::vector<norm_state> norms;

    parameter& find(std::string_view name);
    const parameter& find(std::string_view name) const;
    ag::tensor& param(std::string_view name) { return find(name).value; }
    ag::running_stats& stats(std::string_view name);

    std::size_t scalar_count() const;
    /// Deep copy: tensors are not shared with the original.
    model_state clone() const;
};

/// Fan-in uniform weights in [-sqrt(1/fan_in), sqrt(1/fan_in)] drawn at single
/// precision, zero biases, unit gammas, zero betas.
model_state init_params(const cnn_config& cnn, const gnn_config& gnn, std::uint64_t seed);

/// Order-independent FNV-1a digest over the names and values of the
/// parameters whose names start with `prefix`.
std::uint64_t parameter_hash(const model_state& s, std::string_view prefix = "");

// ------------------------------------------------------------ checkpoints

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class checkpoint_version_error : public checkpoint_error {
public:
    using checkpoint_error::checkpoint_error;
};
class checkpoint_corrupt_error : public checkpoint_error {
public:
    using checkpoint_error::checkpoint_error;
};
class checkpoint_truncated_error : public checkpoint_corrupt_error {
public:
    using checkpoint_corrupt_error::checkpoint_corrupt_error;
};

inline constexpr int checkpoint_version = 1;

/// `<dir>/manifest.json` lists every tensor (parameters, Adam moments,
/// running statistics) with its shape and offset; `<dir>/payload.bin` holds
/// their values as little-endian f32 in manifest order.
void save_state(const model_state& s, const std::filesystem::path& dir);
model_state load_state(const std::filesystem::path& dir);

// ---------------------------------------------------------- preprocessing

/// Bounding box of the mask (z, y, x) and the cube it was resampled to.
struct crop_box {
    std::array<std::size_t, 3> lo{};
    std::array<std::size_t, 3> extent{};
    std::size_t size = 0;
    bool operator==(const crop_box&) const = default;
};

struct crop_input {
    std::vector<real> values; ///< [channels, S, S, S], zero outside the mask
    binary_grid mask;         ///< resampled mask, S^3
    crop_box box;
};

/// Mask bounding box resampled to S^3 by nearest neighbour, intensities zeroed
/// outside the mask and z-scored per channel over the mask voxels.
crop_input prepare_crop(const data::volume_sample& s, std::size_t size);

/// One level of the point-convolution hierarchy: the cloud at that level, its
/// radius graph and the farthest-point selection that feeds the next level.
struct graph_level {
    geom::point_cloud cloud;
    std::vector<std::size_t> sources;
    std::vector<std::size_t> targets;
    std::vector<real> edge_features; ///< [E, 3], p_source - p_target
    geom::fps_selection pooled;
};

struct graph_hierarchy {
    std::vector<graph_level> levels;
};

graph_hierarchy build_hierarchy(const geom::point_cloud& cloud, const gnn_config& cfg);

struct prepared_sample {
    std::string id;
    int label = 0;
    bool augmented = false;
    crop_input crop;
    geom::surface_mesh mesh;
    geom::point_cloud cloud; ///< normalized to [-1, 1]
    geom::cloud_transform transform;
    graph_hierarchy graphs;
};

/// Crop plus mesh -> n_points cloud -> normalized cloud -> graph hierarchy.
/// The cloud draw is seeded from (seed, id). Throws geom::mesh_error for
/// masks that cannot be meshed.
prepared_sample prepare_sample(const data::volume_sample& s, const cnn_config& cnn, const gnn_config& gnn,
                               std::size_t n_points, std::uint64_t seed);

// ---------------------------------------------------------------- forward

struct branch_output {
    ag::tensor logit;       ///< [B, 1]
    ag::tensor probability; ///< [B, 1], sigmoid(logit)
    ag::tensor latent;      ///< [B, 128], input of the last FC layer
};

/// Stacks crops into a [B, C, S, S, S] tensor.
ag::tensor stack_crops(std::span<const crop_input* const> crops);

/// conv -> batchnorm -> relu -> maxpool, four times, then the FC head.
/// `activations`, when given, receives each stage's post-relu map.
branch_output cnn_forward(model_state& s, const ag::tensor& input, ag::mode m, ag::rng_t& rng,
                          std::vector<ag::tensor>* activations = nullptr);

/// Edge-conditioned convolution on a (possibly disjoint, batched) graph:
/// x_i' = relu(W x_i + b + sum_j M(e_ij) x_j), where M(e) is the F_in x F_out
/// matrix produced by the edge network linear -> batchnorm -> relu -> linear.
/// `edge_mask` ([E]) scales each message when defined.
ag::tensor pointconv(model_state& s, std::size_t layer, const ag::tensor& x, std::span<const std::size_t> sources,
                     std::span<const std::size_t> targets, std::span<const real> edge_features, ag::mode m,
                     const ag::tensor& edge_mask = {});

/// Single-sample layer: convolution on `level`'s graph followed by
/// farthest-point pooling.
std::pair<geom::point_cloud, ag::tensor> pointconv_layer(model_state& s, std::size_t layer, const graph_level& level,
                                                         const ag::tensor& features, ag::mode m);

/// Four point convolutions, global max pool, FC head. `edge_mask`, when
/// defined, holds one weight per first-level edge of the concatenated batch.
branch_output gnn_forward(model_state& s, std::span<const graph_hierarchy* const> batch, ag::mode m, ag::rng_t& rng,
                          const ag::tensor& edge_mask = {});

/// Edges in the first level of each hierarchy, in concatenation order.
std::size_t first_level_edges(std::span<const graph_hierarchy* const> batch);

} // namespace colearn::model

#endif // COLEARN_MODEL_MODEL_HPP
