#ifndef COLEARN_INTERPRET_INTERPRET_HPP
#define COLEARN_INTERPRET_INTERPRET_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "colearn/model/model.hpp"

namespace colearn::interpret {

using ag::real;

enum class attribution_kind { voxel, point, edge };

/// Per-sample importances in [0, 1].
struct attribution_map {
    attribution_kind kind = attribution_kind::voxel;
    std::vector<real> values;
    dims3 dims{};              ///< crop grid for voxel maps
    std::string sample_id;
    std::uint64_t model_hash = 0; ///< parameter digest of the explained state
};

/// (v - min) / (max - min). A constant input maps to all ones when positive
/// and stays all zero otherwise.
void min_max_normalize(std::vector<real>& v);

// ----------------------------------------------------------------- Grad-CAM

/// relu(sum_k alpha_k A_k) with alpha_k the spatial mean of dA_k. Both inputs
/// are [C, D, H, W] (one sample); the result is [D, H, W], not normalized.
std::vector<real> grad_cam_weights(const ag::tensor& activation, const ag::tensor& gradient);

/// Trilinear resampling of a [d, h, w] map onto size^3 (voxel centers aligned,
/// edges clamped).
std::vector<real> upsample_trilinear(std::span<const real> map, dims3 from, std::size_t size);

/// Grad-CAM of `target_class` (logit for 1, negated logit for 0) at conv stage
/// `layer` (defaults to the last), upsampled to the crop, zeroed outside the
/// crop mask and normalized. Runs in eval mode; parameter gradients are left
/// cleared.
attribution_map grad_cam_3d(model::model_state& s, const model::crop_input& crop, int target_class,
                            std::optional<std::size_t> layer = std::nullopt);

/// Importance of each cloud point: the CAM value of the nearest crop-mask voxel
/// center (ties to the lowest linear index) after mapping the normalized
/// point back through the cloud and crop transforms.
attribution_map project_cam_to_points(const attribution_map& cam, const model::crop_input& crop,
                                      const geom::point_cloud& cloud, const geom::cloud_transform& transform);

// ---------------------------------------------------------------- explainer

struct explain_config {
    std::size_t steps = 200;
    real lr = 0.01;
    real size_weight = 0.005;
    real entropy_weight = 0.1;
    real init_mask = 0.9; ///< initial sigmoid value of every edge
    bool entropy_mean = true; ///< average the entropy term over edges instead of summing
    bool operator==(const explain_config&) const = default;
};

void validate(const explain_config& c);

class explain_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct explanation {
    std::vector<real> raw_mask;   ///< sigmoid of the learned logits, one per first-level edge
    attribution_map edges;        ///< normalized edge mask
    attribution_map points;       ///< normalized max incident edge mask
    std::vector<real> loss;       ///< objective before each step
    int target = 0;               ///< the model's own unmasked prediction
};

/// Learns a soft mask over the first-level edges so that the masked GNN keeps
/// predicting its own label: BCE + size_weight * sum(m) + entropy_weight *
/// mean(H(m)) (or sum, see explain_config), minimized with Adam. Weights stay
/// fixed; eval mode throughout.
explanation gnn_explain(model::model_state& s, const model::graph_hierarchy& graphs, const explain_config& c,
                        const std::string& sample_id = {});

// ----------------------------------------------------------- thresholding

struct cluster {
    std::vector<std::size_t> points; ///< ascending
    geom::vec3 centroid{};
};

struct threshold_level {
    real threshold = 0.0;
    std::vector<cluster> clusters; ///< largest first, then by first point
};

/// For each threshold, points with importance strictly above it grouped into
/// clusters of points linked within `link_distance`.
std::vector<threshold_level> threshold_report(const attribution_map& points, const geom::point_cloud& cloud,
                                              std::vector<real> thresholds = {0.5, 0.8}, real link_distance = 0.25);

// ----------------------------------------------------------------- exports

/// Voxel map as a one-channel volume file pair.
void save_voxel_map(const attribution_map& cam, const std::filesystem::path& dir);

/// `x,y,z,importance` with a header row.
void write_point_csv(const attribution_map& points, const geom::point_cloud& cloud, const std::filesystem::path& file);

nlohmann::json to_json(const std::vector<threshold_level>& report);

} // namespace colearn::interpret

#endif // COLEARN_INTERPRET_INTERPRET_HPP
