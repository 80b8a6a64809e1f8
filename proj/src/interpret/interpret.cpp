#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "colearn/data/volume.hpp"
#include "colearn/interpret/interpret.hpp"

namespace colearn::interpret {

void min_max_normalize(std::vector<real>& v) {
    if (v.empty()) return;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const real a = *lo, b = *hi;
    if (b > a) {
        for (auto& x : v) x = (x - a) / (b - a);
    } else {
        std::fill(v.begin(), v.end(), b > 0.0 ? 1.0 : 0.0);
    }
}

// ----------------------------------------------------------------- Grad-CAM

std::vector<real> grad_cam_weights(const ag::tensor& activation, const ag::tensor& gradient) {
    if (activation.shape() != gradient.shape()) throw ag::shape_error("grad_cam_weights: activation and gradient differ");
    const auto& sh = activation.shape();
    if (!(sh.size() == 4 || (sh.size() == 5 && sh[0] == 1))) {
        throw ag::shape_error("grad_cam_weights: expected [C, D, H, W], got " + ag::shape_str(sh));
    }
    const std::size_t c = sh[sh.size() - 4];
    const std::size_t n = activation.size() / c;
    const auto a = activation.data(), g = gradient.data();
    std::vector<real> cam(n, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        real alpha = 0.0;
        for (std::size_t i = 0; i < n; ++i) alpha += g[k * n + i];
        alpha /= static_cast<real>(n);
        for (std::size_t i = 0; i < n; ++i) cam[i] += alpha * a[k * n + i];
    }
    for (auto& v : cam) v = std::max(v, 0.0);
    return cam;
}

std::vector<real> upsample_trilinear(std::span<const real> map, dims3 from, std::size_t size) {
    if (map.size() != from.count() || from.count() == 0) throw std::invalid_argument("upsample_trilinear: map does not match its dims");
    struct tap {
        std::size_t i0, i1;
        real t;
    };
    auto taps = [size](std::size_t extent) {
        std::vector<tap> out(size);
        for (std::size_t o = 0; o < size; ++o) {
            real src = (static_cast<real>(o) + 0.5) * static_cast<real>(extent) / static_cast<real>(size) - 0.5;
            src = std::clamp(src, 0.0, static_cast<real>(extent - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            out[o] = {i0, std::min(i0 + 1, extent - 1), src - static_cast<real>(i0)};
        }
        return out;
    };
    const auto tz = taps(from.d), ty = taps(from.h), tx = taps(from.w);
    std::vector<real> out(size * size * size);
    for (std::size_t z = 0; z < size; ++z)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                real v = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const real w = (dz ? tz[z].t : 1 - tz[z].t) * (dy ? ty[y].t : 1 - ty[y].t) * (dx ? tx[x].t : 1 - tx[x].t);
                            if (w == 0.0) continue;
                            v += w * map[from.index(dz ? tz[z].i1 : tz[z].i0, dy ? ty[y].i1 : ty[y].i0, dx ? tx[x].i1 : tx[x].i0)];
                        }
                out[(z * size + y) * size + x] = v;
            }
    return out;
}

attribution_map grad_cam_3d(model::model_state& s, const model::crop_input& crop, int target_class,
                            std::optional<std::size_t> layer) {
    const std::size_t stages = s.cnn.widths.size();
    const std::size_t l = layer.value_or(stages - 1);
    if (l >= stages) throw std::out_of_range("grad_cam_3d: layer " + std::to_string(l) + " outside [0, " + std::to_string(stages) + ")");
    if (target_class != 0 && target_class != 1) throw std::invalid_argument("grad_cam_3d: class must be 0 or 1");

    const model::crop_input* batch[] = {&crop};
    std::vector<ag::tensor> acts;
    ag::rng_t unused(0);
    const auto out = model::cnn_forward(s, model::stack_crops(batch), ag::mode::eval, unused, &acts);
    ag::backward(ag::sum(target_class == 1 ? out.logit : ag::scale(out.logit, -1.0)));
    const ag::tensor& a = acts[l];
    const ag::tensor g = a.has_grad() ? ag::tensor::from(a.shape(), {a.grad().begin(), a.grad().end()})
                                      : ag::tensor::zeros(a.shape());
    for (auto& p : s.params) p.value.zero_grad();

    const dims3 at{a.dim(2), a.dim(3), a.dim(4)};
    const std::size_t size = crop.box.size;
    attribution_map m;
    m.kind = attribution_kind::voxel;
    m.dims = {size, size, size};
    m.values = upsample_trilinear(grad_cam_weights(a, g), at, size);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (!crop.mask.values[i]) m.values[i] = 0.0;
    min_max_normalize(m.values);
    m.model_hash = model::parameter_hash(s, "cnn.");
    return m;
}

attribution_map project_cam_to_points(const attribution_map& cam, const model::crop_input& crop,
                                      const geom::point_cloud& cloud, const geom::cloud_transform& transform) {
    const std::size_t size = crop.box.size;
    if (cam.kind != attribution_kind::voxel) throw std::invalid_argument("project_cam_to_points: expected a voxel map");
    if (size == 0 || !(transform.scale > 0.0)) throw std::invalid_argument("project_cam_to_points: crop or cloud transform missing");
    if (cam.dims != dims3{size, size, size} || cam.values.size() != size * size * size || crop.mask.dims != cam.dims) {
        throw ag::shape_error("project_cam_to_points: map and crop disagree in size");
    }
    std::vector<std::array<real, 3>> centers;
    std::vector<std::size_t> index;
    for (std::size_t z = 0; z < size; ++z)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (crop.mask.at(z, y, x)) {
                    centers.push_back({static_cast<real>(z), static_cast<real>(y), static_cast<real>(x)});
                    index.push_back(cam.dims.index(z, y, x));
                }
    if (centers.empty()) throw std::invalid_argument("project_cam_to_points: crop mask is empty");

    attribution_map out;
    out.kind = attribution_kind::point;
    out.sample_id = cam.sample_id;
    out.model_hash = cam.model_hash;
    out.values.resize(cloud.size());
#pragma omp parallel for
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(cloud.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const geom::vec3 v = transform.invert(cloud.points[i]); // (x, y, z) voxel coordinates
        const real p[3] = {v[2], v[1], v[0]};
        real c[3];
        for (std::size_t a = 0; a < 3; ++a) {
            const auto ext = static_cast<real>(crop.box.extent[a]);
            c[a] = (p[a] - static_cast<real>(crop.box.lo[a]) + 0.5) * static_cast<real>(size) / ext - 0.5;
        }
        real best = std::numeric_limits<real>::infinity();
        std::size_t pick = 0;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const real dz = centers[k][0] - c[0], dy = centers[k][1] - c[1], dx = centers[k][2] - c[2];
            const real d = dz * dz + dy * dy + dx * dx;
            if (d < best) {
                best = d;
                pick = k;
            }
        }
        out.values[i] = cam.values[index[pick]];
    }
    return out;
}

// ---------------------------------------------------------------- explainer

void validate(const explain_config& c) {
    if (!(c.lr > 0.0)) throw std::invalid_argument("explain: lr must be positive");
    if (!(c.size_weight >= 0.0) || !(c.entropy_weight >= 0.0)) throw std::invalid_argument("explain: weights must be >= 0");
    if (!(c.init_mask > 0.0 && c.init_mask < 1.0)) throw std::invalid_argument("explain: init_mask must lie in (0, 1)");
}

namespace {

// Turns gradient tracking off for the model weights while alive.
class frozen_weights {
public:
    explicit frozen_weights(model::model_state& s) : s_(s) {
        for (auto& p : s_.params) {
            saved_.push_back(p.value.requires_grad());
            p.value.set_requires_grad(false);
        }
    }
    ~frozen_weights() {
        for (std::size_t i = 0; i < saved_.size(); ++i) {
            s_.params[i].value.set_requires_grad(saved_[i]);
            s_.params[i].value.zero_grad();
        }
    }
    frozen_weights(const frozen_weights&) = delete;
    frozen_weights& operator=(const frozen_weights&) = delete;

private:
    model::model_state& s_;
    std::vector<bool> saved_;
};

} // namespace

explanation gnn_explain(model::model_state& s, const model::graph_hierarchy& graphs, const explain_config& c,
                        const std::string& sample_id) {
    validate(c);
    if (graphs.levels.empty()) throw std::invalid_argument("gnn_explain: empty hierarchy");
    const auto& first = graphs.levels.front();
    const std::size_t e = first.sources.size(), n = first.cloud.size();
    const model::graph_hierarchy* batch[] = {&graphs};
    ag::rng_t unused(0);

    explanation out;
    {
        ag::no_grad_guard guard;
        out.target = model::gnn_forward(s, batch, ag::mode::eval, unused).probability[0] >= 0.5 ? 1 : 0;
    }
    frozen_weights freeze(s);

    const real beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<real> w(e, std::log(c.init_mask / (1.0 - c.init_mask))), m1(e, 0.0), m2(e, 0.0);
    const real clamp = 1e-7;
    for (std::size_t step = 0; step < c.steps && e > 0; ++step) {
        const ag::tensor logits = ag::tensor::from({e}, w, true);
        const ag::tensor mask = ag::sigmoid(logits);
        const auto fwd = model::gnn_forward(s, batch, ag::mode::eval, unused, mask);
        const ag::tensor p = ag::clamp(fwd.probability, clamp, 1.0 - clamp);
        const ag::tensor one = ag::tensor::full({1, 1}, 1.0);
        const ag::tensor bce = ag::scale(ag::sum(ag::log(out.target == 1 ? p : ag::sub(one, p))), -1.0);
        const ag::tensor mc = ag::clamp(mask, clamp, 1.0 - clamp);
        const ag::tensor ones = ag::tensor::full({e}, 1.0);
        const ag::tensor entropy = ag::scale(
            ag::sum(ag::add(ag::mul(mc, ag::log(mc)), ag::mul(ag::sub(ones, mc), ag::log(ag::sub(ones, mc))))), -1.0);
        const real ent_w = c.entropy_mean ? c.entropy_weight / static_cast<real>(e) : c.entropy_weight;
        const ag::tensor loss = ag::add(bce, ag::add(ag::scale(ag::sum(mask), c.size_weight), ag::scale(entropy, ent_w)));
        const real value = loss.item();
        if (!std::isfinite(value)) throw explain_error("gnn_explain: non-finite objective at step " + std::to_string(step));
        out.loss.push_back(value);
        ag::backward(loss);
        const auto g = logits.grad();
        const real t = static_cast<real>(step + 1);
        for (std::size_t k = 0; k < e; ++k) {
            m1[k] = beta1 * m1[k] + (1 - beta1) * g[k];
            m2[k] = beta2 * m2[k] + (1 - beta2) * g[k] * g[k];
            w[k] -= c.lr * (m1[k] / (1 - std::pow(beta1, t))) / (std::sqrt(m2[k] / (1 - std::pow(beta2, t))) + eps);
        }
    }

    out.raw_mask.resize(e);
    for (std::size_t k = 0; k < e; ++k) out.raw_mask[k] = 1.0 / (1.0 + std::exp(-w[k]));
    const auto hash = model::parameter_hash(s, "gnn.");
    out.edges = {attribution_kind::edge, out.raw_mask, {}, sample_id, hash};
    min_max_normalize(out.edges.values);
    out.points = {attribution_kind::point, std::vector<real>(n, 0.0), {}, sample_id, hash};
    for (std::size_t k = 0; k < e; ++k) {
        for (std::size_t v : {first.sources[k], first.targets[k]}) out.points.values[v] = std::max(out.points.values[v], out.raw_mask[k]);
    }
    min_max_normalize(out.points.values);
    return out;
}

// ----------------------------------------------------------- thresholding

std::vector<threshold_level> threshold_report(const attribution_map& points, const geom::point_cloud& cloud,
                                              std::vector<real> thresholds, real link_distance) {
    if (points.values.size() != cloud.size()) throw std::invalid_argument("threshold_report: one importance per point required");
    std::vector<threshold_level> out;
    const real r2 = link_distance * link_distance;
    for (real th : thresholds) {
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < cloud.size(); ++i)
            if (points.values[i] > th) kept.push_back(i);
        std::vector<std::size_t> parent(kept.size());
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](std::size_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (std::size_t a = 0; a < kept.size(); ++a)
            for (std::size_t b = a + 1; b < kept.size(); ++b) {
                const auto& p = cloud.points[kept[a]];
                const auto& q = cloud.points[kept[b]];
                const real d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
                if (d <= r2) parent[find(a)] = find(b);
            }
        std::vector<cluster> clusters;
        std::vector<std::ptrdiff_t> slot(kept.size(), -1);
        for (std::size_t a = 0; a < kept.size(); ++a) {
            const std::size_t root = find(a);
            if (slot[root] < 0) {
                slot[root] = static_cast<std::ptrdiff_t>(clusters.size());
                clusters.emplace_back();
            }
            clusters[static_cast<std::size_t>(slot[root])].points.push_back(kept[a]);
        }
        for (auto& c : clusters) {
            for (std::size_t i : c.points)
                for (std::size_t a = 0; a < 3; ++a) c.centroid[a] += cloud.points[i][a];
            for (auto& v : c.centroid) v /= static_cast<real>(c.points.size());
        }
        std::stable_sort(clusters.begin(), clusters.end(),
                         [](const cluster& a, const cluster& b) { return a.points.size() > b.points.size(); });
        out.push_back({th, std::move(clusters)});
    }
    return out;
}

// ----------------------------------------------------------------- exports

void save_voxel_map(const attribution_map& cam, const std::filesystem::path& dir) {
    if (cam.kind != attribution_kind::voxel || cam.values.size() != cam.dims.count()) {
        throw std::invalid_argument("save_voxel_map: expected a voxel map");
    }
    float_grid g(cam.dims);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<float>(cam.values[i]);
    data::save_scalar_volume(cam.sample_id.empty() ? "cam" : cam.sample_id, g, dir);
}

void write_point_csv(const attribution_map& points, const geom::point_cloud& cloud, const std::filesystem::path& file) {
    if (points.values.size() != cloud.size()) throw std::invalid_argument("write_point_csv: one importance per point required");
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "x,y,z,importance\n" << std::setprecision(9);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        out << p[0] << ',' << p[1] << ',' << p[2] << ',' << points.values[i] << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

nlohmann::json to_json(const std::vector<threshold_level>& report) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& lv : report) {
        nlohmann::json cs = nlohmann::json::array();
        for (const auto& c : lv.clusters) cs.push_back({{"size", c.points.size()}, {"centroid", c.centroid}, {"points", c.points}});
        levels.push_back({{"threshold", lv.threshold}, {"clusters", cs}});
    }
    return levels;
}

} // namespace colearn::interpret
