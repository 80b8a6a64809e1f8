#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"

#include "colearn/data/volume.hpp"
#include "colearn/interpret/interpret.hpp"

using namespace colearn;
using namespace colearn::interpret;
namespace fs = std::filesystem;

namespace {

model::cnn_config tiny_cnn() {
    model::cnn_config c;
    c.widths = {2, 3, 3, 4};
    c.fc = {6, 5, 1};
    c.crop = 8;
    return c;
}

model::gnn_config tiny_gnn() {
    model::gnn_config g;
    g.widths = {3, 4, 4, 5};
    g.edge_hidden = 3;
    g.fc = {6, 5, 1};
    return g;
}

// Crop whose box is the whole S^3 grid, so crop and voxel coordinates agree.
model::crop_input identity_crop(std::size_t s, const binary_grid& mask) {
    model::crop_input c;
    c.mask = mask;
    c.box.lo = {0, 0, 0};
    c.box.extent = {s, s, s};
    c.box.size = s;
    c.values.assign(data::channel_count * s * s * s, 0.0);
    return c;
}

attribution_map voxel_map(std::size_t s, std::vector<real> v) {
    attribution_map m;
    m.kind = attribution_kind::voxel;
    m.dims = {s, s, s};
    m.values = std::move(v);
    return m;
}

geom::point_cloud random_cloud(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    geom::point_cloud c;
    for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
    return c;
}

data::volume_sample one_sample(std::uint64_t seed) {
    data::cohort_spec spec;
    spec.n_samples = 1;
    spec.dims = {12, 12, 12};
    spec.seed = seed;
    return data::generate_cohort(spec).front();
}

} // namespace

TEST_CASE("min_max_normalize") {
    std::vector<real> v{2.0, 4.0, 3.0};
    min_max_normalize(v);
    CHECK(v == std::vector<real>{0.0, 1.0, 0.5});
    std::vector<real> zeros(4, 0.0);
    min_max_normalize(zeros);
    CHECK(zeros == std::vector<real>(4, 0.0));
    std::vector<real> flat(3, 0.7);
    min_max_normalize(flat);
    CHECK(flat == std::vector<real>(3, 1.0));
}

TEST_CASE("grad_cam_weights toy layers") {
    const std::size_t d = 4;
    const std::size_t n = d * d * d;
    SUBCASE("alpha (1, -1) over left and right halves") {
        std::vector<real> a(2 * n), g(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool left = i % d < d / 2;
            a[i] = left ? 1.0 : 0.0;
            a[n + i] = left ? 0.0 : 1.0;
            g[i] = 1.0;
            g[n + i] = -1.0;
        }
        const auto cam = grad_cam_weights(ag::tensor::from({2, d, d, d}, a), ag::tensor::from({2, d, d, d}, g));
        for (std::size_t i = 0; i < n; ++i) CHECK((cam[i] > 0.0) == (i % d < d / 2));
    }
    SUBCASE("logit = mean of one constant positive channel gives a uniform map") {
        std::vector<real> a(2 * n), g(2 * n, 0.0);
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = 0.8;
            a[n + i] = u(rng);
            g[i] = 1.0 / static_cast<real>(n);
        }
        auto cam = grad_cam_weights(ag::tensor::from({1, 2, d, d, d}, a), ag::tensor::from({1, 2, d, d, d}, g));
        for (real v : cam) CHECK(v == doctest::Approx(0.8 / static_cast<real>(n)));
        min_max_normalize(cam);
        CHECK(cam == std::vector<real>(n, 1.0));
    }
    SUBCASE("non-positive weighted sum is all zero") {
        std::vector<real> a(n, 1.0), g(n, -0.5);
        const auto cam = grad_cam_weights(ag::tensor::from({1, d, d, d}, a), ag::tensor::from({1, d, d, d}, g));
        CHECK(cam == std::vector<real>(n, 0.0));
    }
    CHECK_THROWS_AS(grad_cam_weights(ag::tensor::zeros({2, 2, 2}), ag::tensor::zeros({2, 2, 2})), ag::shape_error);
}

TEST_CASE("upsample_trilinear") {
    const std::vector<real> one{3.0};
    CHECK(upsample_trilinear(one, {1, 1, 1}, 4) == std::vector<real>(64, 3.0));
    std::vector<real> ramp(8);
    for (std::size_t i = 0; i < 8; ++i) ramp[i] = static_cast<real>(i);
    CHECK(upsample_trilinear(ramp, {2, 2, 2}, 2) == ramp);
    // Linear along x: 0 | 1 at centers 0.5 and 1.5 of a 4-wide output.
    std::vector<real> x{0.0, 1.0};
    const auto up = upsample_trilinear(x, {1, 1, 2}, 4);
    CHECK(up[0] == 0.0);
    CHECK(up[1] == doctest::Approx(0.25));
    CHECK(up[2] == doctest::Approx(0.75));
    CHECK(up[3] == 1.0);
    CHECK_THROWS(upsample_trilinear(x, {1, 1, 3}, 4));
}

TEST_CASE("grad_cam_3d on a model") {
    auto s = model::init_params(tiny_cnn(), tiny_gnn(), 3);
    const auto crop = model::prepare_crop(one_sample(2), 8);
    for (int cls : {0, 1}) {
        for (std::size_t layer = 0; layer < 4; ++layer) {
            const auto cam = grad_cam_3d(s, crop, cls, layer);
            CHECK(cam.dims == dims3{8, 8, 8});
            for (std::size_t i = 0; i < cam.values.size(); ++i) {
                CHECK(cam.values[i] >= 0.0);
                CHECK(cam.values[i] <= 1.0);
                if (!crop.mask.values[i]) CHECK(cam.values[i] == 0.0);
            }
        }
    }
    for (const auto& p : s.params) CHECK_FALSE(p.value.has_grad());
    CHECK_THROWS_AS(grad_cam_3d(s, crop, 1, 4), std::out_of_range);
    CHECK_THROWS_AS(grad_cam_3d(s, crop, 2), std::invalid_argument);

    // A constant-logit model has no gradient anywhere.
    for (auto& v : s.param("cnn.fc2.weight").data()) v = 0.0;
    const auto flat = grad_cam_3d(s, crop, 1);
    CHECK(std::all_of(flat.values.begin(), flat.values.end(), [](real v) { return v == 0.0; }));
}

TEST_CASE("project_cam_to_points") {
    const std::size_t s = 6;
    binary_grid mask({s, s, s}, 1);
    const auto crop = identity_crop(s, mask);
    const geom::cloud_transform identity;
    std::vector<real> ramp(s * s * s);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<real>(i) / static_cast<real>(ramp.size());
    const auto cam = voxel_map(s, ramp);

    SUBCASE("points on voxel centers take that voxel's value") {
        geom::point_cloud c;
        c.points = {{1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}, {5.0, 5.0, 5.0}};
        const auto p = project_cam_to_points(cam, crop, c, identity);
        CHECK(p.kind == attribution_kind::point);
        CHECK(p.values[0] == ramp[mask.dims.index(3, 2, 1)]);
        CHECK(p.values[1] == ramp[0]);
        CHECK(p.values[2] == ramp.back());
    }
    SUBCASE("ties go to the lowest linear index") {
        geom::point_cloud c;
        c.points = {{0.5, 0.0, 0.0}};
        CHECK(project_cam_to_points(cam, crop, c, identity).values[0] == ramp[0]);
    }
    SUBCASE("uniform map gives uniform importances") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(-1.0, 6.0);
        geom::point_cloud c;
        for (int i = 0; i < 50; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
        const auto p = project_cam_to_points(voxel_map(s, std::vector<real>(s * s * s, 0.6)), crop, c, identity);
        CHECK(p.values == std::vector<real>(50, 0.6));
    }
    SUBCASE("a map confined to one octant only reaches points in that octant") {
        std::vector<real> oct(s * s * s, 0.0);
        for (std::size_t z = 0; z < s / 2; ++z)
            for (std::size_t y = 0; y < s / 2; ++y)
                for (std::size_t x = 0; x < s / 2; ++x) oct[mask.dims.index(z, y, x)] = 1.0;
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(0.0, 5.0);
        geom::point_cloud c;
        for (int i = 0; i < 200; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
        const auto p = project_cam_to_points(voxel_map(s, oct), crop, c, identity);
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto& q = c.points[i];
            // Nearest voxel center rounds each coordinate; .5 ties go low.
            const bool inside = q[0] <= 2.5 && q[1] <= 2.5 && q[2] <= 2.5;
            CHECK((p.values[i] > 0.0) == inside);
        }
    }
    SUBCASE("only mask voxels are candidates") {
        binary_grid half({s, s, s}, 0);
        for (std::size_t z = 0; z < s; ++z)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = s / 2; x < s; ++x) half.at(z, y, x) = 1;
        geom::point_cloud c;
        c.points = {{0.0, 1.0, 1.0}};
        const auto p = project_cam_to_points(cam, identity_crop(s, half), c, identity);
        CHECK(p.values[0] == ramp[mask.dims.index(1, 1, s / 2)]);
    }
    SUBCASE("errors") {
        geom::point_cloud c;
        c.points = {{0.0, 0.0, 0.0}};
        geom::cloud_transform degenerate;
        degenerate.scale = 0.0;
        CHECK_THROWS(project_cam_to_points(cam, crop, c, degenerate));
        CHECK_THROWS(project_cam_to_points(voxel_map(s - 1, std::vector<real>((s - 1) * (s - 1) * (s - 1))), crop, c, identity));
        auto bad = cam;
        bad.kind = attribution_kind::point;
        CHECK_THROWS(project_cam_to_points(bad, crop, c, identity));
    }
}

TEST_CASE("projection on a prepared sample is idempotent and mask-consistent") {
    model::cnn_config cnn = tiny_cnn();
    const auto p = model::prepare_sample(one_sample(7), cnn, tiny_gnn(), 64, 1);
    std::vector<real> v(512, 0.0);
    for (std::size_t i = 0; i < 512; ++i)
        if (p.crop.mask.values[i]) v[i] = 1.0;
    const auto cam = voxel_map(8, v);
    const auto a = project_cam_to_points(cam, p.crop, p.cloud, p.transform);
    const auto b = project_cam_to_points(cam, p.crop, p.cloud, p.transform);
    CHECK(a.values == b.values);
    CHECK(a.values == std::vector<real>(64, 1.0));
}

TEST_CASE("gnn_explain") {
    auto s = model::init_params(tiny_cnn(), tiny_gnn(), 11);
    std::mt19937_64 rng(12);
    const auto cloud = random_cloud(rng, 48);
    const auto graphs = model::build_hierarchy(cloud, s.gnn);
    const std::size_t e = graphs.levels.front().sources.size();
    REQUIRE(e > 0);
    const auto hash = model::parameter_hash(s, "");

    SUBCASE("zero steps leave every mask at its initial value") {
        explain_config c;
        c.steps = 0;
        const auto x = gnn_explain(s, graphs, c);
        for (real m : x.raw_mask) CHECK(m == doctest::Approx(0.9).epsilon(1e-12));
        CHECK(x.edges.values == std::vector<real>(e, 1.0));
        CHECK(x.loss.empty());
    }
    SUBCASE("a dominant size penalty drives all masks to zero") {
        explain_config c;
        c.size_weight = 1e3;
        c.lr = 0.1;
        const auto x = gnn_explain(s, graphs, c);
        for (real m : x.raw_mask) CHECK(m < 0.01);
    }
    SUBCASE("defaults: ranges, point reduction and objective descent") {
        const auto x = gnn_explain(s, graphs, explain_config{}, "probe");
        CHECK(x.raw_mask.size() == e);
        CHECK(x.points.values.size() == cloud.size());
        CHECK(x.points.sample_id == "probe");
        for (real v : x.points.values) CHECK((v >= 0.0 && v <= 1.0));
        for (real v : x.edges.values) CHECK((v >= 0.0 && v <= 1.0));

        // point importance = normalized max over incident edges
        std::vector<real> expect(cloud.size(), 0.0);
        const auto& lv = graphs.levels.front();
        for (std::size_t k = 0; k < e; ++k) {
            expect[lv.sources[k]] = std::max(expect[lv.sources[k]], x.raw_mask[k]);
            expect[lv.targets[k]] = std::max(expect[lv.targets[k]], x.raw_mask[k]);
        }
        min_max_normalize(expect);
        CHECK(expect == x.points.values);

        REQUIRE(x.loss.size() == 200);
        std::size_t down = 0;
        for (std::size_t t = 1; t < x.loss.size(); ++t) down += x.loss[t] <= x.loss[t - 1];
        CHECK(static_cast<double>(down) >= 0.95 * static_cast<double>(x.loss.size() - 1));
        for (std::size_t t = 0; t + 10 < x.loss.size(); t += 10) CHECK(x.loss[t + 10] <= x.loss[t]);
    }
    SUBCASE("isolated points get zero importance") {
        auto far = cloud;
        far.points.push_back({5.0, 5.0, 5.0});
        const auto g = model::build_hierarchy(geom::normalize_cloud(far), s.gnn);
        const auto x = gnn_explain(s, g, explain_config{});
        CHECK(x.points.values.back() == 0.0);
    }
    // weights untouched, gradients cleared, tracking restored
    CHECK(model::parameter_hash(s, "") == hash);
    for (const auto& p : s.params) {
        CHECK_FALSE(p.value.has_grad());
        CHECK(p.value.requires_grad());
    }
    explain_config bad;
    bad.init_mask = 1.0;
    CHECK_THROWS(gnn_explain(s, graphs, bad));
}

TEST_CASE("threshold_report") {
    geom::point_cloud c;
    c.points = {{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {1, 1, 1}, {1.1, 1, 1}, {-1, -1, -1}};
    attribution_map p;
    p.kind = attribution_kind::point;

    p.values.assign(6, 0.0);
    auto r = threshold_report(p, c);
    REQUIRE(r.size() == 2);
    CHECK(r[0].clusters.empty());
    CHECK(r[1].clusters.empty());

    p.values[4] = 0.9;
    r = threshold_report(p, c);
    REQUIRE(r[0].clusters.size() == 1);
    REQUIRE(r[1].clusters.size() == 1);
    CHECK(r[1].clusters[0].points == std::vector<std::size_t>{4});

    p.values = {0.6, 0.9, 0.85, 0.7, 0.55, 0.5};
    r = threshold_report(p, c);
    REQUIRE(r[0].clusters.size() == 2);
    CHECK(r[0].clusters[0].points == std::vector<std::size_t>{0, 1, 2});
    CHECK(r[0].clusters[0].centroid[0] == doctest::Approx(0.1));
    CHECK(r[0].clusters[1].points == std::vector<std::size_t>{3, 4});
    REQUIRE(r[1].clusters.size() == 1);
    CHECK(r[1].clusters[0].points == std::vector<std::size_t>{1, 2});

    // Every 0.8-cluster sits inside one 0.5-cluster.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto cloud = random_cloud(rng, 60);
        attribution_map m;
        m.kind = attribution_kind::point;
        for (int i = 0; i < 60; ++i) m.values.push_back(u(rng));
        const auto levels = threshold_report(m, cloud);
        std::vector<int> owner(60, -1);
        for (std::size_t k = 0; k < levels[0].clusters.size(); ++k)
            for (auto i : levels[0].clusters[k].points) owner[i] = static_cast<int>(k);
        for (const auto& cl : levels[1].clusters) {
            const int first = owner[cl.points.front()];
            CHECK(first >= 0);
            for (auto i : cl.points) CHECK(owner[i] == first);
        }
    }
    attribution_map short_map;
    short_map.values = {1.0};
    CHECK_THROWS(threshold_report(short_map, c));
}

TEST_CASE("exports") {
    const fs::path dir = fs::temp_directory_path() / "colearn_test_interpret";
    fs::remove_all(dir);
    auto cam = voxel_map(4, std::vector<real>(64, 0.0));
    cam.values[5] = 1.0;
    cam.values[9] = 0.25;
    cam.sample_id = "s0001";
    save_voxel_map(cam, dir);
    const auto back = data::load_scalar_volume(dir, "s0001");
    CHECK(back.dims == cam.dims);
    for (std::size_t i = 0; i < 64; ++i) CHECK(back.values[i] == static_cast<float>(cam.values[i]));

    geom::point_cloud c;
    c.points = {{0.5, -0.25, 1.0}, {0.0, 0.0, 0.0}};
    attribution_map p;
    p.kind = attribution_kind::point;
    p.values = {0.75, 0.0};
    write_point_csv(p, c, dir / "points.csv");
    std::ifstream in(dir / "points.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,z,importance");
    std::getline(in, line);
    CHECK(line == "0.5,-0.25,1,0.75");

    p.values = {0.9, 0.0};
    const auto j = to_json(threshold_report(p, c));
    REQUIRE(j.size() == 2);
    CHECK(j[0]["threshold"] == 0.5);
    CHECK(j[0]["clusters"][0]["size"] == 1);
    CHECK(j[1]["clusters"][0]["points"][0] == 0);
    fs::remove_all(dir);
}
