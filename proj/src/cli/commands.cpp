#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "colearn/cli/cli.hpp"
#include "colearn/geometry/geometry.hpp"

namespace colearn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

void write_json(const fs::path& file, const json& j) { write_file(file, j.dump(2) + "\n"); }

/// Resolved configuration snapshot, written before any work.
void snapshot(const run_config& c) { write_json(fs::path(c.out) / "config.json", to_json(c)); }

collab::experiment_config experiment(const run_config& c) { return {c.cnn, c.gnn, c.train}; }

std::vector<data::volume_sample> load_cohort(const fs::path& dir) {
    std::vector<data::volume_sample> out;
    for (const auto& e : data::load_manifest(dir / "manifest.json")) {
        auto s = data::load_volume(dir, e.id);
        if (s.label != e.label) throw data::format_error(dir.string() + ": label of " + e.id + " disagrees with the manifest");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<data::volume_sample> cohort_of(const run_config& c) {
    return c.cohort_dir.empty() ? data::generate_cohort(c.cohort) : load_cohort(c.cohort_dir);
}

struct split_cohort {
    std::vector<data::volume_sample> pool;
    std::vector<data::volume_sample> test;
};

split_cohort split(const std::vector<data::volume_sample>& all, std::uint64_t seed) {
    std::vector<int> labels;
    for (const auto& s : all) labels.push_back(s.label);
    const auto sp = data::split_dataset(labels, true, seed);
    split_cohort out;
    for (std::size_t i : sp.train) out.pool.push_back(all[i]);
    for (std::size_t i : sp.test) out.test.push_back(all[i]);
    return out;
}

json ids(const std::vector<data::volume_sample>& v) {
    json out = json::array();
    for (const auto& s : v) out.push_back(s.id);
    return out;
}

json ids(const collab::dataset& v) {
    json out = json::array();
    for (const auto& s : v) out.push_back(s.id);
    return out;
}

/// Crop header plus payload: channel-major f32 values, then the mask bytes.
void save_crop(const model::crop_input& crop, const std::string& id, const fs::path& dir) {
    const json h = {{"id", id},
                    {"size", crop.box.size},
                    {"channels", crop.values.size() / crop.mask.dims.count()},
                    {"dtype", "f32-le"},
                    {"box_lo", crop.box.lo},
                    {"box_extent", crop.box.extent}};
    write_file(dir / (id + ".json"), h.dump(1) + "\n");
    std::string bytes;
    bytes.reserve(crop.values.size() * 4 + crop.mask.values.size());
    for (double v : crop.values) {
        const float f = static_cast<float>(v);
        bytes.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
    for (auto m : crop.mask.values) bytes.push_back(static_cast<char>(m));
    write_file(dir / (id + ".bin"), bytes);
}

void save_cloud(const geom::point_cloud& cloud, const fs::path& file) {
    std::ostringstream os;
    os << "x,y,z\n" << std::setprecision(9);
    for (const auto& p : cloud.points) os << p[0] << ',' << p[1] << ',' << p[2] << '\n';
    write_file(file, os.str());
}

model::model_state load_checkpoint(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw model::checkpoint_error("no checkpoint at " + dir.string());
    return model::load_state(dir);
}

/// The checkpoint fixes the networks and the cloud seed.
run_config adopt(run_config c, const model::model_state& s) {
    c.cnn = s.cnn;
    c.gnn = s.gnn;
    c.seed = s.seed;
    c.train.seed = s.seed;
    return c;
}

} // namespace

void cmd_synth(const run_config& c) {
    snapshot(c);
    const fs::path out(c.out);
    const auto cohort = data::generate_cohort(c.cohort);
    std::vector<data::manifest_entry> entries;
    for (const auto& s : cohort) {
        data::save_volume(s, out);
        entries.push_back({s.id, s.label});
    }
    data::save_manifest(entries, out / "manifest.json");
}

json cmd_preprocess(const fs::path& cohort_dir, const run_config& c) {
    snapshot(c);
    const fs::path out(c.out);
    std::vector<std::string> skipped;
    std::vector<data::volume_sample> cohort;
    for (const auto& e : data::load_manifest(cohort_dir / "manifest.json")) {
        try {
            cohort.push_back(data::load_volume(cohort_dir, e.id));
        } catch (const data::mask_error& err) {
            std::clog << "preprocess: skipped " << err.what() << "\n";
            skipped.push_back(e.id);
        }
    }

    // Ground truth comes from re-running the generator recorded next to the
    // cohort; without that record there is nothing to score against.
    std::map<std::string, binary_grid> truth;
    const fs::path record = cohort_dir / "config.json";
    if (fs::exists(record)) {
        const run_config origin = load_config(record);
        for (auto& s : data::generate_cohort(origin.cohort)) truth.emplace(s.id, std::move(s.mask));
    }

    std::vector<std::string> unmeshable;
    const auto prepared = collab::prepare_all(cohort, experiment(c), &unmeshable);
    for (const auto& id : unmeshable) std::clog << "preprocess: skipped " << id << ": mask cannot be meshed\n";
    skipped.insert(skipped.end(), unmeshable.begin(), unmeshable.end());
    std::sort(skipped.begin(), skipped.end());

    std::map<std::string, const data::volume_sample*> by_id;
    for (const auto& s : cohort) by_id[s.id] = &s;

    json samples = json::array();
    for (const auto& p : prepared) {
        save_crop(p.crop, p.id, out / "crops");
        std::ostringstream off;
        geom::write_off(off, p.mesh);
        write_file(out / "meshes" / (p.id + ".off"), off.str());
        save_cloud(p.cloud, out / "clouds" / (p.id + ".csv"));
        json dice = nullptr;
        if (const auto t = truth.find(p.id); t != truth.end()) dice = data::dice_score(by_id.at(p.id)->mask, t->second);
        samples.push_back({{"id", p.id},
                           {"label", p.label},
                           {"dice", dice},
                           {"vertices", p.mesh.vertices.size()},
                           {"triangles", p.mesh.triangles.size()},
                           {"points", p.cloud.size()}});
    }
    const json summary = {{"n_points", c.train.n_points},
                          {"crop", c.cnn.crop},
                          {"samples", samples},
                          {"skipped", skipped},
                          {"skip_count", skipped.size()}};
    write_json(out / "summary.json", summary);
    return summary;
}

json cmd_train(const run_config& c) {
    snapshot(c);
    const fs::path out(c.out);
    const auto parts = split(cohort_of(c), c.seed);
    const auto h = collab::holdout_fold(parts.pool, c.seed);
    const auto cfg = experiment(c);
    std::vector<std::string> skipped;
    const auto fit = collab::prepare_all(h.fit, cfg, &skipped);
    const auto val = collab::prepare_all(h.val, cfg, &skipped);
    const auto test = collab::prepare_all(parts.test, cfg, &skipped);
    if (fit.empty() || val.empty()) throw data::data_error("train: fit or validation set is empty after preprocessing");

    const collab::arm a = collab::arm_from_string(c.fusion);
    auto run = collab::train(model::init_params(c.cnn, c.gnn, c.seed), fit, val, c.train, a);
    model::save_state(run.state, out / "checkpoint");
    collab::write_history(run.history, out / "history.jsonl");

    json report = {{"arm", collab::to_string(a)},
                   {"best_epoch", run.best_epoch},
                   {"epochs_run", run.history.size()},
                   {"val", collab::to_json(collab::evaluate(run.state, val, a))},
                   {"test", test.empty() ? json(nullptr) : collab::to_json(collab::evaluate(run.state, test, a))},
                   {"split", {{"fit", ids(fit)}, {"val", ids(val)}, {"test", ids(test)}}},
                   {"skipped", skipped}};
    write_json(out / "report.json", report);
    return report;
}

json cmd_ablate(const run_config& c) {
    snapshot(c);
    const auto parts = split(cohort_of(c), c.seed);
    json table = collab::to_json(collab::ablate(parts.pool, parts.test, experiment(c)));
    table["test_ids"] = ids(parts.test);
    write_json(fs::path(c.out) / "table.json", table);
    return table;
}

collab::eval_report cmd_eval(const fs::path& checkpoint, const fs::path& cohort_dir, const run_config& c) {
    auto state = load_checkpoint(checkpoint);
    const run_config r = adopt(c, state);
    snapshot(r);
    std::vector<std::string> skipped;
    const auto samples = collab::prepare_all(load_cohort(cohort_dir), experiment(r), &skipped);
    if (samples.empty()) throw data::data_error("eval: no usable samples in " + cohort_dir.string());
    const auto report = collab::evaluate(state, samples, collab::arm_from_string(r.fusion));

    json j = collab::to_json(report);
    j["arm"] = collab::to_string(collab::arm_from_string(r.fusion));
    j["skipped"] = skipped;
    json per_sample = json::array();
    for (std::size_t i = 0; i < report.ids.size(); ++i) {
        per_sample.push_back({{"id", report.ids[i]}, {"probability", std::round(report.probabilities[i] * 1e6) / 1e6}});
    }
    j["samples"] = per_sample;
    write_json(fs::path(r.out) / "eval.json", j);
    return report;
}

json cmd_explain(const fs::path& checkpoint, const fs::path& cohort_dir, const std::vector<std::string>& sample_ids,
                 const run_config& c) {
    auto state = load_checkpoint(checkpoint);
    const run_config r = adopt(c, state);
    snapshot(r);
    const fs::path out(r.out);
    json all = json::object();
    for (const auto& id : sample_ids) {
        const auto sample = data::load_volume(cohort_dir, id);
        model::prepared_sample p;
        try {
            p = model::prepare_sample(sample, r.cnn, r.gnn, r.train.n_points, r.seed);
        } catch (const geom::mesh_error& e) {
            throw data::data_error("explain " + id + ": " + e.what());
        }
        const collab::dataset one{p};
        const int cnn_class = collab::evaluate(state, one, collab::arm::cnn_only).probabilities.front() >= 0.5 ? 1 : 0;

        auto cam = interpret::grad_cam_3d(state, p.crop, cnn_class);
        cam.sample_id = id + "_cam";
        interpret::save_voxel_map(cam, out);
        const auto projected = interpret::project_cam_to_points(cam, p.crop, p.cloud, p.transform);
        interpret::write_point_csv(projected, p.cloud, out / (id + "_cam_points.csv"));

        interpret::explanation ex;
        try {
            ex = interpret::gnn_explain(state, p.graphs, r.explain, id);
        } catch (const interpret::explain_error& e) {
            throw interpret::explain_error("explain " + id + ": " + e.what());
        }
        interpret::write_point_csv(ex.points, p.cloud, out / (id + "_gnn_points.csv"));

        const json regions = {{"id", id},
                              {"label", p.label},
                              {"cnn_class", cnn_class},
                              {"gnn_class", ex.target},
                              {"model_hash", cam.model_hash},
                              {"cam", interpret::to_json(interpret::threshold_report(projected, p.cloud))},
                              {"gnn", interpret::to_json(interpret::threshold_report(ex.points, p.cloud))}};
        write_json(out / (id + "_regions.json"), regions);
        all[id] = regions;
    }
    return all;
}

} // namespace colearn::cli
