#include <fstream>

#include "colearn/cli/cli.hpp"

namespace colearn::cli {

namespace fs = std::filesystem;
using config_detail::read;
using config_detail::read_count;
using config_detail::require_keys;
using nlohmann::json;

namespace {

template <class F>
void checked(const std::string& where, F&& f) {
    try {
        f();
    } catch (const config_error&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw config_error(where + ": " + e.what());
    }
}

std::uint64_t read_seed(const json& j, const char* key, std::uint64_t fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw config_error(where + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

} // namespace

json cohort_to_json(const data::cohort_spec& s) {
    return {{"n_samples", s.n_samples},
            {"dims", {s.dims.d, s.dims.h, s.dims.w}},
            {"class_ratio", s.class_ratio},
            {"geometry_signal", s.geometry_signal},
            {"intensity_signal", s.intensity_signal},
            {"seed", s.seed}};
}

data::cohort_spec cohort_from_json(const json& j, const std::string& where) {
    require_keys(j, {"n_samples", "dims", "class_ratio", "geometry_signal", "intensity_signal", "seed"}, where);
    data::cohort_spec s;
    read_count(j, "n_samples", s.n_samples, where);
    if (j.contains("dims")) {
        std::vector<std::size_t> d;
        config_detail::read_counts(j, "dims", d, where);
        if (d.size() != 3) throw config_error(where + ".dims: expected [d, h, w]");
        s.dims = {d[0], d[1], d[2]};
    }
    read(j, "class_ratio", s.class_ratio, where);
    read(j, "geometry_signal", s.geometry_signal, where);
    read(j, "intensity_signal", s.intensity_signal, where);
    s.seed = read_seed(j, "seed", s.seed, where);
    if (s.n_samples == 0) throw config_error(where + ".n_samples: must be positive");
    checked(where, [&] { data::validate(s); });
    return s;
}

json train_to_json(const collab::train_config& c) {
    return {{"epochs", c.epochs},
            {"lr_start", c.lr_start},
            {"lr_end", c.lr_end},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay},
            {"patience", c.patience},
            {"batch_size", c.batch_size},
            {"lambda", c.lambda},
            {"n_points", c.n_points},
            {"rotate_clouds", c.rotate_clouds}};
}

collab::train_config train_from_json(const json& j, const std::string& where) {
    require_keys(j, {"epochs", "lr_start", "lr_end", "beta1", "beta2", "eps", "weight_decay", "patience", "batch_size",
                     "lambda", "n_points", "rotate_clouds"},
                 where);
    collab::train_config c;
    read_count(j, "epochs", c.epochs, where);
    read(j, "lr_start", c.lr_start, where);
    read(j, "lr_end", c.lr_end, where);
    read(j, "beta1", c.beta1, where);
    read(j, "beta2", c.beta2, where);
    read(j, "eps", c.eps, where);
    read(j, "weight_decay", c.weight_decay, where);
    read_count(j, "patience", c.patience, where);
    read_count(j, "batch_size", c.batch_size, where);
    read(j, "lambda", c.lambda, where);
    read_count(j, "n_points", c.n_points, where);
    read(j, "rotate_clouds", c.rotate_clouds, where);
    checked(where, [&] { collab::validate(c); });
    return c;
}

json explain_to_json(const interpret::explain_config& c) {
    return {{"steps", c.steps},
            {"lr", c.lr},
            {"size_weight", c.size_weight},
            {"entropy_weight", c.entropy_weight},
            {"init_mask", c.init_mask},
            {"entropy_mean", c.entropy_mean}};
}

interpret::explain_config explain_from_json(const json& j, const std::string& where) {
    require_keys(j, {"steps", "lr", "size_weight", "entropy_weight", "init_mask", "entropy_mean"}, where);
    interpret::explain_config c;
    read_count(j, "steps", c.steps, where);
    read(j, "lr", c.lr, where);
    read(j, "size_weight", c.size_weight, where);
    read(j, "entropy_weight", c.entropy_weight, where);
    read(j, "init_mask", c.init_mask, where);
    read(j, "entropy_mean", c.entropy_mean, where);
    checked(where, [&] { interpret::validate(c); });
    return c;
}

run_config config_from_json(const json& j) {
    require_keys(j, {"cohort", "cohort_dir", "cnn", "gnn", "train", "explain", "fusion", "out", "seed"}, "config");
    run_config c;
    if (j.contains("cohort")) c.cohort = cohort_from_json(j.at("cohort"));
    read(j, "cohort_dir", c.cohort_dir, "config");
    if (j.contains("cnn")) c.cnn = model::cnn_from_json(j.at("cnn"));
    if (j.contains("gnn")) c.gnn = model::gnn_from_json(j.at("gnn"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("explain")) c.explain = explain_from_json(j.at("explain"));
    read(j, "fusion", c.fusion, "config");
    read(j, "out", c.out, "config");
    c.seed = read_seed(j, "seed", c.seed, "config");
    apply(c, {});
    return c;
}

json to_json(const run_config& c) {
    return {{"cohort", cohort_to_json(c.cohort)},
            {"cohort_dir", c.cohort_dir},
            {"cnn", model::to_json(c.cnn)},
            {"gnn", model::to_json(c.gnn)},
            {"train", train_to_json(c.train)},
            {"explain", explain_to_json(c.explain)},
            {"fusion", c.fusion},
            {"out", c.out},
            {"seed", c.seed}};
}

run_config load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw config_error("cannot read config " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw config_error(file.string() + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const config_error& e) {
        throw config_error(file.string() + ": " + e.what());
    }
}

void apply(run_config& c, const overrides& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.points) c.train.n_points = *o.points;
    if (o.fusion) c.fusion = *o.fusion;
    c.train.seed = c.seed;
    checked("fusion", [&] { collab::arm_from_string(c.fusion); });
    checked("train", [&] { collab::validate(c.train); });
    if (c.out.empty()) throw config_error("out: must not be empty");
}

} // namespace colearn::cli
