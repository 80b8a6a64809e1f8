#include <ostream>

#include <CLI11.hpp>

#include "colearn/cli/cli.hpp"
#include "colearn/geometry/geometry.hpp"

namespace colearn::cli {

exit_status classify(const std::exception& e) {
    if (dynamic_cast<const config_error*>(&e)) return config_failure;
    if (dynamic_cast<const data::data_error*>(&e) || dynamic_cast<const model::checkpoint_error*>(&e) ||
        dynamic_cast<const geom::mesh_error*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
        return data_failure;
    }
    return runtime_failure;
}

namespace {

struct flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t points = 0;
    std::string fusion;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* points_opt = nullptr;
    CLI::Option* fusion_opt = nullptr;
};

void add_flags(CLI::App* sub, flags& f, bool points, bool fusion) {
    sub->add_option("--config", f.config, "JSON run configuration");
    f.seed_opt = sub->add_option("--seed", f.seed, "seed override");
    f.out_opt = sub->add_option("--out", f.out, "output directory");
    if (points) f.points_opt = sub->add_option("--points", f.points, "points sampled per surface");
    if (fusion) f.fusion_opt = sub->add_option("--fusion", f.fusion, "average, cnn or gnn");
}

run_config resolve(const flags& f, bool seed_is_cohort_seed) {
    run_config c = f.config.empty() ? run_config{} : load_config(f.config);
    overrides o;
    if (f.seed_opt && f.seed_opt->count()) {
        if (seed_is_cohort_seed) c.cohort.seed = f.seed;
        else o.seed = f.seed;
    }
    if (f.out_opt && f.out_opt->count()) o.out = f.out;
    if (f.points_opt && f.points_opt->count()) o.points = f.points;
    if (f.fusion_opt && f.fusion_opt->count()) o.fusion = f.fusion;
    apply(c, o);
    return c;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Collaborative voxel and point-cloud classification of synthetic volumetric objects."};
    app.name("colearn");
    app.require_subcommand(1);

    flags f_synth, f_pre, f_train, f_ablate, f_eval, f_explain;
    std::string cohort_dir, checkpoint;
    std::vector<std::string> sample_ids;

    auto* synth = app.add_subcommand("synth", "write a synthetic cohort");
    add_flags(synth, f_synth, false, false);

    auto* preprocess = app.add_subcommand("preprocess", "crops, meshes and point clouds for a cohort");
    preprocess->add_option("cohort", cohort_dir, "cohort directory")->required();
    add_flags(preprocess, f_pre, true, false);

    auto* train = app.add_subcommand("train", "train one arm and save a checkpoint");
    add_flags(train, f_train, true, true);

    auto* ablate = app.add_subcommand("ablate", "train the CNN-only, GNN-only and collaborative arms");
    add_flags(ablate, f_ablate, true, false);

    auto* eval = app.add_subcommand("eval", "score a checkpoint on a cohort");
    eval->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
    eval->add_option("cohort", cohort_dir, "cohort directory")->required();
    add_flags(eval, f_eval, true, true);

    auto* explain = app.add_subcommand("explain", "attribution maps for selected samples");
    explain->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
    explain->add_option("cohort", cohort_dir, "cohort directory")->required();
    explain->add_option("ids", sample_ids, "sample ids")->required();
    add_flags(explain, f_explain, true, false);

    std::vector<const char*> argv{"colearn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? success : config_failure;
    }

    try {
        if (synth->parsed()) {
            const auto c = resolve(f_synth, true);
            cmd_synth(c);
            out << "wrote " << c.cohort.n_samples << " samples to " << c.out << "\n";
        } else if (preprocess->parsed()) {
            const auto summary = cmd_preprocess(cohort_dir, resolve(f_pre, false));
            out << "preprocessed " << summary["samples"].size() << " samples, skipped " << summary["skip_count"] << "\n";
        } else if (train->parsed()) {
            const auto report = cmd_train(resolve(f_train, false));
            out << "best epoch " << report["best_epoch"] << ", validation " << report["val"].dump() << "\n";
        } else if (ablate->parsed()) {
            out << cmd_ablate(resolve(f_ablate, false))["rows"].dump(2) << "\n";
        } else if (eval->parsed()) {
            out << collab::to_json(cmd_eval(checkpoint, cohort_dir, resolve(f_eval, false))).dump() << "\n";
        } else if (explain->parsed()) {
            const auto c = resolve(f_explain, false);
            cmd_explain(checkpoint, cohort_dir, sample_ids, c);
            out << "explained " << sample_ids.size() << " samples into " << c.out << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return classify(e);
    }
    return success;
}

} // namespace colearn::cli
