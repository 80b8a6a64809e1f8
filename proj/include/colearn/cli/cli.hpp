#ifndef COLEARN_CLI_CLI_HPP
#define COLEARN_CLI_CLI_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "colearn/collab/collab.hpp"
#include "colearn/data/volume.hpp"
#include "colearn/interpret/interpret.hpp"
#include "colearn/model/config_io.hpp"

namespace colearn::cli {

/// Everything a command needs, read from one JSON document. Every section is
/// optional; missing keys keep their defaults and unknown keys are rejected.
struct run_config {
    data::cohort_spec cohort;
    std::string cohort_dir; ///< when set, load the cohort from disk instead of synthesizing it
    model::cnn_config cnn;
    model::gnn_config gnn;
    collab::train_config train; ///< train.seed always equals `seed`
    interpret::explain_config explain;
    std::string fusion = "average";
    std::string out = "run";
    std::uint64_t seed = 0;
};

/// Throws config_error for unknown keys, wrong types and invalid values.
run_config config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const run_config& c);

/// Missing or unparsable files are config errors too.
run_config load_config(const std::filesystem::path& file);

struct overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> points;
    std::optional<std::string> fusion;
};

/// Applies command-line flags on top of the file and re-validates.
void apply(run_config& c, const overrides& o);

nlohmann::json cohort_to_json(const data::cohort_spec& s);
data::cohort_spec cohort_from_json(const nlohmann::json& j, const std::string& where = "cohort");
nlohmann::json train_to_json(const collab::train_config& c);
collab::train_config train_from_json(const nlohmann::json& j, const std::string& where = "train");
nlohmann::json explain_to_json(const interpret::explain_config& c);
interpret::explain_config explain_from_json(const nlohmann::json& j, const std::string& where = "explain");

// ---------------------------------------------------------------- commands
//
// Each command writes the resolved configuration to <out>/config.json before
// anything else, then its outputs next to it.

/// <out>/manifest.json plus one volume file pair per sample. `--seed` for this
/// command selects the cohort seed.
void cmd_synth(const run_config& c);

/// For every sample of the cohort at `cohort_dir`: the network crop
/// (crops/<id>.json + .bin), the surface mesh (meshes/<id>.off) and the
/// normalized cloud (clouds/<id>.csv). Returns the summary also written to
/// <out>/summary.json.
nlohmann::json cmd_preprocess(const std::filesystem::path& cohort_dir, const run_config& c);

/// Stratified 4:1 split, fold 0 of the training part for early stopping, one
/// training run of the `fusion` arm. Writes <out>/checkpoint/,
/// <out>/history.jsonl and <out>/report.json (returned).
nlohmann::json cmd_train(const run_config& c);

/// Same split; the three arms side by side in <out>/table.json (returned).
nlohmann::json cmd_ablate(const run_config& c);

/// Scores a checkpoint on every sample of a cohort directory; writes
/// <out>/eval.json. Model configs and the cloud seed come from the checkpoint.
collab::eval_report cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& cohort_dir,
                             const run_config& c);

/// Per sample: Grad-CAM volume (<id>_cam.json + .bin), its projection onto the
/// cloud (<id>_cam_points.csv), the edge-mask point importances
/// (<id>_gnn_points.csv) and the thresholded regions of both
/// (<id>_regions.json). Returns the regions keyed by id.
nlohmann::json cmd_explain(const std::filesystem::path& checkpoint, const std::filesystem::path& cohort_dir,
                           const std::vector<std::string>& ids, const run_config& c);

// ------------------------------------------------------------ entry point

enum exit_status : int { success = 0, config_failure = 2, data_failure = 3, runtime_failure = 4 };

/// Maps an exception to its exit status: schema problems 2; unreadable or
/// malformed inputs, missing checkpoints and unmeshable data 3; anything
/// else 4.
exit_status classify(const std::exception& e);

/// Parses `args` (without the program name) and runs the command. Messages go
/// to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace colearn::cli

#endif // COLEARN_CLI_CLI_HPP
