#ifndef COLEARN_COLLAB_COLLAB_HPP
#define COLEARN_COLLAB_COLLAB_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "colearn/model/model.hpp"

namespace colearn::collab {

using ag::real;

inline constexpr real probability_clamp = 1e-7;

/// Which branches a run trains and how predictions are fused.
enum class arm { collaborative, cnn_only, gnn_only };

const char* to_string(arm a);
arm arm_from_string(const std::string& s); ///< "average"/"collaborative", "cnn", "gnn"

// ------------------------------------------------------------------ losses

/// Sum of the two branch cross-entropies, averaged over the batch. Inputs are
/// [B, 1]; probabilities are clamped to [1e-7, 1 - 1e-7] first.
ag::tensor bce_pair_loss(const ag::tensor& y, const ag::tensor& x_u, const ag::tensor& x_v);
real bce_pair_loss(int y, real x_u, real x_v);

/// Cross-entropy of one branch, averaged over the batch.
ag::tensor bce_loss(const ag::tensor& y, const ag::tensor& x);

/// KL(p||q) + KL(q||p) with p = softmax(z_u), q = softmax(z_v) per row,
/// averaged over the batch. Exactly symmetric in its arguments.
ag::tensor kl_pair_loss(const ag::tensor& z_u, const ag::tensor& z_v);

struct loss_breakdown {
    ag::tensor total;
    real bce = 0.0;
    real kl = 0.0;
    real lambda = 0.0;
};

/// bce + lambda * kl for the collaborative arm; a single-branch arm uses that
/// branch's cross-entropy alone (the other output may be undefined).
loss_breakdown total_loss(const ag::tensor& y, const model::branch_output& u, const model::branch_output& v, real lambda,
                          arm a = arm::collaborative);

// --------------------------------------------------------------- optimizer

struct train_config {
    std::size_t epochs = 200;
    real lr_start = 1e-3;
    real lr_end = 1e-4;
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    real weight_decay = 1e-4;
    std::size_t patience = 20;
    std::size_t batch_size = 8;
    real lambda = 1.0;
    std::size_t n_points = 512;
    bool rotate_clouds = false; ///< fresh random rotation of every training cloud per step
    std::uint64_t seed = 0;
    bool operator==(const train_config&) const = default;
};

void validate(const train_config& c);

/// Linear interpolation from lr_start (epoch 0) to lr_end (last epoch).
real lr_at(std::size_t epoch, const train_config& c);

class training_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One Adam step with bias correction over every parameter holding a
/// gradient; decoupled weight decay theta -= lr * wd * theta comes first.
/// Parameters and moments are kept at single precision so checkpoints are
/// exact. Throws training_error naming the first non-finite gradient.
void adam_step(model::model_state& s, real lr, const train_config& c);

// ---------------------------------------------------------------- training

struct epoch_record {
    std::size_t epoch = 0;
    real lr = 0.0;
    real train_bce = 0.0;
    real train_kl = 0.0;
    real val_loss = 0.0;
    real val_acc = 0.0;
};

struct train_result {
    model::model_state state; ///< weights of the best validation epoch
    std::vector<epoch_record> history;
    std::size_t best_epoch = 0;
};

using dataset = std::vector<model::prepared_sample>;

/// Minibatch training with seeded shuffling, early stopping on validation
/// loss and restoration of the best epoch. `init` is consumed as the
/// starting point; pass model::init_params(...) for a fresh run.
train_result train(model::model_state init, const dataset& fit, const dataset& val, const train_config& c,
                   arm a = arm::collaborative);

void write_history(const std::vector<epoch_record>& history, const std::filesystem::path& file);

// -------------------------------------------------------------- evaluation

struct eval_report {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    real accuracy = 0.0;    ///< percent
    real sensitivity = 0.0; ///< percent; NaN without positives
    real specificity = 0.0; ///< percent; NaN without negatives
    std::vector<std::string> ids;
    std::vector<real> probabilities; ///< fused probability per sample
};

eval_report report_from_confusion(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

/// Eval-mode predictions (1 iff fused probability >= 0.5). The cnn_only arm
/// never runs the GNN branch and vice versa.
eval_report evaluate(model::model_state& s, const dataset& samples, arm fusion, std::size_t batch_size = 16);

/// Per-sample loss and accuracy in eval mode, as used for early stopping.
std::pair<real, real> validation_loss(model::model_state& s, const dataset& samples, const train_config& c, arm a);

/// Confusion counts plus metrics rendered to one decimal.
nlohmann::json to_json(const eval_report& r);

// ------------------------------------------------------------- experiments

struct experiment_config {
    model::cnn_config cnn;
    model::gnn_config gnn;
    train_config train;
};

/// Prepares every sample (crop, mesh, cloud, graphs). Masks that cannot be
/// meshed are dropped and their ids appended to `skipped`.
dataset prepare_all(const std::vector<data::volume_sample>& samples, const experiment_config& cfg,
                    std::vector<std::string>* skipped = nullptr);

/// Fold 0 of five over `pool`: the minority-balanced fit part and the
/// untouched validation part. Shared by ablate and the command line.
struct holdout {
    std::vector<data::volume_sample> fit;
    std::vector<data::volume_sample> val;
};
holdout holdout_fold(const std::vector<data::volume_sample>& pool, std::uint64_t seed);

struct cv_result {
    std::vector<eval_report> folds;
    real mean_accuracy = 0.0;
    real mean_sensitivity = 0.0;
    real mean_specificity = 0.0;
};

/// k folds of `pool` (un-augmented samples); each fold trains on the
/// minority-balanced fit part and is scored on its validation part.
cv_result cross_validate(const std::vector<data::volume_sample>& pool, std::size_t k, const experiment_config& cfg,
                         arm a = arm::collaborative);

struct ablation_row {
    arm which = arm::collaborative;
    eval_report val;
    eval_report test;
    std::uint64_t cnn_hash = 0; ///< parameter digests after training
    std::uint64_t gnn_hash = 0;
    std::size_t best_epoch = 0;
};

/// Trains the CNN-only, GNN-only and collaborative arms on the same
/// fit/validation fold of `train_pool` with the same seed, and scores each on
/// the validation fold and on `test`.
std::vector<ablation_row> ablate(const std::vector<data::volume_sample>& train_pool,
                                 const std::vector<data::volume_sample>& test, const experiment_config& cfg);

nlohmann::json to_json(const std::vector<ablation_row>& table);

} // namespace colearn::collab

#endif // COLEARN_COLLAB_COLLAB_HPP
