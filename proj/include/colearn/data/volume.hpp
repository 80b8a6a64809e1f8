#ifndef COLEARN_DATA_VOLUME_HPP
#define COLEARN_DATA_VOLUME_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "colearn/grid.hpp"

namespace colearn::data {

inline constexpr std::size_t channel_count = 4;

/// Four co-registered intensity channels (pre-contrast T1, post-contrast T1,
/// T2, FLAIR analogues), the object mask and the binary class label.
struct volume_sample {
    std::string id;
    std::array<float_grid, channel_count> channels;
    binary_grid mask;
    int label = 0;          ///< 1 = minority ("mutant") class
    bool augmented = false; ///< produced by rotation; never use for validation or testing

    const dims3& dims() const { return mask.dims; }
    bool operator==(const volume_sample&) const = default;
};

/// Checks the structural invariants: shared dims, non-empty single-component
/// mask, finite intensities, label in {0, 1}. Throws std::invalid_argument.
void validate(const volume_sample& s);

struct cohort_spec {
    std::size_t n_samples = 100;
    dims3 dims{16, 16, 16};
    double class_ratio = 0.3;      ///< fraction of label-1 samples
    double geometry_signal = 0.5;  ///< boundary irregularity gap between classes, [0, 1]
    double intensity_signal = 0.5; ///< bright-core gap between classes, [0, 1]
    std::uint64_t seed = 1;
};

/// Throws std::invalid_argument when a field is out of range.
void validate(const cohort_spec& spec);

/// Synthesizes one labelled object: a randomized superellipsoid whose boundary
/// is sinusoidally perturbed (stronger for label 1 as geometry_signal grows)
/// with a core brightened in the post-contrast channel (stronger for label 1
/// as intensity_signal grows), over Gaussian background noise.
volume_sample generate_sample(const cohort_spec& spec, int label, std::mt19937_64& rng);

/// Whole cohort: labels are assigned so that round(class_ratio * n) samples
/// are label 1, then shuffled; ids are "s0000", "s0001", ...
std::vector<volume_sample> generate_cohort(const cohort_spec& spec);

// ---------------------------------------------------------------- file I/O

class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// Header is unreadable or violates the schema.
class format_error : public data_error {
public:
    using data_error::data_error;
};
/// Well-formed file whose mask is empty or not one connected component.
class mask_error : public format_error {
public:
    using format_error::format_error;
};
/// Payload shorter than the header promises.
class truncated_error : public data_error {
public:
    using data_error::data_error;
};
/// Payload longer than the header promises.
class size_mismatch_error : public data_error {
public:
    using data_error::data_error;
};

/// Writes `<dir>/<id>.json` and `<dir>/<id>.bin` (channel-major little-endian
/// f32, then one byte per mask voxel).
void save_volume(const volume_sample& sample, const std::filesystem::path& dir);
volume_sample load_volume(const std::filesystem::path& dir, const std::string& id);

/// Single-channel variant without mask, used for attribution maps.
void save_scalar_volume(const std::string& id, const float_grid& values, const std::filesystem::path& dir);
float_grid load_scalar_volume(const std::filesystem::path& dir, const std::string& id);

struct manifest_entry {
    std::string id;
    int label = 0;
    bool operator==(const manifest_entry&) const = default;
};

void save_manifest(const std::vector<manifest_entry>& entries, const std::filesystem::path& file);
std::vector<manifest_entry> load_manifest(const std::filesystem::path& file);

// ------------------------------------------------------ splits and folds

struct split_result {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// 4:1 train/test split of positions 0..labels.size()-1. With `stratify`,
/// each class contributes round(n_c / 5) test items.
split_result split_dataset(const std::vector<int>& labels, bool stratify, std::uint64_t seed);

struct fold {
    std::vector<std::size_t> fit;
    std::vector<std::size_t> val;
};

/// k folds over `items`, each holding out round(n / 5) of them (fewer when
/// k windows of that size would not fit). For k <= 5 the validation sets are
/// disjoint; larger k spreads overlapping windows evenly.
std::vector<fold> cv_folds(const std::vector<std::size_t>& items, std::size_t k, std::uint64_t seed);

// ------------------------------------------------------------ rotations

/// Proper axis-aligned rotation of a (z, y, x) grid: output axis a reads
/// input axis perm[a], mirrored when flip[a].
struct cube_rotation {
    std::array<int, 3> perm{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};
    bool operator==(const cube_rotation&) const = default;
};

/// The 24 rotations of the cube; index 0 is the identity.
const std::array<cube_rotation, 24>& cube_rotations();
std::size_t inverse_rotation(std::size_t index);

template <class T>
grid3<T> rotate_grid(const grid3<T>& g, const cube_rotation& r);

volume_sample augment_rotate(const volume_sample& sample, std::size_t rotation_index);

/// Replicates the minority class with successive non-identity rotations until
/// both classes have (nearly) the same count. Copies get id suffix "_r<k>"
/// and `augmented = true`.
std::vector<volume_sample> balance_minority(const std::vector<volume_sample>& train);

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice_score(const binary_grid& a, const binary_grid& b);

} // namespace colearn::data

#endif // COLEARN_DATA_VOLUME_HPP
