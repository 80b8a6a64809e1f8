#include <algorithm>
#include <cmath>
#include <numeric>

#include "colearn/data/volume.hpp"

namespace colearn::data {

namespace {

std::size_t fifth(std::size_t n) { return static_cast<std::size_t>(std::lround(static_cast<double>(n) / 5.0)); }

} // namespace

split_result split_dataset(const std::vector<int>& labels, bool stratify, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    split_result out;
    auto take = [&](std::vector<std::size_t> pool) {
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::size_t n_test = fifth(pool.size());
        out.test.insert(out.test.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
        out.train.insert(out.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_test), pool.end());
    };
    if (stratify) {
        std::array<std::vector<std::size_t>, 2> by_class;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("split_dataset: labels must be 0 or 1");
            by_class[static_cast<std::size_t>(labels[i])].push_back(i);
        }
        for (const auto& c : by_class) {
            if (c.size() < 5) throw std::invalid_argument("split_dataset: stratified split needs >= 5 samples per class");
        }
        for (const auto& c : by_class) take(c);
    } else {
        if (labels.size() < 5) throw std::invalid_argument("split_dataset: need >= 5 samples");
        std::vector<std::size_t> all(labels.size());
        std::iota(all.begin(), all.end(), 0);
        take(all);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<fold> cv_folds(const std::vector<std::size_t>& items, std::size_t k, std::uint64_t seed) {
    const std::size_t n = items.size();
    if (k < 2) throw std::invalid_argument("cv_folds: k must be >= 2");
    if (k > n) throw std::invalid_argument("cv_folds: k exceeds the number of items");
    std::vector<std::size_t> order = items;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // Each validation window is a fifth of the items. For k <= 5 the windows
    // are laid end to end; for larger k they are spread evenly and overlap.
    std::size_t width = std::max<std::size_t>(1, fifth(n));
    if (k <= 5) width = std::min(width, n / k);
    std::vector<fold> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t start = k <= 5 ? f * width : (f * n) / k;
        std::vector<bool> in_val(n, false);
        for (std::size_t j = 0; j < width; ++j) in_val[(start + j) % n] = true;
        for (std::size_t i = 0; i < n; ++i) (in_val[i] ? folds[f].val : folds[f].fit).push_back(order[i]);
        std::sort(folds[f].fit.begin(), folds[f].fit.end());
        std::sort(folds[f].val.begin(), folds[f].val.end());
    }
    return folds;
}

double dice_score(const binary_grid& a, const binary_grid& b) {
    if (!(a.dims == b.dims) || a.values.size() != b.values.size()) throw std::invalid_argument("dice_score: dims differ");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool x = a.values[i] != 0, y = b.values[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

} // namespace colearn::data
