#include <algorithm>

#include "colearn/data/volume.hpp"

namespace colearn::data {

namespace {

std::array<cube_rotation, 24> enumerate_rotations() {
    std::array<cube_rotation, 24> out{};
    std::size_t n = 0;
    std::array<int, 3> perm{0, 1, 2};
    do {
        // Parity of the permutation: count inversions.
        int parity = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j) parity += perm[static_cast<std::size_t>(i)] > perm[static_cast<std::size_t>(j)];
        for (int mask = 0; mask < 8; ++mask) {
            const int flips = __builtin_popcount(static_cast<unsigned>(mask));
            if ((parity + flips) % 2 != 0) continue; // reflection
            cube_rotation r;
            r.perm = perm;
            for (std::size_t a = 0; a < 3; ++a) r.flip[a] = (mask >> a) & 1;
            out[n++] = r;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

} // namespace

const std::array<cube_rotation, 24>& cube_rotations() {
    static const auto table = enumerate_rotations();
    return table;
}

std::size_t inverse_rotation(std::size_t index) {
    const auto& table = cube_rotations();
    if (index >= table.size()) throw std::out_of_range("inverse_rotation: index must be < 24");
    const auto& r = table[index];
    cube_rotation inv;
    for (std::size_t a = 0; a < 3; ++a) {
        const auto src = static_cast<std::size_t>(r.perm[a]);
        inv.perm[src] = static_cast<int>(a);
        inv.flip[src] = r.flip[a];
    }
    return static_cast<std::size_t>(std::find(table.begin(), table.end(), inv) - table.begin());
}

template <class T>
grid3<T> rotate_grid(const grid3<T>& g, const cube_rotation& r) {
    const std::array<std::size_t, 3> in_ext{g.dims.d, g.dims.h, g.dims.w};
    std::array<std::size_t, 3> out_ext{};
    for (std::size_t a = 0; a < 3; ++a) out_ext[a] = in_ext[static_cast<std::size_t>(r.perm[a])];
    grid3<T> out(dims3{out_ext[0], out_ext[1], out_ext[2]});
    std::array<std::size_t, 3> o{}, i{};
    for (o[0] = 0; o[0] < out_ext[0]; ++o[0])
        for (o[1] = 0; o[1] < out_ext[1]; ++o[1])
            for (o[2] = 0; o[2] < out_ext[2]; ++o[2]) {
                for (std::size_t a = 0; a < 3; ++a) i[static_cast<std::size_t>(r.perm[a])] = r.flip[a] ? out_ext[a] - 1 - o[a] : o[a];
                out.at(o[0], o[1], o[2]) = g.at(i[0], i[1], i[2]);
            }
    return out;
}

template grid3<std::uint8_t> rotate_grid(const grid3<std::uint8_t>&, const cube_rotation&);
template grid3<float> rotate_grid(const grid3<float>&, const cube_rotation&);
template grid3<double> rotate_grid(const grid3<double>&, const cube_rotation&);

volume_sample augment_rotate(const volume_sample& sample, std::size_t rotation_index) {
    if (rotation_index >= 24) throw std::out_of_range("augment_rotate: rotation index must be < 24");
    const auto& r = cube_rotations()[rotation_index];
    volume_sample out;
    out.id = sample.id;
    out.label = sample.label;
    out.augmented = sample.augmented;
    for (std::size_t c = 0; c < channel_count; ++c) out.channels[c] = rotate_grid(sample.channels[c], r);
    out.mask = rotate_grid(sample.mask, r);
    return out;
}

std::vector<volume_sample> balance_minority(const std::vector<volume_sample>& train) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].label != 0 && train[i].label != 1) throw std::invalid_argument("balance_minority: labels must be 0 or 1");
        by_class[static_cast<std::size_t>(train[i].label)].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty()) throw std::invalid_argument("balance_minority: both classes must be present");
    std::vector<volume_sample> out = train;
    const auto& minority = by_class[0].size() < by_class[1].size() ? by_class[0] : by_class[1];
    const std::size_t majority = std::max(by_class[0].size(), by_class[1].size());
    const std::size_t copies = majority - minority.size();
    // Round-robin over the minority: the k-th copy of a sample uses rotation k.
    for (std::size_t c = 0; c < copies; ++c) {
        const std::size_t k = c / minority.size() + 1;
        const auto& src = train[minority[c % minority.size()]];
        volume_sample copy = augment_rotate(src, 1 + (k - 1) % 23);
        copy.id = src.id + "_r" + std::to_string(k);
        copy.augmented = true;
        out.push_back(std::move(copy));
    }
    return out;
}

} // namespace colearn::data
