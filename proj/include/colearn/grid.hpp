#ifndef COLEARN_GRID_HPP
#define COLEARN_GRID_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace colearn {

/// Extents of a z-major (z, y, x) voxel grid.
struct dims3 {
    std::size_t d = 0, h = 0, w = 0;

    std::size_t count() const { return d * h * w; }
    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
    bool operator==(const dims3&) const = default;
};

template <class T>
struct grid3 {
    dims3 dims;
    std::vector<T> values;

    grid3() = default;
    explicit grid3(dims3 d, T fill = T{}) : dims(d), values(d.count(), fill) {}

    T& at(std::size_t z, std::size_t y, std::size_t x) { return values[dims.index(z, y, x)]; }
    const T& at(std::size_t z, std::size_t y, std::size_t x) const { return values[dims.index(z, y, x)]; }

    /// Zero outside the grid, for stencil code that walks one cell past the border.
    T get_or_zero(long z, long y, long x) const {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<long>(dims.d) || y >= static_cast<long>(dims.h) ||
            x >= static_cast<long>(dims.w))
            return T{};
        return values[dims.index(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x))];
    }

    bool operator==(const grid3&) const = default;
};

using binary_grid = grid3<std::uint8_t>;
using float_grid = grid3<float>;

inline std::size_t foreground_count(const binary_grid& g) {
    std::size_t n = 0;
    for (auto v : g.values) n += v != 0;
    return n;
}

/// Number of 6-connected foreground components.
std::size_t component_count(const binary_grid& g);

} // namespace colearn

#endif // COLEARN_GRID_HPP
