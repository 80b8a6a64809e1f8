#include "colearn/grid.hpp"

#include <array>

namespace colearn {

std::size_t component_count(const binary_grid& g) {
    std::vector<std::uint8_t> seen(g.values.size(), 0);
    std::vector<std::size_t> stack;
    std::size_t components = 0;
    const auto& d = g.dims;
    for (std::size_t start = 0; start < g.values.size(); ++start) {
        if (!g.values[start] || seen[start]) continue;
        ++components;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const std::size_t x = cur % d.w, y = (cur / d.w) % d.h, z = cur / (d.w * d.h);
            const std::array<std::array<long, 3>, 6> steps{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
            for (const auto& s : steps) {
                const long nz = static_cast<long>(z) + s[0], ny = static_cast<long>(y) + s[1], nx = static_cast<long>(x) + s[2];
                if (nz < 0 || ny < 0 || nx < 0 || nz >= static_cast<long>(d.d) || ny >= static_cast<long>(d.h) ||
                    nx >= static_cast<long>(d.w))
                    continue;
                const std::size_t ni = d.index(static_cast<std::size_t>(nz), static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
                if (g.values[ni] && !seen[ni]) {
                    seen[ni] = 1;
                    stack.push_back(ni);
                }
            }
        }
    }
    return components;
}

} // namespace colearn
