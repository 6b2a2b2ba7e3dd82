#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace p2dnet {

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
template <class Engine>
double unit_uniform(Engine& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates with unit_uniform, so the permutation is the same on every
/// standard library (std::shuffle is implementation defined).
template <class T, class Engine>
void shuffle_in_place(std::vector<T>& v, Engine& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(unit_uniform(g) * static_cast<double>(i));
        if (j >= i) j = i - 1;
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace p2dnet
