#pragma once

#include "p2dnet/random.hpp"
#include "p2dnet/tensor.hpp"

#include <random>

namespace testing {

// values uniform on [lo, hi)
inline p2dnet::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
    p2dnet::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = lo + (hi - lo) * p2dnet::unit_uniform(g);
    return t;
}

inline double uniform(std::mt19937_64& g, double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * p2dnet::unit_uniform(g);
}

} // namespace testing
