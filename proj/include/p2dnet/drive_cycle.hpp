#pragma once

#include <cstdint>
#include <vector>

namespace p2dnet {

inline constexpr double kWindowSeconds = 100.0;

/// Demanded discharge current as C-rate breakpoints, one per 100-s boundary.
/// The current between two breakpoints is their linear interpolant.
struct DriveCycle {
    std::vector<double> currents;
    std::uint64_t seed = 0;

    int windows() const { return currents.empty() ? 0 : static_cast<int>(currents.size()) - 1; }
    double duration() const { return windows() * kWindowSeconds; }
    /// C-rate at time t (s), clamped to the cycle's span.
    double current_at(double t) const;

    bool operator==(const DriveCycle&) const = default;
};

} // namespace p2dnet
