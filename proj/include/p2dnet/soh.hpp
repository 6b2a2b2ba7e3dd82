#pragma once

#include "p2dnet/rollout.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace p2dnet {

/// Terminal voltages at 100, 200, ... s of an (aged) cell and the window in
/// which it reached V_cut, if it did.
struct Measurement {
    std::vector<double> V;
    std::optional<int> failure_window;

    bool operator==(const Measurement&) const = default;
};

/// The cycle with every current divided by gamma.
DriveCycle scale_cycle(const DriveCycle& cycle, double gamma);

/// An aged cell (health gamma) behaves like a new one driven at I / gamma.
Measurement simulate_aged(const ParameterSet& params, const DriveCycle& cycle, double gamma);

/// Windows scored by the objective: those before the measured failure
/// window, or every measured window when the cell never failed.
int scored_windows(const Measurement& m);

/// 0.5 when the surrogate's failure window (threshold 0.5) differs from the
/// measured one, else the mean |V_pred - V_measured| over scored_windows.
double soh_objective(const Predictor& model, const DriveCycle& cycle, const CellState& init, const Measurement& measured,
                     double gamma_candidate);

struct SohOptions {
    int n_cycles = 5;
    double grid_lo = 0.75;
    double grid_hi = 1.1;
    double grid_step = 0.005;
    int windows = 40;
    double trim = 0.2;
    int workers = 1;
};

std::vector<double> gamma_grid(const SohOptions& opt = {});

/// Mean after dropping floor(fraction * n) values from each tail.
double trimmed_mean(std::vector<double> values, double fraction = 0.2);

struct SohCycle {
    std::uint64_t seed = 0;
    std::optional<double> estimate;  ///< empty when every candidate scored 0.5
    std::vector<double> objective;   ///< f over gamma_grid()
    Measurement measured;
};

struct SohEstimate {
    double gamma_true = 0.0;
    std::vector<SohCycle> cycles;
    std::vector<double> per_cycle_estimates;  ///< valid estimates, cycle order
    double final_estimate = 0.0;
    std::size_t clamped_currents = 0;
};

/// Grid search on each cycle against the given measurements.
SohEstimate estimate_gamma_from(const Predictor& model, const CellState& init, const std::vector<DriveCycle>& cycles,
                                const std::vector<Measurement>& measured, double gamma_true, const SohOptions& opt = {});

/// Draws opt.n_cycles random cycles (seeds base_seed + i), measures them on
/// the simulator at gamma_true and estimates gamma.
SohEstimate estimate_gamma(const Predictor& model, const ParameterSet& params, double gamma_true,
                           std::uint64_t base_seed, const SohOptions& opt = {});

nlohmann::json to_json(const SohEstimate& e, const SohOptions& opt = {});

} // namespace p2dnet
