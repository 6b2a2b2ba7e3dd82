#pragma once

#include "p2dnet/drive_cycle.hpp"
#include "p2dnet/params.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace p2dnet {

/// x-cells per electrode and r-shells per particle; also the surrogate's
/// image resolution.
inline constexpr int kGrid = 20;
inline constexpr int kGridCells = kGrid * kGrid;
inline constexpr int kSeparatorCells = 20;
inline constexpr int kElectrolyteCells = 2 * kGrid + kSeparatorCells;

/// Scaled solid concentration image, x-major (index = x * kGrid + r).
using Grid = std::array<double, kGridCells>;

struct CellState {
    Grid c_n{};  ///< negative particle stoichiometry, shell 0 at the centre
    Grid c_p{};
    std::array<double, kElectrolyteCells> c_e{};    ///< mol/m^3
    std::array<double, kElectrolyteCells> phi_e{};  ///< V
    std::array<double, kGrid> phi_s_n{}, phi_s_p{};  ///< V
    /// Interfacial current density per electrode cell (A/m^2, positive for
    /// de-intercalation). Kept as the Newton warm start.
    std::array<double, kGrid> j_n{}, j_p{};
    double V = 0.0;  ///< terminal voltage
    double t = 0.0;  ///< simulation time (s)
    double I = 0.0;  ///< applied C-rate at time t

    bool operator==(const CellState&) const = default;
};

/// The terminal voltage reached V_cut inside a step.
struct FailureEvent {
    double time = 0.0;
    CellState state;  ///< state at `time`, V == V_cut
};

using StepResult = std::variant<CellState, FailureEvent>;

struct SimOutcome {
    std::vector<CellState> trajectory;  ///< t = 0, 100, 200, ... (+ terminal state)
    bool failed = false;
    std::optional<double> failure_time;
    std::optional<int> failure_window;  ///< k with failure_time in (100k, 100(k+1)]
};

struct SimOptions {
    double dt = 1.0;               ///< internal sub-step (s)
    double min_dt = 1.0 / 16.0;    ///< smallest retry step after Newton failure
    double newton_tol = 1e-10;     ///< max scaled residual
    int max_newton_iterations = 30;
    double physical_tol = 1e-9;    ///< allowed excursion of stoichiometries outside [0, 1]
};

/// Finite-volume Doyle-Fuller-Newman cell model, advanced by backward Euler.
///
/// Each step solves the coupled system for particle concentrations,
/// electrolyte concentration and potential, solid potentials and
/// Butler-Volmer interfacial currents with Newton's method on the full
/// analytic Jacobian. A Simulator owns solver workspaces and must not be
/// shared between threads; construct one per concurrent run.
class Simulator {
public:
    explicit Simulator(ParameterSet params, SimOptions options = {});
    ~Simulator();
    Simulator(Simulator&&) noexcept;
    Simulator& operator=(Simulator&&) noexcept;

    const ParameterSet& params() const noexcept { return params_; }
    const SimOptions& options() const noexcept { return options_; }

    CellState init_full_charge() const;

    /// Advance by `dt` seconds with the current ramping linearly from
    /// `I_start` to `I_end` (C-rates). Retries with halved steps down to
    /// `min_dt` when Newton fails.
    StepResult step(const CellState& state, double I_start, double I_end, double dt);

    SimOutcome simulate(const DriveCycle& cycle);

    /// Total cyclable lithium (mol per m^2 of plate): solids plus electrolyte.
    double lithium_inventory(const CellState& state) const;
    /// Lithium held in the negative particles, in A h.
    double negative_solid_charge(const CellState& state) const;
    /// U_p - U_n at the electrode-averaged stoichiometries.
    double ocv_at_mean_stoichiometry(const CellState& state) const;

private:
    struct Workspace;

    CellState solve_step(const CellState& state, double current_density, double dt);
    StepResult step_adaptive(const CellState& state, double I_start, double I_end, double dt);

    ParameterSet params_;
    SimOptions options_;
    std::unique_ptr<Workspace> ws_;
};

CellState init_full_charge(const ParameterSet& params);
StepResult step(const CellState& state, double I_start, double I_end, double dt, const ParameterSet& params);
SimOutcome simulate_cycle(const ParameterSet& params, const DriveCycle& cycle, SimOptions options = {});

/// Largest constant C-rate a fully charged cell sustains for `duration`
/// seconds without reaching V_cut (bisection to `tolerance`).
double max_sustained_crate(const ParameterSet& params, double duration, double tolerance = 0.01);

/// One row per recorded state: t, V, then c_n (400, x-major) and c_p (400).
void write_outcome_csv(const SimOutcome& outcome, const std::filesystem::path& path);

} // namespace p2dnet
