#include "p2dnet/soh.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace p2dnet {

using nlohmann::json;

DriveCycle scale_cycle(const DriveCycle& cycle, double gamma) {
    if (!(gamma > 0.0)) throw Error("gamma must be positive");
    DriveCycle c = cycle;
    for (auto& v : c.currents) v /= gamma;
    return c;
}

Measurement simulate_aged(const ParameterSet& params, const DriveCycle& cycle, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.1)) throw Error("gamma must lie in (0, 1.1]");
    const SimOutcome out = simulate_cycle(params, gamma == 1.0 ? cycle : scale_cycle(cycle, gamma));
    Measurement m;
    for (std::size_t k = 1; k < out.trajectory.size(); ++k) m.V.push_back(out.trajectory[k].V);
    m.failure_window = out.failure_window;
    return m;
}

int scored_windows(const Measurement& m) {
    return m.failure_window ? *m.failure_window : static_cast<int>(m.V.size());
}

double soh_objective(const Predictor& model, const DriveCycle& cycle, const CellState& init, const Measurement& measured,
                     double gamma_candidate) {
    RolloutOptions ro;
    ro.fail_threshold = 0.5;
    ro.stop_on_failure = true;
    ro.max_windows = static_cast<int>(measured.V.size());
    const Rollout r = rollout(model, scale_cycle(cycle, gamma_candidate), init, ro);
    if (r.failure_window != measured.failure_window) return 0.5;
    const int K = scored_windows(measured);
    if (K == 0) return 0.0;
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::abs(r.V[static_cast<std::size_t>(k)] - measured.V[static_cast<std::size_t>(k)]);
    return s / K;
}

std::vector<double> gamma_grid(const SohOptions& opt) {
    if (!(opt.grid_step > 0.0) || !(opt.grid_hi >= opt.grid_lo)) throw Error("invalid gamma grid");
    const int n = static_cast<int>(std::floor((opt.grid_hi - opt.grid_lo) / opt.grid_step + 1e-9)) + 1;
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = opt.grid_lo + i * opt.grid_step;
    return g;
}

double trimmed_mean(std::vector<double> v, double fraction) {
    if (v.empty()) throw EstimationError("trimmed mean of no values");
    std::sort(v.begin(), v.end());
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(v.size()) + 1e-9));
    if (2 * k >= v.size()) throw EstimationError("trim removes every value");
    double s = 0.0;
    for (std::size_t i = k; i < v.size() - k; ++i) s += v[i];
    return s / static_cast<double>(v.size() - 2 * k);
}

SohEstimate estimate_gamma_from(const Predictor& model, const CellState& init, const std::vector<DriveCycle>& cycles,
                                const std::vector<Measurement>& measured, double gamma_true, const SohOptions& opt) {
    if (cycles.size() != measured.size()) throw Error("one measurement per cycle is required");
    const auto grid = gamma_grid(opt);
    SohEstimate est;
    est.gamma_true = gamma_true;
    for (std::size_t c = 0; c < cycles.size(); ++c) {
        SohCycle sc;
        sc.seed = cycles[c].seed;
        sc.measured = measured[c];
        sc.objective.assign(grid.size(), 0.5);
        parallel_for(grid.size(), opt.workers,
                     [&](std::size_t i) { sc.objective[i] = soh_objective(model, cycles[c], init, measured[c], grid[i]); });
        std::size_t best = 0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            if (sc.objective[i] < sc.objective[best]) best = i;
        if (sc.objective[best] < 0.5) {
            sc.estimate = grid[best];
            est.per_cycle_estimates.push_back(grid[best]);
        }
        est.cycles.push_back(std::move(sc));
    }
    if (est.per_cycle_estimates.size() < 3)
        throw EstimationError("only " + std::to_string(est.per_cycle_estimates.size()) +
                              " cycles gave a valid estimate, at least 3 are needed");
    est.final_estimate = trimmed_mean(est.per_cycle_estimates, opt.trim);
    return est;
}

SohEstimate estimate_gamma(const Predictor& model, const ParameterSet& params, double gamma_true,
                           std::uint64_t base_seed, const SohOptions& opt) {
    if (!(gamma_true >= opt.grid_lo - 1e-12 && gamma_true <= opt.grid_hi + 1e-12))
        throw EstimationError("gamma_true must lie in the search interval");
    std::vector<DriveCycle> cycles;
    for (int i = 0; i < opt.n_cycles; ++i) cycles.push_back(random_cycle(base_seed + static_cast<std::uint64_t>(i), opt.windows));
    std::vector<Measurement> measured(cycles.size());
    parallel_for(cycles.size(), opt.workers,
                 [&](std::size_t i) { measured[i] = simulate_aged(params, cycles[i], gamma_true); });
    auto est = estimate_gamma_from(model, init_full_charge(params), cycles, measured, gamma_true, opt);
    // how often the scaled currents left the trained range at the chosen gamma
    const CellState init = init_full_charge(params);
    for (std::size_t c = 0; c < cycles.size(); ++c) {
        if (!est.cycles[c].estimate) continue;
        RolloutOptions ro;
        ro.max_windows = static_cast<int>(measured[c].V.size());
        est.clamped_currents += rollout(model, scale_cycle(cycles[c], *est.cycles[c].estimate), init, ro).clamped_currents;
    }
    return est;
}

json to_json(const SohEstimate& e, const SohOptions& opt) {
    json cycles = json::array();
    for (const auto& c : e.cycles) {
        json j = {{"seed", c.seed},
                  {"estimate", c.estimate ? json(*c.estimate) : json(nullptr)},
                  {"measured_failure_window", c.measured.failure_window ? json(*c.measured.failure_window) : json(nullptr)},
                  {"measured_windows", c.measured.V.size()},
                  {"objective", c.objective}};
        cycles.push_back(std::move(j));
    }
    return {{"gamma_true", e.gamma_true},
            {"per_cycle_estimates", e.per_cycle_estimates},
            {"final", e.final_estimate},
            {"grid", gamma_grid(opt)},
            {"clamped_currents", e.clamped_currents},
            {"cycles", cycles}};
}

} // namespace p2dnet
