#include "p2dnet/errors.hpp"
#include "p2dnet/soh.hpp"

#include <doctest.h>

#include <cmath>

using namespace p2dnet;

namespace {

DriveCycle constant(double crate, int windows) {
    DriveCycle c;
    c.currents.assign(static_cast<std::size_t>(windows) + 1, crate);
    return c;
}

const SurrogateWeights& weights() {
    // the failure head is pushed far negative: a surrogate that flags window 0
    // scores every candidate 0 and leaves nothing to recover
    static const SurrogateWeights w = [] {
        auto x = init_weights(Architecture{}, normalization_for(default_parameters()), 77);
        x.fail3_b.values()[0] = -10.0;
        return x;
    }();
    return w;
}

// what the surrogate itself would "measure" at gamma
Measurement surrogate_measurement(const Predictor& model, const DriveCycle& c, const CellState& init, double gamma) {
    RolloutOptions ro;
    const auto r = rollout(model, scale_cycle(c, gamma), init, ro);
    return {r.V, r.failure_window};
}

} // namespace

TEST_CASE("trimmed mean") {
    CHECK(trimmed_mean({0.1, 0.2, 0.3, 0.4, 10.0}) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(trimmed_mean({0.9, 0.8, 0.85}) == doctest::Approx(0.85));  // floor(0.6) = 0 dropped
    CHECK(trimmed_mean({1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 100.0}) == doctest::Approx(5.5));
    const std::vector<double> v = {0.81, 0.79, 0.84, 0.8, 0.83};
    const double m = trimmed_mean(v);
    CHECK(m >= 0.79);
    CHECK(m <= 0.84);
    CHECK_THROWS_AS(trimmed_mean({}), EstimationError);
}

TEST_CASE("gamma grid") {
    const auto g = gamma_grid();
    REQUIRE(g.size() == 71);
    CHECK(g.front() == 0.75);
    CHECK(g.back() == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(g[30] == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("aged cells through current scaling") {
    const auto p = default_parameters();
    const auto c = random_cycle(21, 12);
    const auto s = scale_cycle(c, 0.8);
    for (std::size_t i = 0; i < c.currents.size(); ++i) CHECK(s.currents[i] == c.currents[i] / 0.8);
    CHECK_THROWS(simulate_aged(p, c, 1.2));
    CHECK_THROWS(simulate_aged(p, c, 0.0));

    const auto fresh = simulate_cycle(p, c);
    const auto same = simulate_aged(p, c, 1.0);
    REQUIRE(same.V.size() + 1 == fresh.trajectory.size());
    for (std::size_t k = 0; k < same.V.size(); ++k) CHECK(same.V[k] == fresh.trajectory[k + 1].V);
    CHECK(same.failure_window == fresh.failure_window);

    // an aged cell at 4C behaves like a new one at 5C and cannot last longer
    const auto aged = simulate_aged(p, constant(4.0, 15), 0.8);
    const auto new4 = simulate_aged(p, constant(4.0, 15), 1.0);
    REQUIRE(aged.failure_window.has_value());
    CHECK(*aged.failure_window <= new4.failure_window.value_or(1000));

    const auto g9 = simulate_aged(p, c, 0.9);
    for (std::size_t k = 0; k < std::min(g9.V.size(), same.V.size()); ++k) CHECK(g9.V[k] <= same.V[k] + 1e-12);
}

TEST_CASE("scored windows") {
    CHECK(scored_windows({{4.0, 3.9, 3.8}, std::nullopt}) == 3);
    CHECK(scored_windows({{4.0, 3.9, 3.4}, 2}) == 2);
}

TEST_CASE("objective branches") {
    SurrogatePredictor model(weights());
    const auto init = init_full_charge(default_parameters());
    const auto c = random_cycle(5, 10);
    const auto m = surrogate_measurement(model, c, init, 0.9);
    CHECK(soh_objective(model, c, init, m, 0.9) == 0.0);

    Measurement shifted = m;
    for (auto& v : shifted.V) v += 0.02;
    if (scored_windows(m) > 0) CHECK(soh_objective(model, c, init, shifted, 0.9) == doctest::Approx(0.02).epsilon(1e-9));

    Measurement wrong = m;
    wrong.failure_window = 1000;
    CHECK(soh_objective(model, c, init, wrong, 0.9) == 0.5);
    for (double g : gamma_grid()) {
        const double f = soh_objective(model, c, init, m, g);
        CHECK(f >= 0.0);
        CHECK((f == 0.5 || f < 0.5));
    }
}

TEST_CASE("self-consistent measurements recover the on-grid gamma") {
    SurrogatePredictor model(weights());
    const auto init = init_full_charge(default_parameters());
    for (double gamma : {0.8, 0.9, 1.05}) {
        std::vector<DriveCycle> cycles;
        std::vector<Measurement> meas;
        for (std::uint64_t s = 0; s < 5; ++s) {
            cycles.push_back(random_cycle(300 + s, 12));
            meas.push_back(surrogate_measurement(model, cycles.back(), init, gamma));
        }
        SohOptions opt;
        const auto est = estimate_gamma_from(model, init, cycles, meas, gamma, opt);
        REQUIRE(est.per_cycle_estimates.size() == 5);
        for (double e : est.per_cycle_estimates) CHECK(e == doctest::Approx(gamma).epsilon(1e-12));
        CHECK(est.final_estimate == doctest::Approx(gamma).epsilon(1e-12));
        for (const auto& c : est.cycles) CHECK(c.objective.size() == 71);

        opt.workers = 3;
        const auto again = estimate_gamma_from(model, init, cycles, meas, gamma, opt);
        CHECK(again.final_estimate == est.final_estimate);
        CHECK(again.cycles[2].objective == est.cycles[2].objective);
    }
}

TEST_CASE("too few valid cycles is an estimation error") {
    SurrogatePredictor model(weights());
    const auto init = init_full_charge(default_parameters());
    std::vector<DriveCycle> cycles;
    std::vector<Measurement> meas;
    for (std::uint64_t s = 0; s < 5; ++s) {
        cycles.push_back(random_cycle(400 + s, 8));
        meas.push_back(surrogate_measurement(model, cycles.back(), init, 0.9));
        if (s >= 2) meas.back().failure_window = 1000;  // no candidate can match
    }
    CHECK_THROWS_AS(estimate_gamma_from(model, init, cycles, meas, 0.9), EstimationError);
    CHECK_THROWS_AS(estimate_gamma(model, default_parameters(), 0.6, 1), EstimationError);
}
