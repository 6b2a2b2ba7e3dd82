// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
//
// The desk pipeline goes through the CLI (gen, train, eval, bench, soh) twice,
// once with 1 worker and once with 4, in a scratch directory. Expect about an
// hour on one core. Exit status is 0 once every criterion has been evaluated;
// with --strict it is 1 when any criterion fails.

#include "helpers.hpp"

#include "p2dnet/cycles.hpp"
#include "p2dnet/electrochem.hpp"
#include "p2dnet/nn.hpp"
#include "p2dnet/rollout.hpp"
#include "p2dnet/soh.hpp"
#include "p2dnet/surrogate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

using namespace p2dnet;
using nlohmann::json;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances ----
constexpr int kGradInstances = 50;
constexpr double kLayerTol = 1e-5, kComposedTol = 1e-4;
constexpr double kGradSeconds = 60;
constexpr double kConservation = 1e-6, kRelaxV = 1e-3, kDtHalving = 1e-4;
constexpr double kCalLo = 6.0, kCalHi = 8.0, kCalSeconds = 300;
constexpr double kOneStepV = 1e-2, kOneStepConc = 2e-2, kPipelineSeconds = 7200;
constexpr double kKStepV = 5e-2;
constexpr double kAblationRatio = 3.0;
constexpr double kFnPct = 1.0, kFpPct = 10.0, kFlagThreshold = 0.1;
constexpr double kSpeedup = 50.0;
constexpr double kSohDev = 0.03;
constexpr double kOracleMean = 1e-12;  // rounding slack for trimmed means of grid values
const std::vector<double> kSohGammas = {0.80, 0.85, 0.90, 0.95};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char b[64];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// ---------------------------------------------------------------------------
// 1. gradients

Outcome gradients() {
    const auto t0 = Clock::now();
    std::mt19937_64 g(2024);
    double layer_worst = 0.0, composed_worst = 0.0;
    int failures = 0;
    std::size_t checked = 0, within = 0;
    auto track = [&](const GradCheckReport& r, double& worst) {
        worst = std::max(worst, r.max_rel_error());
        failures += !r.passed;
        for (const auto& e : r.tensors) checked += e.checked, within += e.within_roundoff;
    };
    GradCheckOptions lo;
    lo.tolerance = kLayerTol;
    for (int n = 0; n < kGradInstances; ++n) {
        lo.seed = static_cast<std::uint64_t>(n);
        {
            Tensor x = random_tensor({3, 9}, g), w = random_tensor({7, 9}, g), b = random_tensor({7}, g);
            Tensor dy = random_tensor({3, 7}, g);
            auto gr = dense_backward(x, w, dy);
            track(grad_check([&] { return dot(dense(x, w, b), dy); },
                             {{"x", &x, &gr.dx}, {"w", &w, &gr.dweights}, {"b", &b, &gr.dbias}}, lo),
                  layer_worst);
        }
        for (Padding pad : {Padding::valid, Padding::same}) {
            Tensor x = random_tensor({2, 8, 8, 2}, g), k = random_tensor({3, 3, 2, 3}, g), b = random_tensor({3}, g);
            Tensor dy = random_tensor(conv2d(x, k, b, pad).shape(), g);
            auto gr = conv2d_backward(x, k, dy, pad);
            track(grad_check([&] { return dot(conv2d(x, k, b, pad), dy); },
                             {{"x", &x, &gr.dx}, {"k", &k, &gr.dkernels}, {"b", &b, &gr.dbias}}, lo),
                  layer_worst);
        }
        for (PoolMode mode : {PoolMode::floor, PoolMode::ceil}) {
            Tensor x = random_tensor({8, 8, 2}, g);
            auto p = maxpool3(x, mode);
            Tensor dy = random_tensor(p.out.shape(), g);
            Tensor dx = maxpool3_backward(p, dy);
            track(grad_check([&] { return dot(maxpool3(x, mode).out, dy); }, {{"x", &x, &dx}}, lo), layer_worst);
        }
        {
            Tensor x = random_tensor({30}, g), dy = random_tensor({30}, g);
            Tensor dr = relu_backward(x, dy), ds = sigmoid_backward(sigmoid(x), dy);
            track(grad_check([&] { return dot(relu(x), dy); }, {{"x", &x, &dr}}, lo), layer_worst);
            track(grad_check([&] { return dot(sigmoid(x), dy); }, {{"x", &x, &ds}}, lo), layer_worst);
        }
    }

    // composed network, reduced widths so every tensor is sampled
    Architecture a;
    a.c1 = 2, a.c2 = 3, a.c3 = 4, a.reg_hidden1 = 6, a.reg_hidden2 = 5, a.fail_hidden1 = 4, a.fail_hidden2 = 3;
    Normalization norm;
    norm.V_lo = 3.4, norm.V_hi = 4.2;
    for (int n = 0; n < kGradInstances; ++n) {
        auto w = init_weights(a, norm, 500 + static_cast<std::uint64_t>(n));
        for (auto* t : w.tensors())
            if (t->rank() == 1)
                for (auto& v : t->values()) v = testing::uniform(g, -0.1, 0.1);
        std::vector<Sample> ss(2);
        for (auto& s : ss) {
            for (auto* grid : {&s.c_n, &s.c_p, &s.c_n_next, &s.c_p_next})
                for (auto& v : *grid) v = static_cast<float>(testing::uniform(g));
            s.V_t = static_cast<float>(testing::uniform(g, 3.5, 4.1));
            s.V_t100 = static_cast<float>(testing::uniform(g, 3.5, 4.1));
            s.I_t = static_cast<float>(testing::uniform(g, 0, 6));
            s.I_t100 = static_cast<float>(testing::uniform(g, 0, 6));
            s.fail = testing::uniform(g) < 0.3 ? 1.0f : 0.0f;
        }
        std::vector<const Sample*> batch = {&ss[0], &ss[1]};
        const auto bg = loss_and_gradient(w, batch);
        std::vector<GradTarget> targets;
        auto ts = w.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i) targets.push_back({SurrogateWeights::tensor_names()[i], ts[i], &bg.grads[i]});
        std::uint64_t sig = 0;
        GradCheckOptions co;
        co.tolerance = kComposedTol;
        co.max_entries = 24;
        co.seed = static_cast<std::uint64_t>(n);
        co.signature = [&] { return sig; };
        track(grad_check(
                  [&] {
                      const auto r = loss_and_gradient(w, batch, {}, 1, false);
                      sig = r.signature;
                      return r.loss.total;
                  },
                  targets, co),
              composed_worst);
    }
    const double secs = since(t0);
    return {failures == 0 && secs < kGradSeconds,
            std::to_string(kGradInstances) + " instances; worst layer rel err " + fmt("%.2e", layer_worst) +
                ", composed " + fmt("%.2e", composed_worst) + "; " + std::to_string(checked) + " entries, " +
                std::to_string(within) + " agree to roundoff; " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 2. physics

Outcome physics() {
    const auto p = default_parameters();
    Simulator sim(p);
    double drift = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto out = sim.simulate(random_cycle(seed, 40));
        const double li0 = sim.lithium_inventory(out.trajectory.front());
        for (const auto& s : out.trajectory) drift = std::max(drift, std::abs(sim.lithium_inventory(s) / li0 - 1.0));
    }

    DriveCycle relax;
    relax.currents = {1.0, 1.0};
    for (int k = 0; k < 10; ++k) relax.currents.push_back(0.0);
    const auto r = sim.simulate(relax);
    const double dv = std::abs(r.trajectory.back().V - sim.ocv_at_mean_stoichiometry(r.trajectory.back()));

    // 1C reference discharge, 100-s samples both runs reach
    DriveCycle one_c;
    one_c.currents.assign(41, 1.0);
    SimOptions fine;
    fine.dt = 0.5;
    const auto a = simulate_cycle(p, one_c), b = simulate_cycle(p, one_c, fine);
    double dt_diff = 0.0;
    std::size_t compared = 0;
    for (std::size_t k = 0; k < std::min(a.trajectory.size(), b.trajectory.size()); ++k) {
        const double t = a.trajectory[k].t;
        if (std::abs(t - kWindowSeconds * static_cast<double>(k)) > 1e-9 || b.trajectory[k].t != t) continue;
        dt_diff = std::max(dt_diff, std::abs(a.trajectory[k].V - b.trajectory[k].V));
        ++compared;
    }
    return {drift < kConservation && dv < kRelaxV && dt_diff < kDtHalving,
            "Li drift " + fmt("%.1e", drift) + ", |V-OCV| after relaxation " + fmt("%.2e V", dv) + ", dt-halving " +
                fmt("%.1e V", dt_diff) + " over " + std::to_string(compared) + " samples"};
}

// ---------------------------------------------------------------------------
// 3. calibration

Outcome calibration() {
    const auto t0 = Clock::now();
    const double c = max_sustained_crate(default_parameters(), 100.0);
    const double secs = since(t0);
    return {c >= kCalLo && c <= kCalHi && secs < kCalSeconds, fmt("max sustained C-rate over 100 s: %.2f", c) + fmt(" (%.0f s)", secs)};
}

// ---------------------------------------------------------------------------
// desk pipeline through the CLI

struct Cli {
    fs::path exe, log;
    int operator()(const std::string& args) const {
        const std::string cmd = "\"" + exe.string() + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
        std::fprintf(stderr, "  $ p2dnet %s\n", args.c_str());
        const int rc = std::system(cmd.c_str());
#ifdef WEXITSTATUS
        return WEXITSTATUS(rc);
#else
        return rc;
#endif
    }
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

struct PipelineRun {
    fs::path dir;
    bool ok = true;
    std::string failed_step;
    double gen_train_eval_seconds = 0.0;
};

// gen + train + eval (+ soh) for one worker count
PipelineRun desk_pipeline(const Cli& cli, const fs::path& dir, int threads, int cycles) {
    PipelineRun r;
    r.dir = dir;
    const std::string th = "--threads " + std::to_string(threads) + " ";
    auto step = [&](const std::string& name, const std::string& args, std::set<int> ok_codes = {0}) {
        if (!r.ok) return;
        const int rc = cli(th + args);
        if (!ok_codes.count(rc)) {
            r.ok = false;
            r.failed_step = name + " (exit " + std::to_string(rc) + ")";
        }
    };
    const auto t0 = Clock::now();
    const std::string size = cycles > 0 ? "--cycles " + std::to_string(cycles) : "--preset desk";
    step("gen", "gen " + size + " --seed 1 --out " + q(dir / "data"));
    step("train", "train --data " + q(dir / "data") + " --out " + q(dir / "model" / "model.ckpt") + " --seed 0");
    // exit 4 is a consistency-check failure; the report still exists and is scored below
    step("eval", "eval --model " + q(dir / "model" / "model.ckpt") + " --data " + q(dir / "data") + " --report " +
                     q(dir / "eval" / "report.json"),
         {0, 4});
    r.gen_train_eval_seconds = since(t0);
    // exit 5: some trial had too few valid cycles; scored below
    step("soh", "soh --model " + q(dir / "model" / "model.ckpt") + " --report " + q(dir / "soh" / "soh.json"), {0, 5});
    return r;
}

json load(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("missing " + p.string());
    return json::parse(in);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run: criteria 1-10"};
    std::string work = "acceptance_work";
    std::string cli_path = P2DNET_CLI;
    bool strict = false;
    int cycles = 0;
    std::vector<int> only;
    app.add_option("--work", work, "Scratch directory (wiped first)")->capture_default_str();
    app.add_option("--cli", cli_path, "p2dnet executable")->capture_default_str();
    app.add_flag("--strict", strict, "Exit 1 when any criterion fails");
    app.add_option("--cycles", cycles, "Smoke runs only: total cycles instead of the desk preset");
    app.add_option("--only", only, "Evaluate only these criteria (4-10 share the pipeline)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
    std::map<int, Outcome> results;
    auto record = [&](int c, Outcome o) {
        std::printf("criterion %2d: %s  %s\n", c, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        results[c] = std::move(o);
    };
    auto guarded = [&](int c, const std::function<Outcome()>& f) {
        if (!wanted(c)) return;
        try {
            record(c, f());
        } catch (const std::exception& e) {
            record(c, {false, std::string("error: ") + e.what()});
        }
    };

    guarded(1, gradients);
    guarded(2, physics);
    guarded(3, calibration);

    bool need_pipeline = false;
    for (int c = 4; c <= 10; ++c) need_pipeline |= wanted(c);
    if (need_pipeline) {
        const fs::path root = fs::absolute(work);
        fs::remove_all(root);
        fs::create_directories(root);
        Cli cli{cli_path, root / "cli.log"};
        std::fprintf(stderr, "desk pipeline, 1 worker (log: %s)\n", cli.log.c_str());
        const PipelineRun one = desk_pipeline(cli, root / "workers1", 1, cycles);

        auto need_one = [&] {
            if (!one.ok) throw std::runtime_error("pipeline step failed: " + one.failed_step);
        };

        guarded(4, [&] {
            need_one();
            const json rep = load(one.dir / "eval" / "report.json");
            const double v = rep["one_step"]["voltage"]["mean_over_cycles"]["l1"];
            const double cn = rep["one_step"]["c_n"]["mean_over_cycles"]["l1"], cp = rep["one_step"]["c_p"]["mean_over_cycles"]["l1"];
            const double hist0 = load(one.dir / "model" / "model.ckpt.history.json")["history"].front()["total"];
            const double hist5 = load(one.dir / "model" / "model.ckpt.history.json")["history"].back()["total"];
            return Outcome{v <= kOneStepV && std::max(cn, cp) <= kOneStepConc && one.gen_train_eval_seconds <= kPipelineSeconds,
                           "one-step V MAE " + fmt("%.2e V", v) + ", c_n " + fmt("%.2e", cn) + ", c_p " + fmt("%.2e", cp) +
                               "; gen+train+eval " + fmt("%.0f s", one.gen_train_eval_seconds) + "; loss epoch 1 " +
                               fmt("%.3e", hist0) + " -> last " + fmt("%.3e", hist5)};
        });

        double kstep_v = NAN;
        guarded(5, [&] {
            need_one();
            kstep_v = load(one.dir / "eval" / "report.json")["k_step"]["voltage"]["mean_over_cycles"]["l1"];
            return Outcome{kstep_v <= kKStepV, "K-step V MAE " + fmt("%.2e V", kstep_v)};
        });

        guarded(6, [&] {
            need_one();
            const fs::path cc = root / "ablation";
            std::string crates;
            for (int i = 1; i <= 12; ++i) crates += (i > 1 ? "," : "") + fmt("%g", 0.5 * i);
            if (cli("gen --constant-current " + crates + " --repeats 10 --out " + q(cc / "data")) != 0 ||
                cli("train --data " + q(cc / "data") + " --out " + q(cc / "model" / "model.ckpt") + " --seed 0") != 0)
                throw std::runtime_error("constant-current gen/train failed");
            // same harness, same test cycles
            const int rc = cli("eval --model " + q(cc / "model" / "model.ckpt") + " --data " + q(one.dir / "data") +
                               " --report " + q(cc / "eval" / "report.json"));
            if (rc != 0 && rc != 4) throw std::runtime_error("constant-current eval failed");
            const double drive = load(one.dir / "eval" / "report.json")["k_step"]["voltage"]["mean_over_cycles"]["l1"];
            const double cc_v = load(cc / "eval" / "report.json")["k_step"]["voltage"]["mean_over_cycles"]["l1"];
            const double ratio = cc_v / drive;
            return Outcome{ratio >= kAblationRatio, "K-step V MAE constant-current model " + fmt("%.2e V", cc_v) +
                                                        " vs drive-cycle " + fmt("%.2e V", drive) + fmt(" (%.1fx)", ratio)};
        });

        guarded(7, [&] {
            need_one();
            const json rep = load(one.dir / "eval" / "report.json");
            const auto& rows = rep["k_step"]["confusion"];
            bool monotone = true;
            double fn = NAN, fp = NAN;
            std::string table;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double t = rows[i]["threshold"], a = rows[i]["fn_pct"], b = rows[i]["fp_pct"];
                if (std::abs(t - kFlagThreshold) < 1e-12) fn = a, fp = b;
                if (i > 0) monotone &= a >= rows[i - 1]["fn_pct"].get<double>() && b <= rows[i - 1]["fp_pct"].get<double>();
                table += fmt(" %.0f%%:", 100 * t) + fmt("%.1f", a) + "/" + fmt("%.1f", b);
            }
            return Outcome{fn <= kFnPct && fp <= kFpPct && monotone,
                           "at 10%: FN " + fmt("%.2f%%", fn) + ", FP " + fmt("%.2f%%", fp) + "; FN/FP per threshold" + table +
                               (monotone ? "; monotone" : "; NOT monotone")};
        });

        guarded(8, [&] {
            need_one();
            const fs::path b = root / "bench" / "bench.json";
            if (cli("bench --model " + q(one.dir / "model" / "model.ckpt") + " --reps 5 --report " + q(b)) != 0)
                throw std::runtime_error("bench failed");
            const json j = load(b);
            const double ratio = j["ratio"];
            return Outcome{ratio >= kSpeedup, "rollout " + fmt("%.0fx", ratio) + " faster than the simulator (median of 5, " +
                                                  std::to_string(j["windows"].get<int>()) + " windows)"};
        });

        guarded(9, [&] {
            need_one();
            const json j = load(one.dir / "soh" / "soh.json");
            double worst = 0.0;
            int bad = 0, trials = 0;
            std::string per;
            for (const auto& row : j["rows"]) {
                const double g = row["gamma_true"];
                per += fmt(" %.2f:", g);
                for (const auto& t : row["trials"]) {
                    ++trials;
                    if (t.contains("error")) {
                        ++bad;
                        per += " n/a";
                        continue;
                    }
                    const double d = std::abs(t["final"].get<double>() - g);
                    worst = std::max(worst, d);
                    bad += d > kSohDev + kOracleMean;
                    per += fmt(" %.3f", t["final"].get<double>());
                }
            }
            // oracle: surrogate-made measurements at on-grid gamma
            SurrogatePredictor model(load_checkpoint(one.dir / "model" / "model.ckpt"));
            const auto init = init_full_charge(default_parameters());
            const auto grid = gamma_grid();
            bool oracle = true;
            for (double target : kSohGammas) {
                const double gs = *std::min_element(grid.begin(), grid.end(), [&](double x, double y) {
                    return std::abs(x - target) < std::abs(y - target);
                });
                std::vector<DriveCycle> cycles;
                std::vector<Measurement> meas;
                for (std::uint64_t s = 0; s < 5; ++s) {
                    cycles.push_back(random_cycle(2000000 + s, 40));
                    const auto r = rollout(model, scale_cycle(cycles.back(), gs), init);
                    meas.push_back({r.V, r.failure_window});
                }
                const auto est = estimate_gamma_from(model, init, cycles, meas, gs);
                oracle &= std::abs(est.final_estimate - gs) <= kOracleMean && est.per_cycle_estimates.size() == 5;
                for (double e : est.per_cycle_estimates) oracle &= e == gs;
            }
            return Outcome{bad == 0 && trials == static_cast<int>(kSohGammas.size()) * 5 && oracle,
                           std::to_string(trials - bad) + "/" + std::to_string(trials) + " trials within " +
                               fmt("%.2f", kSohDev) + " (worst valid " + fmt("%.3f", worst) + ");" + per +
                               (oracle ? "; oracle recovers on-grid gamma" : "; oracle MISSED")};
        });

        guarded(10, [&] {
            need_one();
            std::fprintf(stderr, "desk pipeline, 4 workers\n");
            const PipelineRun four = desk_pipeline(cli, root / "workers4", 4, cycles);
            if (!four.ok) throw std::runtime_error("4-worker pipeline step failed: " + four.failed_step);
            const std::vector<fs::path> files = {"data/samples.bin", "data/manifest.json", "model/model.ckpt",
                                                 "model/model.ckpt.history.json", "eval/report.json", "soh/soh.json"};
            std::string differ;
            for (const auto& f : files) {
                const std::string a = slurp(one.dir / f), b = slurp(four.dir / f);
                if (a.empty() || a != b) differ += " " + f.string();
            }
            return Outcome{differ.empty(), differ.empty() ? std::to_string(files.size()) + " artefacts byte-identical at 1 and 4 workers"
                                                          : "differ:" + differ};
        });
    }

    json summary = json::object();
    int failed = 0;
    for (const auto& [c, o] : results) {
        summary[std::to_string(c)] = {{"pass", o.pass}, {"detail", o.detail}};
        failed += !o.pass;
    }
    std::ofstream(fs::path(work).replace_extension(".json")) << summary.dump(2) << '\n';
    std::printf("%zu criteria evaluated, %d failed\n", results.size(), failed);
    return strict && failed > 0 ? 1 : 0;
}
