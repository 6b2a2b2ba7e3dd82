// p2dnet command-line front end: gen, train, eval, rollout, soh, bench, plot.

#include "p2dnet/cycles.hpp"
#include "p2dnet/errors.hpp"
#include "p2dnet/parallel.hpp"
#include "p2dnet/rollout.hpp"
#include "p2dnet/soh.hpp"
#include "p2dnet/surrogate.hpp"
#include "p2dnet/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace p2dnet;

namespace {

// JSON config files: top-level keys are global options, nested objects
// address subcommands, e.g. {"threads": 2, "train": {"epochs": 3}}.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        walk(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void walk(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it->is_object()) {
                auto p = parents;
                p.push_back(it.key());
                walk(*it, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = it.key();
            if (it->is_array()) {
                for (const auto& v : *it) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(*it));
            }
            out.push_back(std::move(item));
        }
    }
};

// effective value of every named option of `app` (defaults included)
json effective_options(const CLI::App* app) {
    json j = json::object();
    for (const CLI::Option* o : app->get_options()) {
        const std::string name = o->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "version") continue;
        if (o->count() > 0) {
            const auto& r = o->results();
            j[name] = r.size() == 1 ? json(r[0]) : json(r);
        } else {
            j[name] = o->get_default_str();
        }
    }
    return j;
}

void write_run_record(const fs::path& dir, const CLI::App& root, const CLI::App* sub, const json& seeds) {
    fs::create_directories(dir);
    json r = {{"tool", kToolName},
              {"version", kVersion},
              {"subcommand", sub->get_name()},
              {"global", effective_options(&root)},
              {"options", effective_options(sub)},
              {"seeds", seeds}};
    write_json(r, dir / ("run_" + sub->get_name() + ".json"));
}

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

void make_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

ParameterSet load_params_or_default(const std::string& path) {
    if (path.empty()) return default_parameters();
    auto p = load_parameters(path);
    return p;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw CLI::ValidationError("list", "not a number: '" + item + "'");
        v.push_back(x);
    }
    return v;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

void print_report(const char* title, const EvalReport& r) {
    std::printf("%s over %zu cycles, %zu intervals\n", title, r.cycles, r.intervals);
    std::printf("  %-8s %12s %12s %12s   (mean over cycles; max over cycles in brackets)\n", "", "l2 (MSE)", "l1", "linf");
    for (auto [name, q] : {std::pair{"voltage", &r.voltage}, std::pair{"c_n", &r.c_n}, std::pair{"c_p", &r.c_p}}) {
        std::printf("  %-8s %12.3e %12.3e %12.3e   [%.3e %.3e %.3e]\n", name, q->mean.l2, q->mean.l1, q->mean.linf,
                    q->max.l2, q->max.l1, q->max.linf);
    }
}

void print_threshold_table(const std::vector<ThresholdRow>& rows) {
    std::printf("  threshold   FN%%     FP%%\n");
    for (const auto& r : rows) std::printf("  %5.0f%%  %7.2f %7.2f\n", 100 * r.threshold, r.fn_pct, r.fp_pct);
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out, params, preset = "desk", cc;
    int cycles = 0, train = 0, test = 0, windows = 40, repeats = 10;
    std::uint64_t seed = 1;
};

int cmd_gen(const GenArgs& a, int threads, const CLI::App& root, const CLI::App* sub) {
    const auto params = load_params_or_default(a.params);
    GenOptions opt;
    opt.windows = a.windows;
    opt.workers = threads;
    opt.progress = [](std::size_t done, std::size_t total) {
        if (done % 50 == 0 || done == total) std::fprintf(stderr, "\r  simulated %zu / %zu cycles", done, total);
        if (done == total) std::fprintf(stderr, "\n");
    };

    Dataset ds;
    json seeds;
    if (!a.cc.empty()) {
        const auto crates = parse_list(a.cc);
        if (crates.empty()) throw CLI::ValidationError("--constant-current", "needs at least one C-rate");
        std::printf("generating constant-current data: %zu C-rates x %d repeats\n", crates.size(), a.repeats);
        ds = constant_current_dataset(params, crates, a.repeats, opt);
        seeds = {{"base_seed", 0}};
    } else {
        int n_train = a.preset == "paper" ? 15000 : 1500;
        int n_test = a.preset == "paper" ? 3000 : 300;
        if (a.cycles > 0) {
            if (a.cycles < 2) throw CLI::ValidationError("--cycles", "needs at least 2 cycles");
            n_test = std::max(1, static_cast<int>(std::lround(a.cycles / 6.0)));
            n_train = a.cycles - n_test;
        }
        if (a.train > 0) n_train = a.train;
        if (a.test > 0) n_test = a.test;
        std::printf("generating %d train + %d test cycles (%d cycles requested), seed %llu, %d windows each\n", n_train,
                    n_test, n_train + n_test, static_cast<unsigned long long>(a.seed), a.windows);
        ds = build_dataset(params, n_train, n_test, a.seed, opt);
        seeds = {{"base_seed", a.seed}};
    }
    write_dataset(ds, a.out);
    write_run_record(a.out, root, sub, seeds);
    std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", ds.samples.size(), ds.count(Split::train),
                ds.count(Split::test), a.out.c_str());
    const double frac = ds.samples.empty() ? 0.0 : static_cast<double>(ds.failures()) / static_cast<double>(ds.samples.size());
    std::printf("failure samples: %zu (%.2f%%), skipped cycles: %zu\n", ds.failures(), 100 * frac, ds.skipped());
    if (ds.skipped() > 0) {
        std::fprintf(stderr, "warning: %zu cycles were skipped after simulator errors (see manifest)\n", ds.skipped());
        return 3;
    }
    return 0;
}

struct TrainArgs {
    std::string data, out, params, history;
    TrainConfig cfg;
    bool no_residual = false;
};

int cmd_train(TrainArgs a, int threads, const CLI::App& root, const CLI::App* sub) {
    const auto params = load_params_or_default(a.params);
    const Dataset ds = read_dataset(a.data);
    a.cfg.workers = threads;
    a.cfg.arch.residual = !a.no_residual;
    std::printf("training on %zu samples: %d epochs, batch %d, lr %g (x%g per epoch), w_V %g\n", ds.count(Split::train),
                a.cfg.epochs, a.cfg.batch, a.cfg.lr, a.cfg.decay, a.cfg.w_V);
    const auto res = train(ds, normalization_for(params), a.cfg, [](const EpochStats& e) {
        std::printf("  epoch %d  lr %.2e  loss %.4e  (conc %.3e  voltage %.3e  fail %.3e)\n", e.epoch, e.lr, e.mean.total,
                    e.mean.conc, e.mean.voltage, e.mean.fail);
        std::fflush(stdout);
    });
    make_parent(a.out);
    save_checkpoint(res.weights, a.out);

    json hist = json::array();
    for (const auto& e : res.history)
        hist.push_back({{"epoch", e.epoch},
                        {"lr", e.lr},
                        {"steps", e.steps},
                        {"total", e.mean.total},
                        {"conc", e.mean.conc},
                        {"voltage", e.mean.voltage},
                        {"fail", e.mean.fail}});
    const fs::path hpath = a.history.empty() ? fs::path(a.out + ".history.json") : fs::path(a.history);
    write_json({{"steps", res.steps}, {"parameters", res.weights.parameter_count()}, {"history", hist}}, hpath);
    write_run_record(parent_or_cwd(a.out), root, sub, {{"train_seed", a.cfg.seed}, {"dataset_base_seed", ds.base_seed}});

    std::vector<double> xs, ys;
    for (const auto& e : res.history) {
        xs.push_back(e.epoch);
        ys.push_back(std::log10(e.mean.total));
    }
    write_svg_plot(parent_or_cwd(a.out) / "training_loss.svg", "Training loss", "epoch", "log10 mean loss",
                   {{"total", xs, ys}});
    std::printf("wrote %s (%zu parameters)\n", a.out.c_str(), res.weights.parameter_count());
    return 0;
}

struct EvalArgs {
    std::string model, data, report, thresholds = "0.1,0.2,0.3,0.4,0.5";
    int traces = 5;
};

int cmd_eval(const EvalArgs& a, int threads, const CLI::App& root, const CLI::App* sub) {
    const auto w = load_checkpoint(a.model);
    const Dataset ds = read_dataset(a.data);
    SurrogatePredictor model(w);
    EvalOptions opt;
    opt.thresholds = parse_list(a.thresholds);
    opt.workers = threads;
    const auto one = one_step_eval(model, ds, opt);
    std::vector<VoltageTrace> traces;
    make_parent(a.report);
    const auto ks = kstep_eval(model, ds, opt, &traces, static_cast<std::size_t>(std::max(0, a.traces)));
    print_report("one-step", one);
    print_report("K-step", ks);
    std::printf("K-step failure prediction\n");
    print_threshold_table(ks.confusion);

    json rows = json::array();
    for (const auto& r : ks.confusion) rows.push_back({{"threshold", r.threshold}, {"fn_pct", r.fn_pct}, {"fp_pct", r.fp_pct}});
    const std::string problems = one.check() + ks.check();
    write_json({{"one_step", to_json(one)}, {"k_step", to_json(ks)}, {"failure_table", rows}, {"consistency", problems.empty() ? "ok" : problems}},
               a.report);
    const fs::path dir = parent_or_cwd(a.report);
    for (const auto& t : traces) {
        const std::string stem = "trace_cycle" + std::to_string(t.cycle_id);
        write_trace_csv(t, dir / (stem + ".csv"));
        write_svg_plot(dir / (stem + ".svg"), "K-step voltage, test cycle " + std::to_string(t.cycle_id), "time (s)",
                       "voltage (V)", {{"simulator", t.t, t.V_true, "#1f77b4"}, {"surrogate", t.t, t.V_pred, "#d62728", true}});
    }
    write_run_record(dir, root, sub, {{"dataset_base_seed", ds.base_seed}, {"model_seed", w.seed}});
    return problems.empty() ? 0 : 4;
}

struct RolloutArgs {
    std::string model, params, out_dir = ".";
    std::uint64_t seed = 1;
    int windows = 40;
    double threshold = 0.5;
};

int cmd_rollout(const RolloutArgs& a, const CLI::App& root, const CLI::App* sub) {
    const auto params = load_params_or_default(a.params);
    const auto w = load_checkpoint(a.model);
    SurrogatePredictor model(w);
    const DriveCycle cycle = random_cycle(a.seed, a.windows);
    const CellState init = init_full_charge(params);
    RolloutOptions ro;
    ro.fail_threshold = a.threshold;
    const Rollout r = rollout(model, cycle, init, ro);
    const SimOutcome truth = simulate_cycle(params, cycle);

    VoltageTrace tr;
    tr.t.push_back(0);
    tr.V_pred.push_back(init.V);
    tr.V_true.push_back(truth.trajectory[0].V);
    double mae = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < r.V.size(); ++k) {
        tr.t.push_back(kWindowSeconds * static_cast<double>(k + 1));
        tr.V_pred.push_back(r.V[k]);
        const bool have = k + 1 < truth.trajectory.size();
        tr.V_true.push_back(have ? truth.trajectory[k + 1].V : std::nan(""));
        if (have) {
            mae += std::abs(r.V[k] - truth.trajectory[k + 1].V);
            ++n;
        }
    }
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);
    write_trace_csv(tr, dir / "rollout.csv");
    write_svg_plot(dir / "rollout.svg", "Predicted vs simulated voltage (cycle seed " + std::to_string(a.seed) + ")",
                   "time (s)", "voltage (V)", {{"simulator", tr.t, tr.V_true, "#1f77b4"}, {"surrogate", tr.t, tr.V_pred, "#d62728", true}});
    json j = {{"cycle_seed", a.seed},
              {"currents", cycle.currents},
              {"predicted_failure_window", r.failure_window ? json(*r.failure_window) : json(nullptr)},
              {"true_failure_window", truth.failure_window ? json(*truth.failure_window) : json(nullptr)},
              {"voltage_mae", n ? mae / static_cast<double>(n) : 0.0},
              {"V_pred", r.V},
              {"p_fail", r.p_fail},
              {"clamped_cells", r.clamped_cells}};
    write_json(j, dir / "rollout.json");
    write_run_record(dir, root, sub, {{"cycle_seed", a.seed}, {"model_seed", w.seed}});
    std::printf("predicted failure window: %s, simulator: %s, voltage MAE %.3e V over %zu windows\n",
                r.failure_window ? std::to_string(*r.failure_window).c_str() : "none",
                truth.failure_window ? std::to_string(*truth.failure_window).c_str() : "none", n ? mae / n : 0.0, n);
    return 0;
}

struct SohArgs {
    std::string model, params, report = "soh.json", gammas = "0.8,0.85,0.9,0.95";
    int trials = 5, cycles = 5, windows = 40;
    std::uint64_t seed = 1000000;
};

int cmd_soh(const SohArgs& a, int threads, const CLI::App& root, const CLI::App* sub) {
    const auto params = load_params_or_default(a.params);
    const auto w = load_checkpoint(a.model);
    SurrogatePredictor model(w);
    SohOptions opt;
    opt.n_cycles = a.cycles;
    opt.windows = a.windows;
    opt.workers = threads;
    const auto gammas = parse_list(a.gammas);
    const fs::path dir = parent_or_cwd(a.report);
    fs::create_directories(dir);

    json rows = json::array();
    std::printf("  gamma   estimates over %d trials\n", a.trials);
    int status = 0;
    for (std::size_t g = 0; g < gammas.size(); ++g) {
        json trials = json::array();
        std::printf("  %.3f  ", gammas[g]);
        for (int t = 0; t < a.trials; ++t) {
            const std::uint64_t base = a.seed + (g * static_cast<std::size_t>(a.trials) + static_cast<std::size_t>(t)) *
                                                    static_cast<std::uint64_t>(a.cycles);
            try {
                const auto est = estimate_gamma(model, params, gammas[g], base, opt);
                trials.push_back(to_json(est, opt));
                std::printf(" %.3f", est.final_estimate);
                if (t == 0) {
                    std::vector<SvgSeries> series;
                    const auto grid = gamma_grid(opt);
                    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
                    std::ofstream csv(dir / ("soh_objective_gamma" + fmt(gammas[g]) + ".csv"));
                    csv << "gamma";
                    for (std::size_t c = 0; c < est.cycles.size(); ++c) csv << ",f_cycle" << c;
                    csv << '\n';
                    for (std::size_t i = 0; i < grid.size(); ++i) {
                        csv << grid[i];
                        for (const auto& c : est.cycles) csv << ',' << c.objective[i];
                        csv << '\n';
                    }
                    for (std::size_t c = 0; c < est.cycles.size(); ++c)
                        series.push_back({"cycle " + std::to_string(c), grid, est.cycles[c].objective, colors[c % 5]});
                    write_svg_plot(dir / ("soh_objective_gamma" + fmt(gammas[g]) + ".svg"),
                                   "SOH objective, true gamma " + fmt(gammas[g]), "gamma", "f(gamma)", series);
                }
            } catch (const EstimationError& e) {
                trials.push_back({{"error", e.what()}, {"base_seed", base}});
                std::printf("   n/a");
                status = 5;
            }
            std::fflush(stdout);
        }
        std::printf("\n");
        rows.push_back({{"gamma_true", gammas[g]}, {"trials", trials}});
    }
    write_json({{"rows", rows}, {"base_seed", a.seed}}, a.report);
    write_run_record(dir, root, sub, {{"base_seed", a.seed}, {"model_seed", w.seed}});
    return status;
}

struct BenchArgs {
    std::string model, params, report = "bench.json";
    std::uint64_t seed = 1;
    int windows = 40, reps = 5;
};

int cmd_bench(const BenchArgs& a, const CLI::App& root, const CLI::App* sub) {
    const auto params = load_params_or_default(a.params);
    const auto w = load_checkpoint(a.model);
    SurrogatePredictor model(w);
    make_parent(a.report);
    const auto b = bench_compare(model, params, random_cycle(a.seed, a.windows), a.reps);
    std::printf("simulator %.4f s, K-step rollout %.5f s over %d windows: %.0fx faster (median of %d)\n",
                b.simulator_seconds, b.rollout_seconds, b.windows, b.ratio, b.repetitions);
    write_json({{"simulator_seconds", b.simulator_seconds},
                {"rollout_seconds", b.rollout_seconds},
                {"ratio", b.ratio},
                {"windows", b.windows},
                {"repetitions", b.repetitions},
                {"cycle_seed", a.seed},
                {"machine", b.machine}},
               a.report);
    write_run_record(parent_or_cwd(a.report), root, sub, {{"cycle_seed", a.seed}});
    return 0;
}

struct PlotArgs {
    std::string csv, out, title = "", ylabel = "";
};

int cmd_plot(const PlotArgs& a) {
    std::ifstream in(a.csv);
    if (!in) throw Error("cannot open " + a.csv);
    std::string line;
    if (!std::getline(in, line)) throw Error(a.csv + " is empty");
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) names.push_back(c);
    }
    if (names.size() < 2) throw Error(a.csv + " needs an x column and at least one y column");
    std::vector<std::vector<double>> cols(names.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::size_t i = 0;
        for (std::string c; std::getline(ss, c, ',') && i < cols.size(); ++i) {
            try {
                cols[i].push_back(std::stod(c));
            } catch (const std::exception&) {
                cols[i].push_back(std::nan(""));
            }
        }
    }
    make_parent(a.out);
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::vector<SvgSeries> series;
    for (std::size_t i = 1; i < names.size(); ++i)
        series.push_back({names[i], cols[0], cols[i], colors[(i - 1) % 6], i == 2});
    write_svg_plot(a.out, a.title.empty() ? fs::path(a.csv).filename().string() : a.title, names[0], a.ylabel, series);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Battery surrogate toolkit: DFN simulation, CNN surrogate training, rollout and SOH estimation"};
    app.set_version_flag("--version", std::string(kToolName) + " " + kVersion);
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file (flags on the command line take precedence)");
    int threads = default_workers();
    app.add_option("--threads", threads, "Worker threads (default: $P2DNET_THREADS or 1); results do not depend on it")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    GenArgs ga;
    auto* gen = app.add_subcommand("gen", "Simulate drive cycles and write a dataset");
    gen->add_option("--out", ga.out, "Output dataset directory")->required();
    gen->add_option("--params", ga.params, "Parameter JSON (default: bundled set)")->check(CLI::ExistingFile);
    gen->add_option("--preset", ga.preset, "desk (1500/300) or paper (15000/3000)")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    gen->add_option("--cycles", ga.cycles, "Total cycles; one in six goes to the test split");
    gen->add_option("--train", ga.train, "Train cycles (overrides preset)");
    gen->add_option("--test", ga.test, "Test cycles (overrides preset)");
    gen->add_option("--seed", ga.seed, "Base seed; cycle i uses seed + i")->capture_default_str();
    gen->add_option("--windows", ga.windows, "100-s windows per cycle")->check(CLI::Range(2, 100000))->capture_default_str();
    gen->add_option("--constant-current", ga.cc, "Comma-separated C-rates: constant-current discharges instead");
    gen->add_option("--repeats", ga.repeats, "Copies of each constant-current discharge")->check(CLI::PositiveNumber)->capture_default_str();

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train the surrogate on a dataset's train split");
    trn->add_option("--data", ta.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    trn->add_option("--out", ta.out, "Checkpoint file to write")->required();
    trn->add_option("--params", ta.params, "Parameter JSON for the voltage normalisation")->check(CLI::ExistingFile);
    trn->add_option("--history", ta.history, "Loss history JSON (default: <out>.history.json)");
    trn->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
    trn->add_option("--batch", ta.cfg.batch)->capture_default_str();
    trn->add_option("--lr", ta.cfg.lr, "Initial learning rate")->capture_default_str();
    trn->add_option("--decay", ta.cfg.decay, "Learning-rate factor per epoch")->capture_default_str();
    trn->add_option("--wv", ta.cfg.w_V, "Voltage loss weight")->capture_default_str();
    trn->add_option("--wfail", ta.cfg.w_fail, "Failure loss weight")->capture_default_str();
    trn->add_option("--seed", ta.cfg.seed, "Initialisation and shuffling seed")->capture_default_str();
    trn->add_flag("--no-residual", ta.no_residual, "Predict grids directly instead of as increments");

    EvalArgs ea;
    auto* evl = app.add_subcommand("eval", "One-step and K-step evaluation on the test split");
    evl->add_option("--model", ea.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    evl->add_option("--data", ea.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    evl->add_option("--report", ea.report, "Report JSON")->required();
    evl->add_option("--thresholds", ea.thresholds, "Failure thresholds (fractions)")->capture_default_str();
    evl->add_option("--traces", ea.traces, "Voltage traces (CSV + SVG) to write")->capture_default_str();

    RolloutArgs ra;
    auto* rol = app.add_subcommand("rollout", "K-step rollout of one random cycle from full charge");
    rol->add_option("--model", ra.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    rol->add_option("--params", ra.params, "Parameter JSON")->check(CLI::ExistingFile);
    rol->add_option("--seed", ra.seed, "Cycle seed")->capture_default_str();
    rol->add_option("--windows", ra.windows)->check(CLI::Range(2, 100000))->capture_default_str();
    rol->add_option("--threshold", ra.threshold, "Failure probability that stops the rollout")->capture_default_str();
    rol->add_option("--out-dir", ra.out_dir)->capture_default_str();

    SohArgs sa;
    auto* soh = app.add_subcommand("soh", "Estimate the health factor gamma of simulated aged cells");
    soh->add_option("--model", sa.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    soh->add_option("--params", sa.params, "Parameter JSON")->check(CLI::ExistingFile);
    soh->add_option("--gamma", sa.gammas, "True gamma values, comma-separated")->capture_default_str();
    soh->add_option("--trials", sa.trials)->check(CLI::PositiveNumber)->capture_default_str();
    soh->add_option("--cycles", sa.cycles, "Drive cycles per estimate")->check(CLI::PositiveNumber)->capture_default_str();
    soh->add_option("--windows", sa.windows)->check(CLI::Range(2, 100000))->capture_default_str();
    soh->add_option("--seed", sa.seed, "Base seed of the drive cycles")->capture_default_str();
    soh->add_option("--report", sa.report)->capture_default_str();

    BenchArgs ba;
    auto* ben = app.add_subcommand("bench", "Time the simulator against a K-step rollout");
    ben->add_option("--model", ba.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    ben->add_option("--params", ba.params, "Parameter JSON")->check(CLI::ExistingFile);
    ben->add_option("--seed", ba.seed, "Cycle seed")->capture_default_str();
    ben->add_option("--windows", ba.windows)->check(CLI::Range(2, 100000))->capture_default_str();
    ben->add_option("--reps", ba.reps)->check(CLI::PositiveNumber)->capture_default_str();
    ben->add_option("--report", ba.report)->capture_default_str();

    PlotArgs pa;
    auto* plt = app.add_subcommand("plot", "Line plot (SVG) of a CSV file: first column x, the rest y");
    plt->add_option("--csv", pa.csv)->required()->check(CLI::ExistingFile);
    plt->add_option("--out", pa.out)->required();
    plt->add_option("--title", pa.title);
    plt->add_option("--ylabel", pa.ylabel);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(ga, threads, app, gen);
        if (trn->parsed()) return cmd_train(ta, threads, app, trn);
        if (evl->parsed()) return cmd_eval(ea, threads, app, evl);
        if (rol->parsed()) return cmd_rollout(ra, app, rol);
        if (soh->parsed()) return cmd_soh(sa, threads, app, soh);
        if (ben->parsed()) return cmd_bench(ba, app, ben);
        if (plt->parsed()) return cmd_plot(pa);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        // error report next to whatever partial outputs exist
        const CLI::App* sub = nullptr;
        fs::path dir;
        if (gen->parsed()) sub = gen, dir = ga.out;
        else if (trn->parsed()) sub = trn, dir = parent_or_cwd(ta.out);
        else if (evl->parsed()) sub = evl, dir = parent_or_cwd(ea.report);
        else if (rol->parsed()) sub = rol, dir = ra.out_dir;
        else if (soh->parsed()) sub = soh, dir = parent_or_cwd(sa.report);
        else if (ben->parsed()) sub = ben, dir = parent_or_cwd(ba.report);
        else if (plt->parsed()) sub = plt, dir = parent_or_cwd(pa.out);
        if (sub) {
            try {
                fs::create_directories(dir);
                write_json({{"tool", kToolName},
                            {"version", kVersion},
                            {"subcommand", sub->get_name()},
                            {"error", e.what()}},
                           dir / ("error_" + sub->get_name() + ".json"));
            } catch (const std::exception&) {
            }
        }
        return 1;
    }
    return 0;
}
