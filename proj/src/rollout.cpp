#include "p2dnet/rollout.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/parallel.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace p2dnet {

using nlohmann::json;

std::vector<Prediction> Predictor::predict_batch(const std::vector<SurrogateInput>& in) const {
    std::vector<Prediction> out;
    out.reserve(in.size());
    for (const auto& x : in) out.push_back(predict(x));
    return out;
}

// ---------------------------------------------------------------------------
// replay oracle

std::uint64_t ReplayPredictor::key(const SurrogateInput& in) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    };
    for (double v : in.c_n) mix(v);
    for (double v : in.c_p) mix(v);
    mix(in.V_t);
    mix(in.I_t);
    mix(in.I_t100);
    return h;
}

ReplayPredictor::ReplayPredictor(const Dataset& ds) {
    for (const auto& s : ds.samples) add(s);
}

void ReplayPredictor::add(const Sample& s) {
    Prediction p;
    p.V = s.V_t100;
    for (int i = 0; i < kGridCells; ++i) {
        p.c_n[i] = s.c_n_next[i];
        p.c_p[i] = s.c_p_next[i];
    }
    p.p_fail = s.fail;
    add(input_of(s), p);
}

void ReplayPredictor::add(const SurrogateInput& in, const Prediction& out) { table_[key(in)] = out; }

Prediction ReplayPredictor::predict(const SurrogateInput& in) const {
    const auto it = table_.find(key(in));
    if (it == table_.end()) throw ModelError("replay oracle has no record of this input");
    return it->second;
}

// ---------------------------------------------------------------------------
// metrics

namespace {

struct Acc {
    double sq = 0, abs = 0, max = 0;
    std::size_t n = 0;

    void add(double e) {
        sq += e * e;
        abs += std::abs(e);
        max = std::max(max, std::abs(e));
        ++n;
    }
};

// Per-cycle triple of a scalar quantity.
MetricTriple triple_of(const Acc& a) {
    if (a.n == 0) return {};
    return {a.sq / a.n, a.abs / a.n, a.max};
}

// Grid errors: per interval MSE / MAE / max-abs, then mean, mean, max over
// the cycle's intervals.
struct GridAcc {
    double mse = 0, mae = 0, max = 0;
    std::size_t n = 0;

    void add(const Grid& pred, const GridF& truth) {
        Acc a;
        for (int i = 0; i < kGridCells; ++i) a.add(pred[i] - static_cast<double>(truth[i]));
        mse += a.sq / a.n;
        mae += a.abs / a.n;
        max = std::max(max, a.max);
        ++n;
    }
    MetricTriple triple() const {
        if (n == 0) return {};
        return {mse / n, mae / n, max};
    }
};

struct CycleScore {
    bool used = false;
    MetricTriple v, cn, cp;
    std::size_t intervals = 0;
    std::size_t clamped = 0;
    // one-step: interval confusion per threshold; k-step: per-cycle outcome
    std::vector<ThresholdRow> rows;
};

QuantityMetrics combine(const std::vector<const MetricTriple*>& per_cycle) {
    QuantityMetrics q;
    if (per_cycle.empty()) return q;
    for (const auto* t : per_cycle) {
        q.mean.l2 += t->l2;
        q.mean.l1 += t->l1;
        q.mean.linf += t->linf;
        q.max.l2 = std::max(q.max.l2, t->l2);
        q.max.l1 = std::max(q.max.l1, t->l1);
        q.max.linf = std::max(q.max.linf, t->linf);
    }
    const double n = static_cast<double>(per_cycle.size());
    q.mean.l2 /= n;
    q.mean.l1 /= n;
    q.mean.linf /= n;
    return q;
}

EvalReport assemble_report(const std::string& kind, const std::vector<CycleScore>& scores,
                           const std::vector<double>& thresholds) {
    EvalReport r;
    r.kind = kind;
    std::vector<const MetricTriple*> v, cn, cp;
    r.confusion.resize(thresholds.size());
    for (std::size_t i = 0; i < thresholds.size(); ++i) r.confusion[i].threshold = thresholds[i];
    for (const auto& s : scores) {
        if (!s.used) continue;
        ++r.cycles;
        r.intervals += s.intervals;
        r.clamped_cells += s.clamped;
        v.push_back(&s.v);
        cn.push_back(&s.cn);
        cp.push_back(&s.cp);
        for (std::size_t i = 0; i < thresholds.size(); ++i) {
            r.confusion[i].fn += s.rows[i].fn;
            r.confusion[i].fp += s.rows[i].fp;
            r.confusion[i].hit += s.rows[i].hit;
            r.confusion[i].evaluations += s.rows[i].evaluations;
        }
    }
    for (auto& row : r.confusion) {
        if (row.evaluations) {
            row.fn_pct = 100.0 * static_cast<double>(row.fn) / static_cast<double>(row.evaluations);
            row.fp_pct = 100.0 * static_cast<double>(row.fp) / static_cast<double>(row.evaluations);
        }
    }
    r.voltage = combine(v);
    r.c_n = combine(cn);
    r.c_p = combine(cp);
    return r;
}

std::vector<std::size_t> test_cycles(const Dataset& data) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.cycles.size(); ++i)
        if (data.cycles[i].split == Split::test && data.cycles[i].count > 0) idx.push_back(i);
    return idx;
}

} // namespace

std::string EvalReport::check() const {
    for (const auto* q : {&voltage, &c_n, &c_p}) {
        for (const auto* t : {&q->mean, &q->max}) {
            if (!(t->l2 >= 0.0)) return "negative l2";
            if (t->l1 > t->linf) return "l1 exceeds linf";
        }
        if (q->mean.l2 > q->max.l2 || q->mean.l1 > q->max.l1 || q->mean.linf > q->max.linf)
            return "mean over cycles exceeds max over cycles";
    }
    for (std::size_t i = 0; i < confusion.size(); ++i) {
        const auto& r = confusion[i];
        if (r.fn + r.fp + r.hit != r.evaluations) return "confusion counts do not sum to the evaluations";
        if (r.fn_pct < 0 || r.fn_pct > 100 || r.fp_pct < 0 || r.fp_pct > 100) return "rate outside [0, 100]";
        if (i > 0 && confusion[i - 1].threshold <= r.threshold) {
            if (r.fn < confusion[i - 1].fn) return "FN decreases with a rising threshold";
            if (r.fp > confusion[i - 1].fp) return "FP increases with a rising threshold";
        }
    }
    return {};
}

EvalReport one_step_eval(const Predictor& model, const Dataset& data, const EvalOptions& opt) {
    const auto idx = test_cycles(data);
    if (idx.empty()) throw Error("one_step_eval needs a non-empty test split");
    std::vector<CycleScore> scores(idx.size());
    parallel_for(idx.size(), opt.workers, [&](std::size_t ci) {
        const auto& rec = data.cycles[idx[ci]];
        std::vector<SurrogateInput> in;
        for (std::size_t i = rec.first; i < rec.first + rec.count; ++i) in.push_back(input_of(data.samples[i]));
        const auto pred = model.predict_batch(in);
        auto& sc = scores[ci];
        sc.used = true;
        sc.rows.resize(opt.thresholds.size());
        Acc v;
        GridAcc gn, gp;
        for (std::size_t k = 0; k < rec.count; ++k) {
            const Sample& t = data.samples[rec.first + k];
            const Prediction& p = pred[k];
            v.add(p.V - static_cast<double>(t.V_t100));
            gn.add(p.c_n, t.c_n_next);
            gp.add(p.c_p, t.c_p_next);
            sc.clamped += static_cast<std::size_t>(p.clamped_cells);
            for (std::size_t h = 0; h < opt.thresholds.size(); ++h) {
                auto& row = sc.rows[h];
                const bool flag = p.p_fail >= opt.thresholds[h];
                const bool fail = t.fail != 0.0f;
                if (fail && !flag)
                    ++row.fn;
                else if (!fail && flag)
                    ++row.fp;
                else
                    ++row.hit;
                ++row.evaluations;
            }
        }
        sc.intervals = rec.count;
        sc.v = triple_of(v);
        sc.cn = gn.triple();
        sc.cp = gp.triple();
    });
    return assemble_report("one_step", scores, opt.thresholds);
}

// ---------------------------------------------------------------------------
// rollout

Rollout rollout(const Predictor& model, const DriveCycle& cycle, const Grid& c_n0, const Grid& c_p0, double V0,
                const RolloutOptions& opt) {
    Rollout r;
    int K = cycle.windows();
    if (opt.max_windows >= 0) K = std::min(K, opt.max_windows);
    SurrogateInput in;
    in.c_n = c_n0;
    in.c_p = c_p0;
    in.V_t = V0;
    for (int k = 0; k < K; ++k) {
        in.I_t = cycle.currents[static_cast<std::size_t>(k)];
        in.I_t100 = cycle.currents[static_cast<std::size_t>(k) + 1];
        const Prediction p = model.predict(in);
        r.V.push_back(p.V);
        r.c_n.push_back(p.c_n);
        r.c_p.push_back(p.c_p);
        r.p_fail.push_back(p.p_fail);
        r.clamped_cells += static_cast<std::size_t>(p.clamped_cells);
        r.clamped_currents += static_cast<std::size_t>(p.clamped_currents);
        if (!r.failure_window && p.p_fail >= opt.fail_threshold) {
            r.failure_window = k;
            if (opt.stop_on_failure) break;
        }
        in.c_n = p.c_n;
        in.c_p = p.c_p;
        in.V_t = p.V;
    }
    return r;
}

Rollout rollout(const Predictor& model, const DriveCycle& cycle, const CellState& init, const RolloutOptions& opt) {
    return rollout(model, cycle, init.c_n, init.c_p, init.V, opt);
}

DriveCycle cycle_of(const CycleRecord& rec) {
    if (rec.crate > 0.0) {
        DriveCycle c;
        c.currents.assign(static_cast<std::size_t>(rec.windows) + 1, rec.crate);
        c.seed = rec.seed;
        return c;
    }
    return random_cycle(rec.seed, rec.windows);
}

FlagOutcome classify_flag(int true_window, std::optional<int> flag) {
    if (true_window < 0) return flag ? FlagOutcome::fp : FlagOutcome::hit;
    if (!flag || *flag > true_window) return FlagOutcome::fn;
    if (*flag < true_window) return FlagOutcome::fp;
    return FlagOutcome::hit;
}

namespace {

std::optional<int> first_flag(const std::vector<double>& p, double thr) {
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] >= thr) return static_cast<int>(k);
    return std::nullopt;
}

void count_flag(ThresholdRow& row, FlagOutcome o) {
    switch (o) {
    case FlagOutcome::fn: ++row.fn; break;
    case FlagOutcome::fp: ++row.fp; break;
    case FlagOutcome::hit: ++row.hit; break;
    }
    ++row.evaluations;
}

} // namespace

EvalReport kstep_eval(const Predictor& model, const Dataset& data, const EvalOptions& opt,
                      std::vector<VoltageTrace>* traces, std::size_t trace_count) {
    const auto idx = test_cycles(data);
    if (idx.empty()) throw Error("kstep_eval needs a non-empty test split");
    std::vector<CycleScore> scores(idx.size());
    std::vector<VoltageTrace> tr(std::min(trace_count, idx.size()));
    parallel_for(idx.size(), opt.workers, [&](std::size_t ci) {
        const auto& rec = data.cycles[idx[ci]];
        const Sample& s0 = data.samples[rec.first];
        const SurrogateInput init = input_of(s0);
        RolloutOptions ro;
        ro.stop_on_failure = false;
        ro.max_windows = static_cast<int>(rec.count);
        const Rollout r = rollout(model, cycle_of(rec), init.c_n, init.c_p, init.V_t, ro);

        auto& sc = scores[ci];
        sc.used = true;
        Acc v;
        GridAcc gn, gp;
        for (std::size_t k = 0; k < rec.count && k < r.V.size(); ++k) {
            const Sample& t = data.samples[rec.first + k];
            v.add(r.V[k] - static_cast<double>(t.V_t100));
            gn.add(r.c_n[k], t.c_n_next);
            gp.add(r.c_p[k], t.c_p_next);
        }
        sc.intervals = v.n;
        sc.clamped = r.clamped_cells;
        sc.v = triple_of(v);
        sc.cn = gn.triple();
        sc.cp = gp.triple();
        sc.rows.resize(opt.thresholds.size());
        const int true_window = rec.failed ? rec.failure_window : -1;
        for (std::size_t h = 0; h < opt.thresholds.size(); ++h)
            count_flag(sc.rows[h], classify_flag(true_window, first_flag(r.p_fail, opt.thresholds[h])));

        if (ci < tr.size()) {
            auto& t = tr[ci];
            t.cycle_id = rec.id;
            t.t.push_back(0.0);
            t.V_true.push_back(s0.V_t);
            t.V_pred.push_back(s0.V_t);
            for (std::size_t k = 0; k < r.V.size(); ++k) {
                t.t.push_back(kWindowSeconds * static_cast<double>(k + 1));
                t.V_true.push_back(data.samples[rec.first + k].V_t100);
                t.V_pred.push_back(r.V[k]);
            }
        }
    });
    if (traces) *traces = std::move(tr);
    return assemble_report("k_step", scores, opt.thresholds);
}

std::vector<ThresholdRow> failure_threshold_table(const Predictor& model, const Dataset& data,
                                                  const std::vector<double>& thresholds, int workers) {
    EvalOptions opt;
    opt.thresholds = thresholds;
    opt.workers = workers;
    return kstep_eval(model, data, opt).confusion;
}

// ---------------------------------------------------------------------------
// report JSON

namespace {

json triple_json(const MetricTriple& t) { return {{"l2", t.l2}, {"l1", t.l1}, {"linf", t.linf}}; }
MetricTriple triple_from(const json& j) { return {j.at("l2").get<double>(), j.at("l1").get<double>(), j.at("linf").get<double>()}; }
json quantity_json(const QuantityMetrics& q) { return {{"mean_over_cycles", triple_json(q.mean)}, {"max_over_cycles", triple_json(q.max)}}; }
QuantityMetrics quantity_from(const json& j) {
    return {triple_from(j.at("mean_over_cycles")), triple_from(j.at("max_over_cycles"))};
}

} // namespace

json to_json(const EvalReport& r) {
    json rows = json::array();
    for (const auto& c : r.confusion)
        rows.push_back({{"threshold", c.threshold},
                        {"fn", c.fn},
                        {"fp", c.fp},
                        {"hit", c.hit},
                        {"evaluations", c.evaluations},
                        {"fn_pct", c.fn_pct},
                        {"fp_pct", c.fp_pct}});
    return {{"kind", r.kind},
            {"voltage", quantity_json(r.voltage)},
            {"c_n", quantity_json(r.c_n)},
            {"c_p", quantity_json(r.c_p)},
            {"confusion", rows},
            {"cycles", r.cycles},
            {"intervals", r.intervals},
            {"clamped_cells", r.clamped_cells}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    try {
        r.kind = j.at("kind").get<std::string>();
        r.voltage = quantity_from(j.at("voltage"));
        r.c_n = quantity_from(j.at("c_n"));
        r.c_p = quantity_from(j.at("c_p"));
        for (const auto& c : j.at("confusion")) {
            ThresholdRow row;
            row.threshold = c.at("threshold").get<double>();
            row.fn = c.at("fn").get<std::size_t>();
            row.fp = c.at("fp").get<std::size_t>();
            row.hit = c.at("hit").get<std::size_t>();
            row.evaluations = c.at("evaluations").get<std::size_t>();
            row.fn_pct = c.at("fn_pct").get<double>();
            row.fp_pct = c.at("fp_pct").get<double>();
            r.confusion.push_back(row);
        }
        r.cycles = j.at("cycles").get<std::size_t>();
        r.intervals = j.at("intervals").get<std::size_t>();
        r.clamped_cells = j.at("clamped_cells").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed evaluation report: ") + e.what(), 0);
    }
    return r;
}

// ---------------------------------------------------------------------------
// timing

json machine_descriptor() {
    json m;
    std::string cpu;
    std::ifstream in("/proc/cpuinfo");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("model name", 0) == 0) {
            cpu = line.substr(line.find(':') + 2);
            break;
        }
    }
    m["cpu"] = cpu.empty() ? "unknown" : cpu;
    m["hardware_threads"] = std::thread::hardware_concurrency();
    struct utsname u {};
    if (uname(&u) == 0) m["os"] = std::string(u.sysname) + " " + u.release + " " + u.machine;
#ifdef __VERSION__
    m["compiler"] = __VERSION__;
#endif
    return m;
}

BenchResult bench_compare(const Predictor& model, const ParameterSet& params, const DriveCycle& cycle, int repetitions) {
    if (repetitions < 1) throw Error("bench_compare needs at least one repetition");
    using clock = std::chrono::steady_clock;
    const CellState init = init_full_charge(params);

    auto run_sim = [&] {
        Simulator sim(params);
        return sim.simulate(cycle);
    };
    const SimOutcome ref = run_sim();  // warm-up
    const int windows = static_cast<int>(ref.trajectory.size()) - 1;
    RolloutOptions ro;
    ro.stop_on_failure = false;
    ro.max_windows = windows;
    auto run_rollout = [&] { return rollout(model, cycle, init, ro); };
    run_rollout();  // warm-up

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    std::vector<double> ts, tr;
    for (int i = 0; i < repetitions; ++i) {
        auto t0 = clock::now();
        run_sim();
        ts.push_back(std::chrono::duration<double>(clock::now() - t0).count());
        t0 = clock::now();
        run_rollout();
        tr.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    BenchResult b;
    b.simulator_seconds = median(ts);
    b.rollout_seconds = median(tr);
    b.ratio = b.rollout_seconds > 0 ? b.simulator_seconds / b.rollout_seconds : std::numeric_limits<double>::infinity();
    b.windows = windows;
    b.repetitions = repetitions;
    b.machine = machine_descriptor();
    return b;
}

// ---------------------------------------------------------------------------
// artifacts

void write_trace_csv(const VoltageTrace& tr, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(10);
    out << "t,V_true,V_pred\n";
    for (std::size_t i = 0; i < tr.t.size(); ++i) out << tr.t[i] << ',' << tr.V_true[i] << ',' << tr.V_pred[i] << '\n';
}

namespace {

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '&': o += "&amp;"; break;
        case '"': o += "&quot;"; break;
        default: o += c;
        }
    }
    return o;
}

std::string num(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

} // namespace

void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<SvgSeries>& series) {
    const double W = 800, H = 480, ml = 80, mr = 30, mt = 50, mb = 60;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x1 > x0)) {
        x0 = std::isfinite(x0) ? x0 - 1 : 0;
        x1 = x0 + 2;
    }
    if (!(y1 > y0)) {
        y0 = std::isfinite(y0) ? y0 - 1 : 0;
        y1 = y0 + 2;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
        out << "<line x1=\"" << px(xv) << "\" y1=\"" << H - mb << "\" x2=\"" << px(xv) << "\" y2=\"" << H - mb + 5
            << "\" stroke=\"black\"/><text x=\"" << px(xv) << "\" y=\"" << H - mb + 18 << "\" text-anchor=\"middle\">"
            << num(xv) << "</text>\n";
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << ml << "\" y2=\"" << py(yv)
            << "\" stroke=\"black\"/><text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
            << num(yv) << "</text>\n";
    }
    out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << esc(x_label) << "</text>\n";
    out << "<text x=\"18\" y=\"" << (mt + H - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (mt + H - mb) / 2 << ")\">" << esc(y_label) << "</text>\n";
    double ly = mt + 15;
    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
            << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "\"/>\n";
        out << "<line x1=\"" << W - mr - 150 << "\" y1=\"" << ly << "\" x2=\"" << W - mr - 125 << "\" y2=\"" << ly
            << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
            << "/><text x=\"" << W - mr - 120 << "\" y=\"" << ly + 4 << "\">" << esc(s.label) << "</text>\n";
        ly += 18;
    }
    out << "</svg>\n";
}

void write_json(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + " is not valid JSON: " + e.what(), e.byte);
    }
}

} // namespace p2dnet
