#include "p2dnet/cycles.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

namespace p2dnet {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

DriveCycle random_cycle(std::uint64_t seed, int n_windows) {
    if (n_windows < 2) throw Error("random_cycle needs at least 2 windows");
    std::mt19937_64 g(seed);
    DriveCycle c;
    c.seed = seed;
    c.currents.resize(static_cast<std::size_t>(n_windows) + 1);
    for (auto& v : c.currents) v = kMaxCycleCrate * unit_uniform(g);
    return c;
}

std::size_t Dataset::count(Split s) const {
    std::size_t n = 0;
    for (const auto& c : cycles)
        if (c.split == s) n += c.count;
    return n;
}

std::size_t Dataset::failures() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.fail != 0.0f;
    return n;
}

std::size_t Dataset::skipped() const {
    return static_cast<std::size_t>(std::count_if(cycles.begin(), cycles.end(), [](const CycleRecord& c) { return !c.error.empty(); }));
}

Dataset Dataset::subset(Split s) const {
    Dataset out;
    out.base_seed = base_seed;
    out.config = config;
    for (const auto& c : cycles) {
        if (c.split != s) continue;
        CycleRecord r = c;
        r.first = out.samples.size();
        out.samples.insert(out.samples.end(), samples.begin() + static_cast<std::ptrdiff_t>(c.first),
                           samples.begin() + static_cast<std::ptrdiff_t>(c.first + c.count));
        out.cycles.push_back(std::move(r));
    }
    return out;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string Dataset::config_digest() const { return fnv1a_hex(config.dump()); }

namespace {

void to_float(const Grid& g, GridF& out) {
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(g[i]);
}

json sim_options_json(const SimOptions& o) {
    return {{"dt", o.dt},
            {"min_dt", o.min_dt},
            {"newton_tol", o.newton_tol},
            {"max_newton_iterations", o.max_newton_iterations},
            {"physical_tol", o.physical_tol}};
}

struct CycleResult {
    std::vector<Sample> samples;
    bool failed = false;
    int failure_window = -1;
    std::string error;
};

CycleResult run_cycle(const ParameterSet& params, const DriveCycle& cycle, const SimOptions& sim) {
    CycleResult r;
    try {
        Simulator s(params, sim);
        const auto out = s.simulate(cycle);
        r.samples = samples_from_outcome(out, cycle);
        r.failed = out.failed;
        r.failure_window = out.failure_window.value_or(-1);
    } catch (const std::exception& e) {
        r.samples.clear();
        r.error = e.what();
        if (r.error.empty()) r.error = "unknown simulator error";
    }
    return r;
}

// Simulates every cycle (in parallel) and appends the results in index order.
void assemble(Dataset& ds, const ParameterSet& params, const std::vector<DriveCycle>& cycles,
              std::vector<CycleRecord> records, const GenOptions& opt) {
    std::vector<CycleResult> results(cycles.size());
    std::mutex mu;
    std::size_t done = 0;
    parallel_for(cycles.size(), opt.workers, [&](std::size_t i) {
        results[i] = run_cycle(params, cycles[i], opt.sim);
        if (opt.progress) {
            std::lock_guard lk(mu);
            opt.progress(++done, cycles.size());
        }
    });
    for (std::size_t i = 0; i < cycles.size(); ++i) {
        auto& rec = records[i];
        auto& res = results[i];
        rec.first = ds.samples.size();
        rec.count = res.samples.size();
        rec.failed = res.failed;
        rec.failure_window = res.failure_window;
        rec.error = std::move(res.error);
        ds.samples.insert(ds.samples.end(), res.samples.begin(), res.samples.end());
        ds.cycles.push_back(std::move(rec));
    }
}

} // namespace

std::vector<Sample> samples_from_outcome(const SimOutcome& outcome, const DriveCycle& cycle) {
    std::vector<Sample> out;
    const auto& tr = outcome.trajectory;
    if (tr.size() < 2) return out;
    out.reserve(tr.size() - 1);
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
        const auto& a = tr[k];
        const auto& b = tr[k + 1];
        Sample s;
        to_float(a.c_n, s.c_n);
        to_float(a.c_p, s.c_p);
        s.V_t = static_cast<float>(a.V);
        s.I_t = static_cast<float>(cycle.currents.at(k));
        s.I_t100 = static_cast<float>(cycle.currents.at(k + 1));
        s.fail = (outcome.failed && k + 2 == tr.size()) ? 1.0f : 0.0f;
        to_float(b.c_n, s.c_n_next);
        to_float(b.c_p, s.c_p_next);
        s.V_t100 = static_cast<float>(b.V);
        out.push_back(s);
    }
    return out;
}

Dataset build_dataset(const ParameterSet& params, int n_train_cycles, int n_test_cycles, std::uint64_t base_seed,
                      const GenOptions& options) {
    if (n_train_cycles < 1 || n_test_cycles < 1) throw Error("build_dataset needs at least one train and one test cycle");
    params.validate();
    const int total = n_train_cycles + n_test_cycles;
    std::vector<DriveCycle> cycles;
    std::vector<CycleRecord> records;
    for (int i = 0; i < total; ++i) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
        cycles.push_back(random_cycle(seed, options.windows));
        CycleRecord r;
        r.id = i;
        r.seed = seed;
        r.split = i < n_train_cycles ? Split::train : Split::test;
        r.windows = options.windows;
        records.push_back(r);
    }
    Dataset ds;
    ds.base_seed = base_seed;
    ds.config = {{"kind", "drive_cycle"},
                 {"train_cycles", n_train_cycles},
                 {"test_cycles", n_test_cycles},
                 {"windows", options.windows},
                 {"base_seed", base_seed},
                 {"generator", "mt19937_64, top 53 bits -> [0,1), scaled to [0, 6]C"},
                 {"sim", sim_options_json(options.sim)},
                 {"params_digest", fnv1a_hex(parameters_to_json(params))}};
    assemble(ds, params, cycles, std::move(records), options);
    return ds;
}

Dataset constant_current_dataset(const ParameterSet& params, const std::vector<double>& crates, int repeats,
                                 const GenOptions& options) {
    if (repeats < 1) throw Error("constant_current_dataset needs repeats >= 1");
    params.validate();
    std::vector<DriveCycle> cycles;
    std::vector<CycleRecord> records;
    for (std::size_t i = 0; i < crates.size(); ++i) {
        const double c = crates[i];
        if (!(c > 0.0 && c <= kMaxCycleCrate)) throw Error("constant-current C-rate must lie in (0, 6]");
        // long enough for a full discharge: 1C lasts at most an hour
        const int windows = static_cast<int>(std::ceil(36.0 / c * 1.25)) + 2;
        DriveCycle cyc;
        cyc.currents.assign(static_cast<std::size_t>(windows) + 1, c);
        cycles.push_back(cyc);
        CycleRecord r;
        r.id = static_cast<int>(i);
        r.split = Split::train;
        r.windows = windows;
        r.crate = c;
        records.push_back(r);
    }
    Dataset once;
    assemble(once, params, cycles, std::move(records), options);

    Dataset ds;
    ds.config = {{"kind", "constant_current"},
                 {"crates", crates},
                 {"repeats", repeats},
                 {"sim", sim_options_json(options.sim)},
                 {"params_digest", fnv1a_hex(parameters_to_json(params))}};
    int id = 0;
    for (int r = 0; r < repeats; ++r) {
        for (const auto& c : once.cycles) {
            CycleRecord rec = c;
            rec.id = id++;
            rec.first = ds.samples.size();
            ds.samples.insert(ds.samples.end(), once.samples.begin() + static_cast<std::ptrdiff_t>(c.first),
                              once.samples.begin() + static_cast<std::ptrdiff_t>(c.first + c.count));
            ds.cycles.push_back(std::move(rec));
        }
    }
    return ds;
}

// --- serialization ---

namespace {

void pack(const Sample& s, float* out) {
    float* p = out;
    p = std::copy(s.c_n.begin(), s.c_n.end(), p);
    p = std::copy(s.c_p.begin(), s.c_p.end(), p);
    *p++ = s.V_t;
    *p++ = s.I_t;
    *p++ = s.I_t100;
    *p++ = s.fail;
    p = std::copy(s.c_n_next.begin(), s.c_n_next.end(), p);
    p = std::copy(s.c_p_next.begin(), s.c_p_next.end(), p);
    *p++ = s.V_t100;
}

void unpack(const float* in, Sample& s) {
    const float* p = in;
    std::copy(p, p + kGridCells, s.c_n.begin());
    p += kGridCells;
    std::copy(p, p + kGridCells, s.c_p.begin());
    p += kGridCells;
    s.V_t = *p++;
    s.I_t = *p++;
    s.I_t100 = *p++;
    s.fail = *p++;
    std::copy(p, p + kGridCells, s.c_n_next.begin());
    p += kGridCells;
    std::copy(p, p + kGridCells, s.c_p_next.begin());
    p += kGridCells;
    s.V_t100 = *p;
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class T>
T field(const json& j, const char* key, std::size_t where) {
    if (!j.contains(key)) throw FormatError(std::string("manifest lacks '") + key + "'", where);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string("manifest field '") + key + "' has the wrong type", where);
    }
}

} // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json cycles = json::array();
    for (const auto& c : ds.cycles) {
        json r = {{"id", c.id},
                  {"seed", c.seed},
                  {"split", split_name(c.split)},
                  {"windows", c.windows},
                  {"crate", c.crate},
                  {"first", c.first},
                  {"count", c.count},
                  {"failed", c.failed},
                  {"failure_window", c.failure_window}};
        if (!c.error.empty()) r["error"] = c.error;
        cycles.push_back(std::move(r));
    }
    json m = {{"format_version", kDatasetFormatVersion},
              {"record_values", kRecordValues},
              {"record_bytes", kRecordBytes},
              {"samples", ds.samples.size()},
              {"train_samples", ds.count(Split::train)},
              {"test_samples", ds.count(Split::test)},
              {"failures", ds.failures()},
              {"skipped_cycles", ds.skipped()},
              {"base_seed", ds.base_seed},
              {"config", ds.config},
              {"config_digest", ds.config_digest()},
              {"cycles", std::move(cycles)}};

    std::vector<float> buf(kRecordValues);
    std::ofstream bin(dir / "samples.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw Error("cannot write " + (dir / "samples.bin").string());
    for (const auto& s : ds.samples) {
        pack(s, buf.data());
        bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(kRecordBytes));
    }
    if (!bin) throw Error("write failed: " + (dir / "samples.bin").string());

    std::ofstream man(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!man) throw Error("cannot write " + (dir / "manifest.json").string());
    man << m.dump(1) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const std::string text = read_file(dir / "manifest.json");
    json m;
    try {
        m = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("dataset manifest is not valid JSON: ") + e.what(), e.byte);
    }
    if (!m.is_object()) throw FormatError("dataset manifest must be a JSON object", 0);
    if (field<int>(m, "format_version", 0) != kDatasetFormatVersion)
        throw FormatError("unsupported dataset format version", 0);
    if (field<std::size_t>(m, "record_values", 0) != kRecordValues || field<std::size_t>(m, "record_bytes", 0) != kRecordBytes)
        throw FormatError("unexpected record layout", 0);

    Dataset ds;
    ds.base_seed = field<std::uint64_t>(m, "base_seed", 0);
    ds.config = m.value("config", json::object());
    const auto n = field<std::size_t>(m, "samples", 0);

    const auto& cyc = m.contains("cycles") ? m["cycles"] : json();
    if (!cyc.is_array()) throw FormatError("manifest lacks a 'cycles' array", 0);
    std::size_t expect_first = 0;
    for (const auto& c : cyc) {
        CycleRecord r;
        r.id = field<int>(c, "id", 0);
        r.seed = field<std::uint64_t>(c, "seed", 0);
        const auto sp = field<std::string>(c, "split", 0);
        if (sp != "train" && sp != "test") throw FormatError("cycle split must be train or test", 0);
        r.split = sp == "train" ? Split::train : Split::test;
        r.windows = field<int>(c, "windows", 0);
        r.crate = field<double>(c, "crate", 0);
        r.first = field<std::size_t>(c, "first", 0);
        r.count = field<std::size_t>(c, "count", 0);
        r.failed = field<bool>(c, "failed", 0);
        r.failure_window = field<int>(c, "failure_window", 0);
        r.error = c.value("error", std::string());
        if (r.first != expect_first)
            throw IntegrityError("cycle " + std::to_string(r.id) + " does not start where the previous one ended");
        expect_first += r.count;
        ds.cycles.push_back(std::move(r));
    }
    if (expect_first != n) throw IntegrityError("cycle sample counts do not add up to the manifest total");

    const std::string payload = read_file(dir / "samples.bin");
    if (payload.size() != n * kRecordBytes)
        throw IntegrityError("payload holds " + std::to_string(payload.size()) + " bytes, manifest implies " +
                             std::to_string(n * kRecordBytes));

    ds.samples.resize(n);
    std::vector<float> buf(kRecordValues);
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(buf.data(), payload.data() + i * kRecordBytes, kRecordBytes);
        for (std::size_t k = 0; k < kRecordValues; ++k)
            if (!std::isfinite(buf[k])) throw FormatError("non-finite value in samples.bin", i * kRecordBytes + 4 * k);
        unpack(buf.data(), ds.samples[i]);
        const float f = ds.samples[i].fail;
        if (f != 0.0f && f != 1.0f) throw FormatError("fail flag must be 0 or 1", i * kRecordBytes + 4 * (2 * kGridCells + 3));
    }

    if (ds.count(Split::train) != field<std::size_t>(m, "train_samples", 0) ||
        ds.count(Split::test) != field<std::size_t>(m, "test_samples", 0) ||
        ds.failures() != field<std::size_t>(m, "failures", 0) || ds.skipped() != field<std::size_t>(m, "skipped_cycles", 0))
        throw IntegrityError("manifest counts do not match the payload");
    if (m.contains("config_digest") && m["config_digest"] != ds.config_digest())
        throw IntegrityError("config digest does not match the stored config");
    return ds;
}

} // namespace p2dnet
