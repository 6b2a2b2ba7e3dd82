#pragma once

#include "p2dnet/cycles.hpp"
#include "p2dnet/electrochem.hpp"
#include "p2dnet/surrogate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace p2dnet {

/// Anything that maps one 100-s input to a prediction. Must be callable
/// concurrently from several threads.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Prediction predict(const SurrogateInput& in) const = 0;
    virtual std::vector<Prediction> predict_batch(const std::vector<SurrogateInput>& in) const;
};

class SurrogatePredictor final : public Predictor {
public:
    // owns a copy, so a temporary (e.g. load_checkpoint(...)) is fine
    explicit SurrogatePredictor(SurrogateWeights w) : w_(std::move(w)) { w_.validate(); }
    const SurrogateWeights& weights() const { return w_; }
    Prediction predict(const SurrogateInput& in) const override { return forward(w_, in); }
    std::vector<Prediction> predict_batch(const std::vector<SurrogateInput>& in) const override {
        return forward_batch(w_, in);
    }

private:
    SurrogateWeights w_;
};

/// Oracle that returns the recorded target for every input it has seen.
/// Inputs are matched after rounding to single precision, which is how
/// samples are stored.
class ReplayPredictor final : public Predictor {
public:
    ReplayPredictor() = default;
    explicit ReplayPredictor(const Dataset& ds);

    void add(const Sample& s);
    void add(const SurrogateInput& in, const Prediction& out);
    std::size_t size() const { return table_.size(); }

    /// Throws ModelError for an input it has not seen.
    Prediction predict(const SurrogateInput& in) const override;

    static std::uint64_t key(const SurrogateInput& in);

private:
    std::unordered_map<std::uint64_t, Prediction> table_;
};

struct MetricTriple {
    double l2 = 0.0;    ///< mean squared error
    double l1 = 0.0;    ///< mean absolute error
    double linf = 0.0;  ///< max absolute error

    bool operator==(const MetricTriple&) const = default;
};

/// Per-cycle triples combined two ways.
struct QuantityMetrics {
    MetricTriple mean;  ///< average of the per-cycle triples
    MetricTriple max;   ///< component-wise max over cycles

    bool operator==(const QuantityMetrics&) const = default;
};

/// Failure flags at one threshold. For K-step reports counts are per cycle:
/// fn = true failure with no flag at or before it, fp = a flag strictly
/// before the true failure window (any flag if the cycle never fails), hit =
/// the rest. One-step reports count intervals instead.
struct ThresholdRow {
    double threshold = 0.0;
    std::size_t fn = 0, fp = 0, hit = 0, evaluations = 0;
    double fn_pct = 0.0, fp_pct = 0.0;

    bool operator==(const ThresholdRow&) const = default;
};

struct EvalReport {
    std::string kind;  ///< "one_step" or "k_step"
    QuantityMetrics voltage, c_n, c_p;
    std::vector<ThresholdRow> confusion;
    std::size_t cycles = 0;
    std::size_t intervals = 0;
    std::size_t clamped_cells = 0;

    /// Mean-of-maxima <= max, l1 <= linf, rows consistent. Returns the first
    /// violated rule or an empty string.
    std::string check() const;

    bool operator==(const EvalReport&) const = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

inline const std::vector<double> kDefaultThresholds = {0.1, 0.2, 0.3, 0.4, 0.5};

struct EvalOptions {
    std::vector<double> thresholds = kDefaultThresholds;
    int workers = 1;
};

/// Evaluates every test-split sample with its true inputs.
EvalReport one_step_eval(const Predictor& model, const Dataset& data, const EvalOptions& opt = {});

struct RolloutOptions {
    double fail_threshold = 0.5;
    bool stop_on_failure = true;
    int max_windows = -1;  ///< < 0: the whole cycle
};

struct Rollout {
    std::vector<double> V;  ///< V[k]: predicted voltage at 100 (k + 1) s
    std::vector<Grid> c_n, c_p;
    std::vector<double> p_fail;
    std::optional<int> failure_window;
    std::size_t clamped_cells = 0;
    std::size_t clamped_currents = 0;

    int windows() const { return static_cast<int>(V.size()); }
    bool operator==(const Rollout&) const = default;
};

/// Feeds its own predictions back as inputs, one window per cycle segment.
Rollout rollout(const Predictor& model, const DriveCycle& cycle, const Grid& c_n0, const Grid& c_p0, double V0,
                const RolloutOptions& opt = {});
Rollout rollout(const Predictor& model, const DriveCycle& cycle, const CellState& init, const RolloutOptions& opt = {});

/// The drive cycle that produced a dataset cycle record.
DriveCycle cycle_of(const CycleRecord& rec);

struct VoltageTrace {
    int cycle_id = 0;
    std::vector<double> t, V_true, V_pred;
};

/// Rolls out each test cycle from its first recorded state, without early
/// stopping, and scores windows up to the true trajectory length. Confusion
/// rows use the per-cycle failure definitions. Traces of the first
/// `trace_count` cycles are returned through `traces` when given.
EvalReport kstep_eval(const Predictor& model, const Dataset& data, const EvalOptions& opt = {},
                      std::vector<VoltageTrace>* traces = nullptr, std::size_t trace_count = 0);

std::vector<ThresholdRow> failure_threshold_table(const Predictor& model, const Dataset& data,
                                                  const std::vector<double>& thresholds = kDefaultThresholds,
                                                  int workers = 1);

/// Per-cycle flag classification shared by kstep_eval and the threshold
/// table. `true_window` < 0 means the cycle never failed.
enum class FlagOutcome { hit, fn, fp };
FlagOutcome classify_flag(int true_window, std::optional<int> flag_window);

struct BenchResult {
    double simulator_seconds = 0.0;
    double rollout_seconds = 0.0;
    double ratio = 0.0;
    int windows = 0;
    int repetitions = 0;
    nlohmann::json machine;
};

/// Median wall time of `repetitions` runs of each, after one warm-up run.
/// The rollout covers as many windows as the simulated trajectory.
BenchResult bench_compare(const Predictor& model, const ParameterSet& params, const DriveCycle& cycle,
                          int repetitions = 5);

nlohmann::json machine_descriptor();

void write_trace_csv(const VoltageTrace& tr, const std::filesystem::path& path);

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    bool dashed = false;
};

/// Static line plot.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<SvgSeries>& series);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

} // namespace p2dnet
