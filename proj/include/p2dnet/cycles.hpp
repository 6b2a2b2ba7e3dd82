#pragma once

#include "p2dnet/drive_cycle.hpp"
#include "p2dnet/electrochem.hpp"
#include "p2dnet/params.hpp"
#include "p2dnet/random.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace p2dnet {

inline constexpr double kMaxCycleCrate = 6.0;

/// Breakpoints i.i.d. uniform on [0, 6]C. The generator is std::mt19937_64
/// seeded with `seed`; each draw maps the top 53 bits of one output to [0, 1).
DriveCycle random_cycle(std::uint64_t seed, int n_windows);

using GridF = std::array<float, kGridCells>;

/// One 100-s transition. Stored in single precision, as on disk.
struct Sample {
    GridF c_n{}, c_p{};
    float V_t = 0, I_t = 0, I_t100 = 0, fail = 0;
    GridF c_n_next{}, c_p_next{};
    float V_t100 = 0;

    bool operator==(const Sample&) const = default;
};

inline constexpr std::size_t kRecordValues = 4 * kGridCells + 5;
inline constexpr std::size_t kRecordBytes = kRecordValues * 4;

enum class Split { train, test };

struct CycleRecord {
    int id = 0;
    std::uint64_t seed = 0;
    Split split = Split::train;
    int windows = 0;          ///< breakpoints - 1 of the generating cycle
    double crate = 0.0;       ///< constant-current cycles only, else 0
    std::size_t first = 0;    ///< index of its first sample
    std::size_t count = 0;
    bool failed = false;
    int failure_window = -1;
    std::string error;        ///< non-empty when the simulation was skipped

    bool operator==(const CycleRecord&) const = default;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<CycleRecord> cycles;
    std::uint64_t base_seed = 0;
    nlohmann::json config = nlohmann::json::object();

    std::size_t count(Split s) const;
    std::size_t failures() const;
    std::size_t skipped() const;
    /// Samples of one split, cycle records re-based to the new indices.
    Dataset subset(Split s) const;
    /// Hex FNV-1a digest of the serialized config.
    std::string config_digest() const;

    bool operator==(const Dataset&) const = default;
};

struct GenOptions {
    int windows = 40;
    int workers = 1;
    SimOptions sim{};
    /// Called after each finished cycle with (done, total). Serialized.
    std::function<void(std::size_t, std::size_t)> progress;
};

/// Converts a simulated trajectory into consecutive-window samples. A failed
/// window yields one sample with fail = 1 whose targets are the cutoff state.
std::vector<Sample> samples_from_outcome(const SimOutcome& outcome, const DriveCycle& cycle);

/// Train cycles use seeds base_seed + [0, n_train); test cycles continue the
/// sequence. Simulator errors skip the cycle and are counted.
Dataset build_dataset(const ParameterSet& params, int n_train_cycles, int n_test_cycles, std::uint64_t base_seed,
                      const GenOptions& options = {});

/// One full discharge from full charge per C-rate; each discharge is
/// included `repeats` times. Every cycle is tagged train.
Dataset constant_current_dataset(const ParameterSet& params, const std::vector<double>& crates, int repeats,
                                 const GenOptions& options = {});

/// Writes `<dir>/manifest.json` and `<dir>/samples.bin`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

inline constexpr int kDatasetFormatVersion = 1;

std::string fnv1a_hex(const std::string& bytes);

} // namespace p2dnet
