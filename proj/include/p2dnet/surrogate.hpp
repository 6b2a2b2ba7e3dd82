#pragma once

#include "p2dnet/cycles.hpp"
#include "p2dnet/electrochem.hpp"
#include "p2dnet/nn.hpp"
#include "p2dnet/params.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace p2dnet {

/// Layer sizes. Convolutions are zero-padded ("same"), each followed by a
/// 3x3 stride-3 pool: 20 -> 6 -> 2 -> 1 (the last pool clips its window).
struct Architecture {
    int c1 = 16, c2 = 32, c3 = 64;
    int k1 = 7, k2 = 5, k3 = 3;
    int reg_hidden1 = 256, reg_hidden2 = 256;
    int fail_hidden1 = 64, fail_hidden2 = 16;
    /// Grids are predicted as increments over the input grids.
    bool residual = true;

    static constexpr int kInput = kGrid;
    static constexpr int kScalars = 3;  // I_t, I_t100, V_t
    static constexpr int kOutputs = 1 + 2 * kGridCells;

    static constexpr int pooled(int n) { return n / 3; }
    static constexpr int pooled_ceil(int n) { return (n + 2) / 3; }
    static constexpr int spatial1() { return pooled(kInput); }
    static constexpr int spatial2() { return pooled(spatial1()); }
    static constexpr int spatial3() { return pooled_ceil(spatial2()); }
    constexpr int conv_features() const { return spatial3() * spatial3() * c3; }
    constexpr int features() const { return conv_features() + kScalars; }

    void validate() const;
    bool operator==(const Architecture&) const = default;
};

static_assert(Architecture::spatial1() == 6 && Architecture::spatial2() == 2 && Architecture::spatial3() == 1);
static_assert(Architecture{}.conv_features() == 64 && Architecture{}.features() == 67);
static_assert(Architecture::kOutputs == 801);

/// Input scaling, frozen into the checkpoint.
struct Normalization {
    double V_lo = 0.0;  ///< maps to 0 (V_cut)
    double V_hi = 1.0;  ///< maps to 1 (fully charged OCV)
    double I_scale = kMaxCycleCrate;
    /// Clip I / I_scale to [0, 1]; currents above the training range are
    /// then seen as 6C.
    bool clamp_current = true;

    bool operator==(const Normalization&) const = default;
};

Normalization normalization_for(const ParameterSet& params);

struct SurrogateWeights {
    Architecture arch;
    Normalization norm;
    std::uint64_t seed = 0;

    Tensor conv1_k, conv1_b, conv2_k, conv2_b, conv3_k, conv3_b;
    Tensor reg1_w, reg1_b, reg2_w, reg2_b, reg3_w, reg3_b;
    Tensor fail1_w, fail1_b, fail2_w, fail2_b, fail3_w, fail3_b;

    static constexpr int kTensorCount = 18;
    static const std::vector<std::string>& tensor_names();
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    /// Shapes the architecture requires, in tensor_names() order.
    static std::vector<std::vector<int>> expected_shapes(const Architecture& arch);

    /// Throws ModelError when a tensor does not fit the architecture.
    void validate() const;
    std::size_t parameter_count() const;

    bool operator==(const SurrogateWeights&) const = default;
};

/// Fan-scaled uniform initialisation; tensor i draws from seed + i, biases 0.
SurrogateWeights init_weights(const Architecture& arch, const Normalization& norm, std::uint64_t seed);

struct SurrogateInput {
    Grid c_n{}, c_p{};
    double I_t = 0, I_t100 = 0, V_t = 0;
};

SurrogateInput input_of(const Sample& s);

struct Prediction {
    double V = 0.0;
    Grid c_n{}, c_p{};
    double p_fail = 0.0;
    int clamped_cells = 0;     ///< input grid entries clipped into [0, 1]
    int clamped_currents = 0;  ///< current features clipped into [0, 1]

    bool operator==(const Prediction&) const = default;
};

Prediction forward(const SurrogateWeights& w, const SurrogateInput& in);
Prediction forward(const SurrogateWeights& w, const Grid& c_n, const Grid& c_p, double I_t, double I_t100, double V_t);
/// Batched evaluation in fixed chunks of 8. Agrees with per-sample forward
/// calls to rounding (GEMM blocking differs), and is bit-reproducible for a
/// given input vector.
std::vector<Prediction> forward_batch(const SurrogateWeights& w, const std::vector<SurrogateInput>& in);

struct LossWeights {
    double w_V = 10.0;
    double w_fail = 1.0;
};

/// Weighted components: conc = mean of the 800 squared grid errors,
/// voltage = w_V (V - V')^2, fail = w_fail (p - fail)^2.
struct LossParts {
    double conc = 0.0, voltage = 0.0, fail = 0.0, total = 0.0;

    LossParts& operator+=(const LossParts& o);
    LossParts scaled(double s) const;
};

LossParts loss(const Prediction& pred, const Sample& target, const LossWeights& lw = {});

struct BatchGradient {
    LossParts loss;              ///< mean over the batch
    std::vector<Tensor> grads;   ///< d(mean total loss)/d(tensor), tensor_names() order
    std::uint64_t signature = 0; ///< hash of ReLU masks and pool choices
};

/// Loss and gradient on a batch, in fixed-size chunks summed in order.
/// Identical for any worker count.
BatchGradient loss_and_gradient(const SurrogateWeights& w, const std::vector<const Sample*>& batch,
                                const LossWeights& lw = {}, int workers = 1, bool need_grad = true);

struct TrainConfig {
    int batch = 64;
    int epochs = 5;
    double lr = 1e-3;
    double decay = 0.5;  ///< per-epoch learning-rate factor
    double w_V = 10.0;
    double w_fail = 1.0;
    std::uint64_t seed = 0;
    int workers = 1;
    Architecture arch{};

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    long steps = 0;
    LossParts mean;  ///< sample-weighted mean over the epoch
};

struct TrainResult {
    SurrogateWeights weights;
    std::vector<EpochStats> history;
    long steps = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on the train split of `data`.
TrainResult train(const Dataset& data, const Normalization& norm, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

inline constexpr int kCheckpointVersion = 1;

/// Magic, header length, JSON manifest, then float32 tensors in manifest order.
void save_checkpoint(const SurrogateWeights& w, const std::filesystem::path& path);
SurrogateWeights load_checkpoint(const std::filesystem::path& path);

/// Rounds every tensor to single precision (what a checkpoint stores).
void round_to_float(SurrogateWeights& w);

} // namespace p2dnet
