#pragma once

#include "p2dnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace p2dnet {

enum class Padding { valid, same };

/// floor drops remainder rows/columns; ceil pools them in a clipped window.
enum class PoolMode { floor, ceil };

// ---- convolution ----
// x: H x W x Cin or B x H x W x Cin; kernels: k x k x Cin x Cout; bias: Cout.
// Stride 1. `same` zero-pads k/2 on every side and needs odd k.

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Padding pad = Padding::valid);

struct ConvGrads {
    Tensor dx;  ///< empty when not requested
    Tensor dkernels;
    Tensor dbias;
};

ConvGrads conv2d_backward(const Tensor& x, const Tensor& kernels, const Tensor& dy, Padding pad = Padding::valid,
                          bool need_dx = true);

// ---- 3x3 max pooling, stride 3 ----

struct Pooled {
    Tensor out;
    std::vector<int> argmax;  ///< flat input index of each output's maximum
    std::vector<int> input_shape;
};

Pooled maxpool3(const Tensor& x, PoolMode mode = PoolMode::floor);
/// Routes each output gradient to its argmax; ties went to the first index.
Tensor maxpool3_backward(const Pooled& pooled, const Tensor& dy);

// ---- fully connected ----
// x: n or B x n; weights: m x n; bias: m.

Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
    Tensor dx;
    Tensor dweights;
    Tensor dbias;
};

DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& dy);

// ---- activations ----

Tensor relu(const Tensor& x);
/// Gradient is 0 where x <= 0 (subgradient 0 at the kink).
Tensor relu_backward(const Tensor& x, const Tensor& dy);
Tensor sigmoid(const Tensor& x);
/// Takes the forward output y = sigmoid(x).
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

double sigmoid(double x);

// ---- ADAM ----

struct AdamState {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Tensor> m, v;
};

/// Bias-corrected ADAM update of every params[i] with grads[i]. Moments are
/// allocated on the first call. `names` (optional) label errors.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
               const std::vector<std::string>& names = {});

// ---- initialisation ----

/// Uniform on +-sqrt(6 / (fan_in + fan_out)), drawn from mt19937_64(seed).
void init_uniform_fan(Tensor& t, int fan_in, int fan_out, std::uint64_t seed);

// ---- finite-difference gradient check ----

struct GradTarget {
    std::string name;
    Tensor* value;           ///< perturbed in place, restored afterwards
    const Tensor* analytic;  ///< gradient of f with respect to *value
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Denominator floor: error = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    /// Check at most this many entries per tensor (0 = all), chosen by seed.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
    /// Optional piecewise-linearity signature (ReLU masks, pool argmaxes).
    /// Entries whose +-step evaluations change it straddle a kink and are
    /// skipped.
    std::function<std::uint64_t()> signature;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    /// Entries whose |analytic - numeric| is within the roundoff of the
    /// difference quotient, 4 eps (|f+| + |f-|) / 2h. That allowance is
    /// subtracted before the relative error is formed.
    std::size_t within_roundoff = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;
    double tolerance = 0.0;
    bool passed = true;

    double max_rel_error() const;
};

/// Central differences of the scalar function f against the analytic
/// gradients.
GradCheckReport grad_check(const std::function<double()>& f, const std::vector<GradTarget>& targets,
                           const GradCheckOptions& options = {});

} // namespace p2dnet
