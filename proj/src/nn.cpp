#include "p2dnet/nn.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace p2dnet {

namespace {

// Row-by-row accumulation. Eigen's vectorised reductions peel according to
// the buffer address, which makes the last bits depend on the allocation.
void column_sums(const double* m, std::size_t rows, std::size_t cols, double* out) {
    std::fill(out, out + cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;

struct ConvGeom {
    int B, H, W, C;  // input
    int k, cout, pad;
    int Ho, Wo;
    bool batched;

    int rows() const { return B * Ho * Wo; }
    int cols() const { return k * k * C; }
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& kern, Padding pad) {
    ConvGeom g{};
    if (x.rank() == 3) {
        g.batched = false;
        g.B = 1;
        g.H = x.dim(0);
        g.W = x.dim(1);
        g.C = x.dim(2);
    } else if (x.rank() == 4) {
        g.batched = true;
        g.B = x.dim(0);
        g.H = x.dim(1);
        g.W = x.dim(2);
        g.C = x.dim(3);
    } else {
        throw DimensionError("conv2d input must be HxWxC or BxHxWxC, got " + x.shape_string() + " with kernels " +
                             kern.shape_string());
    }
    if (kern.rank() != 4 || kern.dim(0) != kern.dim(1) || kern.dim(2) != g.C)
        throw DimensionError("conv2d kernels " + kern.shape_string() + " do not fit input " + x.shape_string());
    g.k = kern.dim(0);
    g.cout = kern.dim(3);
    if (pad == Padding::same) {
        if (g.k % 2 == 0)
            throw DimensionError("same padding needs an odd kernel, got " + kern.shape_string() + " for input " +
                                 x.shape_string());
        g.pad = g.k / 2;
        g.Ho = g.H;
        g.Wo = g.W;
    } else {
        if (g.H < g.k || g.W < g.k)
            throw DimensionError("conv2d input " + x.shape_string() + " is smaller than kernels " + kern.shape_string());
        g.pad = 0;
        g.Ho = g.H - g.k + 1;
        g.Wo = g.W - g.k + 1;
    }
    return g;
}

std::vector<int> conv_out_shape(const ConvGeom& g) {
    if (g.batched) return {g.B, g.Ho, g.Wo, g.cout};
    return {g.Ho, g.Wo, g.cout};
}

RowMat im2col(const Tensor& x, const ConvGeom& g) {
    RowMat cols(g.rows(), g.cols());
    const double* xd = x.data();
    for (int b = 0; b < g.B; ++b)
        for (int oy = 0; oy < g.Ho; ++oy)
            for (int ox = 0; ox < g.Wo; ++ox) {
                double* row = cols.data() + (static_cast<std::ptrdiff_t>((b * g.Ho + oy) * g.Wo + ox)) * g.cols();
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy + ky - g.pad;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox + kx - g.pad;
                        double* dst = row + (ky * g.k + kx) * g.C;
                        if (iy < 0 || iy >= g.H || ix < 0 || ix >= g.W) {
                            std::fill(dst, dst + g.C, 0.0);
                        } else {
                            const double* src = xd + ((static_cast<std::ptrdiff_t>(b) * g.H + iy) * g.W + ix) * g.C;
                            std::copy(src, src + g.C, dst);
                        }
                    }
                }
            }
    return cols;
}

void col2im_add(const RowMat& cols, const ConvGeom& g, Tensor& dx) {
    double* xd = dx.data();
    for (int b = 0; b < g.B; ++b)
        for (int oy = 0; oy < g.Ho; ++oy)
            for (int ox = 0; ox < g.Wo; ++ox) {
                const double* row = cols.data() + (static_cast<std::ptrdiff_t>((b * g.Ho + oy) * g.Wo + ox)) * g.cols();
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy + ky - g.pad;
                    if (iy < 0 || iy >= g.H) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox + kx - g.pad;
                        if (ix < 0 || ix >= g.W) continue;
                        const double* src = row + (ky * g.k + kx) * g.C;
                        double* dst = xd + ((static_cast<std::ptrdiff_t>(b) * g.H + iy) * g.W + ix) * g.C;
                        for (int c = 0; c < g.C; ++c) dst[c] += src[c];
                    }
                }
            }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Padding pad) {
    const auto g = conv_geometry(x, kernels, pad);
    if (bias.size() != static_cast<std::size_t>(g.cout))
        throw DimensionError("conv2d bias " + bias.shape_string() + " does not match kernels " + kernels.shape_string());
    const RowMat cols = im2col(x, g);
    Tensor y(conv_out_shape(g));
    MapR ym(y.data(), g.rows(), g.cout);
    CMapR km(kernels.data(), g.cols(), g.cout);
    ym.noalias() = cols * km;
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), g.cout);
    return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& kernels, const Tensor& dy, Padding pad, bool need_dx) {
    const auto g = conv_geometry(x, kernels, pad);
    if (dy.shape() != conv_out_shape(g))
        throw DimensionError("conv2d output gradient " + dy.shape_string() + " does not match output " +
                             shape_string(conv_out_shape(g)));
    const RowMat cols = im2col(x, g);
    CMapR dym(dy.data(), g.rows(), g.cout);
    CMapR km(kernels.data(), g.cols(), g.cout);
    ConvGrads out;
    out.dkernels = Tensor(kernels.shape());
    MapR(out.dkernels.data(), g.cols(), g.cout).noalias() = cols.transpose() * dym;
    out.dbias = Tensor({g.cout});
    column_sums(dy.data(), g.rows(), g.cout, out.dbias.data());
    if (need_dx) {
        const RowMat dcols = dym * km.transpose();
        out.dx = Tensor(x.shape());
        col2im_add(dcols, g, out.dx);
    }
    return out;
}

Pooled maxpool3(const Tensor& x, PoolMode mode) {
    int B, H, W, C;
    if (x.rank() == 3) {
        B = 1;
        H = x.dim(0);
        W = x.dim(1);
        C = x.dim(2);
    } else if (x.rank() == 4) {
        B = x.dim(0);
        H = x.dim(1);
        W = x.dim(2);
        C = x.dim(3);
    } else {
        throw DimensionError("maxpool3 input must be HxWxC or BxHxWxC, got " + x.shape_string());
    }
    const bool clip = mode == PoolMode::ceil;
    if (!clip && (H < 3 || W < 3)) throw DimensionError("maxpool3 input " + x.shape_string() + " is smaller than 3x3");
    if (H < 1 || W < 1) throw DimensionError("maxpool3 input " + x.shape_string() + " is empty");
    const int Ho = clip ? (H + 2) / 3 : H / 3;
    const int Wo = clip ? (W + 2) / 3 : W / 3;

    Pooled p;
    p.input_shape = x.shape();
    p.out = x.rank() == 4 ? Tensor({B, Ho, Wo, C}) : Tensor({Ho, Wo, C});
    p.argmax.resize(p.out.size());
    const double* xd = x.data();
    std::size_t o = 0;
    for (int b = 0; b < B; ++b)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                for (int c = 0; c < C; ++c, ++o) {
                    int best = -1;
                    double bv = 0.0;
                    for (int dy = 0; dy < 3; ++dy) {
                        const int iy = 3 * oy + dy;
                        if (iy >= H) break;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int ix = 3 * ox + dx;
                            if (ix >= W) break;
                            const int idx = ((b * H + iy) * W + ix) * C + c;
                            if (best < 0 || xd[idx] > bv) {
                                best = idx;
                                bv = xd[idx];
                            }
                        }
                    }
                    p.out[o] = bv;
                    p.argmax[o] = best;
                }
    return p;
}

Tensor maxpool3_backward(const Pooled& pooled, const Tensor& dy) {
    require_same_shape(pooled.out, dy, "maxpool3_backward");
    Tensor dx(pooled.input_shape);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[static_cast<std::size_t>(pooled.argmax[i])] += dy[i];
    return dx;
}

namespace {

struct DenseGeom {
    int B, n, m;
    bool batched;
};

DenseGeom dense_geometry(const Tensor& x, const Tensor& w) {
    if (w.rank() != 2) throw DimensionError("dense weights must be m x n, got " + w.shape_string());
    DenseGeom g{};
    if (x.rank() == 1) {
        g.B = 1;
        g.n = x.dim(0);
        g.batched = false;
    } else if (x.rank() == 2) {
        g.B = x.dim(0);
        g.n = x.dim(1);
        g.batched = true;
    } else {
        throw DimensionError("dense input must be n or B x n, got " + x.shape_string() + " with weights " +
                             w.shape_string());
    }
    if (w.dim(1) != g.n)
        throw DimensionError("dense input " + x.shape_string() + " does not match weights " + w.shape_string());
    g.m = w.dim(0);
    return g;
}

} // namespace

Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    const auto g = dense_geometry(x, weights);
    if (bias.size() != static_cast<std::size_t>(g.m))
        throw DimensionError("dense bias " + bias.shape_string() + " does not match weights " + weights.shape_string());
    Tensor y(g.batched ? std::vector<int>{g.B, g.m} : std::vector<int>{g.m});
    MapR ym(y.data(), g.B, g.m);
    ym.noalias() = CMapR(x.data(), g.B, g.n) * CMapR(weights.data(), g.m, g.n).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), g.m);
    return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& weights, const Tensor& dy) {
    const auto g = dense_geometry(x, weights);
    const std::vector<int> yshape = g.batched ? std::vector<int>{g.B, g.m} : std::vector<int>{g.m};
    if (dy.shape() != yshape)
        throw DimensionError("dense output gradient " + dy.shape_string() + " does not match output " +
                             shape_string(yshape));
    CMapR dym(dy.data(), g.B, g.m);
    DenseGrads out;
    out.dx = Tensor(x.shape());
    MapR(out.dx.data(), g.B, g.n).noalias() = dym * CMapR(weights.data(), g.m, g.n);
    out.dweights = Tensor(weights.shape());
    MapR(out.dweights.data(), g.m, g.n).noalias() = dym.transpose() * CMapR(x.data(), g.B, g.n);
    out.dbias = Tensor({g.m});
    column_sums(dy.data(), g.B, g.m, out.dbias.data());
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    require_same_shape(x, dy, "relu_backward");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(x[i] > 0.0)) dx[i] = 0.0;
    return dx;
}

double sigmoid(double x) {
    // split by sign so exp never overflows
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.values()) v = sigmoid(v);
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
    require_same_shape(y, dy, "sigmoid_backward");
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
    return dx;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& st,
               const std::vector<std::string>& names) {
    auto name = [&](std::size_t i) { return i < names.size() ? names[i] : "tensor #" + std::to_string(i); };
    if (params.size() != grads.size())
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                             std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape())
            throw DimensionError("adam_step: " + name(i) + " has shape " + params[i]->shape_string() +
                                 " but its gradient " + grads[i]->shape_string());
        if (!grads[i]->all_finite()) throw OptimizerError("non-finite gradient in " + name(i));
    }
    if (st.m.empty()) {
        for (auto* p : params) {
            st.m.emplace_back(p->shape());
            st.v.emplace_back(p->shape());
        }
    }
    if (st.m.size() != params.size()) throw DimensionError("adam_step: optimizer state tracks a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (st.m[i].shape() != params[i]->shape())
            throw DimensionError("adam_step: moment shape " + st.m[i].shape_string() + " does not match " + name(i) +
                                 " " + params[i]->shape_string());

    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i]->data();
        const double* g = grads[i]->data();
        double* m = st.m[i].data();
        double* v = st.v[i].data();
        for (std::size_t k = 0; k < params[i]->size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            p[k] -= st.alpha * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
        }
    }
}

void init_uniform_fan(Tensor& t, int fan_in, int fan_out, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.values()) v = a * (2.0 * unit_uniform(g) - 1.0);
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
}

constexpr double kRoundoffUlps = 4.0;

GradCheckReport grad_check(const std::function<double()>& f, const std::vector<GradTarget>& targets,
                           const GradCheckOptions& opt) {
    GradCheckReport rep;
    rep.tolerance = opt.tolerance;
    f();
    const std::uint64_t sig0 = opt.signature ? opt.signature() : 0;
    std::mt19937_64 g(opt.seed);
    for (const auto& t : targets) {
        if (t.value->shape() != t.analytic->shape())
            throw DimensionError("grad_check: " + t.name + " has shape " + t.value->shape_string() +
                                 " but its gradient " + t.analytic->shape_string());
        std::vector<std::size_t> idx(t.value->size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (opt.max_entries && idx.size() > opt.max_entries) {
            shuffle_in_place(idx, g);
            idx.resize(opt.max_entries);
            std::sort(idx.begin(), idx.end());
        }
        GradCheckEntry e;
        e.name = t.name;
        for (std::size_t i : idx) {
            double& x = (*t.value)[i];
            const double x0 = x;
            x = x0 + opt.step;
            const double fp = f();
            const std::uint64_t sp = opt.signature ? opt.signature() : 0;
            x = x0 - opt.step;
            const double fm = f();
            const std::uint64_t sm = opt.signature ? opt.signature() : 0;
            x = x0;
            if (sp != sig0 || sm != sig0) {
                ++e.skipped;
                continue;
            }
            const double num = (fp - fm) / (2.0 * opt.step);
            const double ana = (*t.analytic)[i];
            // the quotient itself is only good to about eps |f| / h, so that
            // much disagreement is not charged to the analytic gradient
            const double resolution =
                kRoundoffUlps * std::numeric_limits<double>::epsilon() * (std::abs(fp) + std::abs(fm)) / (2.0 * opt.step);
            const double diff = std::abs(ana - num);
            e.within_roundoff += diff <= resolution;
            const double err = std::max(0.0, diff - resolution) / std::max({std::abs(ana), std::abs(num), opt.floor});
            e.max_rel_error = std::max(e.max_rel_error, err);
            ++e.checked;
        }
        if (e.max_rel_error > opt.tolerance) rep.passed = false;
        rep.tensors.push_back(std::move(e));
    }
    f();  // leave any caches at the unperturbed point
    return rep;
}

} // namespace p2dnet
