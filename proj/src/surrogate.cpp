#include "p2dnet/surrogate.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/parallel.hpp"
#include "p2dnet/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace p2dnet {

using nlohmann::json;

namespace {

// Samples per forward/backward block. Fixed so that sums never depend on how
// blocks are spread over threads.
constexpr int kChunk = 8;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

void Architecture::validate() const {
    auto pos = [](int v, const char* what) {
        if (v < 1) throw ModelError(std::string("architecture: ") + what + " must be positive");
    };
    pos(c1, "c1");
    pos(c2, "c2");
    pos(c3, "c3");
    pos(reg_hidden1, "reg_hidden1");
    pos(reg_hidden2, "reg_hidden2");
    pos(fail_hidden1, "fail_hidden1");
    pos(fail_hidden2, "fail_hidden2");
    for (int k : {k1, k2, k3})
        if (k < 1 || k % 2 == 0) throw ModelError("architecture: kernel sizes must be odd and positive");
}

Normalization normalization_for(const ParameterSet& params) {
    Normalization n;
    n.V_lo = params.V_cut;
    n.V_hi = params.ocv_full();
    return n;
}

const std::vector<std::string>& SurrogateWeights::tensor_names() {
    static const std::vector<std::string> names = {
        "conv1_k", "conv1_b", "conv2_k", "conv2_b", "conv3_k", "conv3_b", "reg1_w",  "reg1_b",  "reg2_w",
        "reg2_b",  "reg3_w",  "reg3_b",  "fail1_w", "fail1_b", "fail2_w", "fail2_b", "fail3_w", "fail3_b"};
    return names;
}

std::vector<Tensor*> SurrogateWeights::tensors() {
    return {&conv1_k, &conv1_b, &conv2_k, &conv2_b, &conv3_k, &conv3_b, &reg1_w,  &reg1_b,  &reg2_w,
            &reg2_b,  &reg3_w,  &reg3_b,  &fail1_w, &fail1_b, &fail2_w, &fail2_b, &fail3_w, &fail3_b};
}

std::vector<const Tensor*> SurrogateWeights::tensors() const {
    auto* self = const_cast<SurrogateWeights*>(this);
    auto v = self->tensors();
    return {v.begin(), v.end()};
}

std::vector<std::vector<int>> SurrogateWeights::expected_shapes(const Architecture& a) {
    const int f = a.features();
    return {{a.k1, a.k1, 2, a.c1},
            {a.c1},
            {a.k2, a.k2, a.c1, a.c2},
            {a.c2},
            {a.k3, a.k3, a.c2, a.c3},
            {a.c3},
            {a.reg_hidden1, f},
            {a.reg_hidden1},
            {a.reg_hidden2, a.reg_hidden1},
            {a.reg_hidden2},
            {Architecture::kOutputs, a.reg_hidden2},
            {Architecture::kOutputs},
            {a.fail_hidden1, f},
            {a.fail_hidden1},
            {a.fail_hidden2, a.fail_hidden1},
            {a.fail_hidden2},
            {1, a.fail_hidden2},
            {1}};
}

void SurrogateWeights::validate() const {
    arch.validate();
    const auto shapes = expected_shapes(arch);
    const auto ts = tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if (ts[i]->shape() != shapes[i])
            throw ModelError("tensor " + tensor_names()[i] + " has shape " + ts[i]->shape_string() +
                             ", architecture needs " + shape_string(shapes[i]));
        if (!ts[i]->all_finite()) throw ModelError("tensor " + tensor_names()[i] + " holds a non-finite value");
    }
    if (!(norm.V_hi > norm.V_lo) || !(norm.I_scale > 0.0)) throw ModelError("invalid normalization constants");
}

std::size_t SurrogateWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
}

SurrogateWeights init_weights(const Architecture& arch, const Normalization& norm, std::uint64_t seed) {
    arch.validate();
    SurrogateWeights w;
    w.arch = arch;
    w.norm = norm;
    w.seed = seed;
    const auto shapes = SurrogateWeights::expected_shapes(arch);
    auto ts = w.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        *ts[i] = Tensor(shapes[i]);
        const auto& s = shapes[i];
        if (s.size() == 4) {
            // receptive field times channels on each side
            init_uniform_fan(*ts[i], s[0] * s[1] * s[2], s[0] * s[1] * s[3], seed + i);
        } else if (s.size() == 2) {
            init_uniform_fan(*ts[i], s[1], s[0], seed + i);
        }
    }
    return w;
}

SurrogateInput input_of(const Sample& s) {
    SurrogateInput in;
    for (int i = 0; i < kGridCells; ++i) {
        in.c_n[i] = s.c_n[i];
        in.c_p[i] = s.c_p[i];
    }
    in.I_t = s.I_t;
    in.I_t100 = s.I_t100;
    in.V_t = s.V_t;
    return in;
}

// ---------------------------------------------------------------------------
// forward / backward on one chunk

namespace {

struct Pass {
    int B = 0;
    Tensor x0;  // B x 20 x 20 x 2, clamped
    Tensor a1, a2, a3;
    Pooled p1, p2, p3;
    Tensor feat;
    Tensor ra1, rh1, ra2, rh2, out;
    Tensor fa1, fh1, fa2, fh2, z;
    std::vector<double> p;
    std::vector<int> clamped_cells, clamped_currents;
};

double clamp_count(double v, double lo, double hi, int& count) {
    if (v < lo) {
        ++count;
        return lo;
    }
    if (v > hi) {
        ++count;
        return hi;
    }
    return v;
}

Pass run_forward(const SurrogateWeights& w, const std::vector<const SurrogateInput*>& in) {
    const auto& a = w.arch;
    const auto& nm = w.norm;
    Pass ps;
    ps.B = static_cast<int>(in.size());
    const int B = ps.B;
    ps.clamped_cells.assign(in.size(), 0);
    ps.clamped_currents.assign(in.size(), 0);

    ps.x0 = Tensor({B, kGrid, kGrid, 2});
    for (int b = 0; b < B; ++b) {
        double* x = ps.x0.data() + static_cast<std::size_t>(b) * kGridCells * 2;
        for (int i = 0; i < kGridCells; ++i) {
            x[2 * i] = clamp_count(in[b]->c_n[i], 0.0, 1.0, ps.clamped_cells[b]);
            x[2 * i + 1] = clamp_count(in[b]->c_p[i], 0.0, 1.0, ps.clamped_cells[b]);
        }
    }

    ps.a1 = conv2d(ps.x0, w.conv1_k, w.conv1_b, Padding::same);
    ps.p1 = maxpool3(relu(ps.a1));
    ps.a2 = conv2d(ps.p1.out, w.conv2_k, w.conv2_b, Padding::same);
    ps.p2 = maxpool3(relu(ps.a2));
    ps.a3 = conv2d(ps.p2.out, w.conv3_k, w.conv3_b, Padding::same);
    ps.p3 = maxpool3(relu(ps.a3), PoolMode::ceil);

    const int cf = a.conv_features();
    const int nf = a.features();
    ps.feat = Tensor({B, nf});
    for (int b = 0; b < B; ++b) {
        double* f = ps.feat.data() + static_cast<std::size_t>(b) * nf;
        std::copy_n(ps.p3.out.data() + static_cast<std::size_t>(b) * cf, cf, f);
        double i0 = in[b]->I_t / nm.I_scale;
        double i1 = in[b]->I_t100 / nm.I_scale;
        if (nm.clamp_current) {
            i0 = clamp_count(i0, 0.0, 1.0, ps.clamped_currents[b]);
            i1 = clamp_count(i1, 0.0, 1.0, ps.clamped_currents[b]);
        }
        f[cf] = i0;
        f[cf + 1] = i1;
        f[cf + 2] = (in[b]->V_t - nm.V_lo) / (nm.V_hi - nm.V_lo);
    }

    ps.ra1 = dense(ps.feat, w.reg1_w, w.reg1_b);
    ps.rh1 = relu(ps.ra1);
    ps.ra2 = dense(ps.rh1, w.reg2_w, w.reg2_b);
    ps.rh2 = relu(ps.ra2);
    ps.out = dense(ps.rh2, w.reg3_w, w.reg3_b);

    ps.fa1 = dense(ps.feat, w.fail1_w, w.fail1_b);
    ps.fh1 = relu(ps.fa1);
    ps.fa2 = dense(ps.fh1, w.fail2_w, w.fail2_b);
    ps.fh2 = relu(ps.fa2);
    ps.z = dense(ps.fh2, w.fail3_w, w.fail3_b);
    ps.p.resize(in.size());
    for (int b = 0; b < B; ++b) ps.p[b] = sigmoid(ps.z[b]);
    return ps;
}

Prediction prediction_of(const SurrogateWeights& w, const Pass& ps, int b) {
    const auto& nm = w.norm;
    Prediction pr;
    const double* o = ps.out.data() + static_cast<std::size_t>(b) * Architecture::kOutputs;
    const double* x = ps.x0.data() + static_cast<std::size_t>(b) * kGridCells * 2;
    pr.V = nm.V_lo + o[0] * (nm.V_hi - nm.V_lo);
    for (int i = 0; i < kGridCells; ++i) {
        pr.c_n[i] = o[1 + i] + (w.arch.residual ? x[2 * i] : 0.0);
        pr.c_p[i] = o[1 + kGridCells + i] + (w.arch.residual ? x[2 * i + 1] : 0.0);
    }
    pr.p_fail = ps.p[b];
    pr.clamped_cells = ps.clamped_cells[b];
    pr.clamped_currents = ps.clamped_currents[b];
    return pr;
}

std::uint64_t pass_signature(const Pass& ps) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* t : {&ps.a1, &ps.a2, &ps.a3, &ps.ra1, &ps.ra2, &ps.fa1, &ps.fa2}) {
        std::uint64_t word = 0;
        int bits = 0;
        for (double v : t->values()) {
            word = (word << 1) | (v > 0.0 ? 1u : 0u);
            if (++bits == 64) {
                h = fnv_mix(h, word);
                word = 0;
                bits = 0;
            }
        }
        h = fnv_mix(h, word);
    }
    for (const Pooled* p : {&ps.p1, &ps.p2, &ps.p3})
        for (int i : p->argmax) h = fnv_mix(h, static_cast<std::uint64_t>(i));
    return h;
}

// dout: B x 801 gradient on the raw regression output; dz: B gradient on the
// failure logit.
std::vector<Tensor> run_backward(const SurrogateWeights& w, const Pass& ps, const Tensor& dout, const Tensor& dz) {
    std::vector<Tensor> g(SurrogateWeights::kTensorCount);

    auto r3 = dense_backward(ps.rh2, w.reg3_w, dout);
    g[10] = std::move(r3.dweights);
    g[11] = std::move(r3.dbias);
    auto r2 = dense_backward(ps.rh1, w.reg2_w, relu_backward(ps.ra2, r3.dx));
    g[8] = std::move(r2.dweights);
    g[9] = std::move(r2.dbias);
    auto r1 = dense_backward(ps.feat, w.reg1_w, relu_backward(ps.ra1, r2.dx));
    g[6] = std::move(r1.dweights);
    g[7] = std::move(r1.dbias);

    auto f3 = dense_backward(ps.fh2, w.fail3_w, dz);
    g[16] = std::move(f3.dweights);
    g[17] = std::move(f3.dbias);
    auto f2 = dense_backward(ps.fh1, w.fail2_w, relu_backward(ps.fa2, f3.dx));
    g[14] = std::move(f2.dweights);
    g[15] = std::move(f2.dbias);
    auto f1 = dense_backward(ps.feat, w.fail1_w, relu_backward(ps.fa1, f2.dx));
    g[12] = std::move(f1.dweights);
    g[13] = std::move(f1.dbias);

    const int cf = w.arch.conv_features();
    const int nf = w.arch.features();
    Tensor dp3(ps.p3.out.shape());
    for (int b = 0; b < ps.B; ++b)
        for (int i = 0; i < cf; ++i) {
            const std::size_t k = static_cast<std::size_t>(b) * nf + i;
            dp3[static_cast<std::size_t>(b) * cf + i] = r1.dx[k] + f1.dx[k];
        }

    auto c3 = conv2d_backward(ps.p2.out, w.conv3_k, relu_backward(ps.a3, maxpool3_backward(ps.p3, dp3)), Padding::same);
    g[4] = std::move(c3.dkernels);
    g[5] = std::move(c3.dbias);
    auto c2 = conv2d_backward(ps.p1.out, w.conv2_k, relu_backward(ps.a2, maxpool3_backward(ps.p2, c3.dx)), Padding::same);
    g[2] = std::move(c2.dkernels);
    g[3] = std::move(c2.dbias);
    auto c1 = conv2d_backward(ps.x0, w.conv1_k, relu_backward(ps.a1, maxpool3_backward(ps.p1, c2.dx)), Padding::same,
                              false);
    g[0] = std::move(c1.dkernels);
    g[1] = std::move(c1.dbias);
    return g;
}

} // namespace

Prediction forward(const SurrogateWeights& w, const SurrogateInput& in) {
    w.validate();
    const Pass ps = run_forward(w, {&in});
    return prediction_of(w, ps, 0);
}

Prediction forward(const SurrogateWeights& w, const Grid& c_n, const Grid& c_p, double I_t, double I_t100, double V_t) {
    SurrogateInput in;
    in.c_n = c_n;
    in.c_p = c_p;
    in.I_t = I_t;
    in.I_t100 = I_t100;
    in.V_t = V_t;
    return forward(w, in);
}

std::vector<Prediction> forward_batch(const SurrogateWeights& w, const std::vector<SurrogateInput>& in) {
    w.validate();
    std::vector<Prediction> out;
    out.reserve(in.size());
    for (std::size_t s = 0; s < in.size(); s += kChunk) {
        std::vector<const SurrogateInput*> chunk;
        for (std::size_t i = s; i < std::min(in.size(), s + kChunk); ++i) chunk.push_back(&in[i]);
        const Pass ps = run_forward(w, chunk);
        for (int b = 0; b < ps.B; ++b) out.push_back(prediction_of(w, ps, b));
    }
    return out;
}

LossParts& LossParts::operator+=(const LossParts& o) {
    conc += o.conc;
    voltage += o.voltage;
    fail += o.fail;
    total += o.total;
    return *this;
}

LossParts LossParts::scaled(double s) const { return {conc * s, voltage * s, fail * s, total * s}; }

LossParts loss(const Prediction& pred, const Sample& t, const LossWeights& lw) {
    LossParts l;
    double se = 0.0;
    for (int i = 0; i < kGridCells; ++i) {
        const double dn = pred.c_n[i] - t.c_n_next[i];
        const double dp = pred.c_p[i] - t.c_p_next[i];
        se += dn * dn + dp * dp;
    }
    l.conc = se / (2.0 * kGridCells);
    const double dv = pred.V - t.V_t100;
    l.voltage = lw.w_V * dv * dv;
    const double df = pred.p_fail - t.fail;
    l.fail = lw.w_fail * df * df;
    l.total = l.conc + l.voltage + l.fail;
    return l;
}

BatchGradient loss_and_gradient(const SurrogateWeights& w, const std::vector<const Sample*>& batch,
                                const LossWeights& lw, int workers, bool need_grad) {
    if (batch.empty()) throw TrainingError("empty batch");
    w.validate();
    const std::size_t n = batch.size();
    const std::size_t nchunks = (n + kChunk - 1) / kChunk;
    const double inv = 1.0 / static_cast<double>(n);
    const double vr = w.norm.V_hi - w.norm.V_lo;

    struct ChunkOut {
        LossParts loss;
        std::vector<Tensor> grads;
        std::uint64_t sig = 0;
    };
    std::vector<ChunkOut> outs(nchunks);

    parallel_for(nchunks, workers, [&](std::size_t c) {
        const std::size_t s = c * kChunk;
        const std::size_t e = std::min(n, s + kChunk);
        std::vector<SurrogateInput> ins;
        ins.reserve(e - s);
        for (std::size_t i = s; i < e; ++i) ins.push_back(input_of(*batch[i]));
        std::vector<const SurrogateInput*> ptr;
        for (const auto& x : ins) ptr.push_back(&x);

        const Pass ps = run_forward(w, ptr);
        const int B = ps.B;
        Tensor dout({B, Architecture::kOutputs});
        Tensor dz({B, 1});
        auto& co = outs[c];
        for (int b = 0; b < B; ++b) {
            const Sample& t = *batch[s + b];
            const Prediction pr = prediction_of(w, ps, b);
            co.loss += loss(pr, t, lw);
            double* d = dout.data() + static_cast<std::size_t>(b) * Architecture::kOutputs;
            d[0] = inv * 2.0 * lw.w_V * (pr.V - t.V_t100) * vr;
            const double gc = inv * 2.0 / (2.0 * kGridCells);
            for (int i = 0; i < kGridCells; ++i) {
                d[1 + i] = gc * (pr.c_n[i] - t.c_n_next[i]);
                d[1 + kGridCells + i] = gc * (pr.c_p[i] - t.c_p_next[i]);
            }
            const double p = pr.p_fail;
            dz[b] = inv * 2.0 * lw.w_fail * (p - t.fail) * p * (1.0 - p);
        }
        co.sig = pass_signature(ps);
        if (need_grad) co.grads = run_backward(w, ps, dout, dz);
    });

    BatchGradient bg;
    bg.signature = 0xcbf29ce484222325ULL;
    for (std::size_t c = 0; c < nchunks; ++c) {
        bg.loss += outs[c].loss;
        bg.signature = fnv_mix(bg.signature, outs[c].sig);
        if (!need_grad) continue;
        if (c == 0) {
            bg.grads = std::move(outs[0].grads);
        } else {
            for (std::size_t k = 0; k < bg.grads.size(); ++k) {
                auto& acc = bg.grads[k].values();
                const auto& add = outs[c].grads[k].values();
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
            }
        }
    }
    bg.loss = bg.loss.scaled(inv);
    return bg;
}

void TrainConfig::validate() const {
    if (batch < 1) throw TrainingError("batch size must be >= 1");
    if (epochs < 1) throw TrainingError("epochs must be >= 1");
    if (!(lr > 0.0)) throw TrainingError("learning rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw TrainingError("decay must lie in (0, 1]");
    if (!(w_V > 0.0)) throw TrainingError("voltage loss weight must be positive");
    if (!(w_fail >= 0.0)) throw TrainingError("failure loss weight must be non-negative");
    arch.validate();
}

TrainResult train(const Dataset& data, const Normalization& norm, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    std::vector<const Sample*> pool;
    for (const auto& c : data.cycles)
        if (c.split == Split::train)
            for (std::size_t i = c.first; i < c.first + c.count; ++i) pool.push_back(&data.samples[i]);
    if (pool.empty()) throw TrainingError("the dataset has no training samples");

    TrainResult res;
    res.weights = init_weights(cfg.arch, norm, cfg.seed);
    auto params = res.weights.tensors();
    const auto& names = SurrogateWeights::tensor_names();
    AdamState st;
    const LossWeights lw{cfg.w_V, cfg.w_fail};
    // separate stream from the weight initialisation
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> order(pool.size());
    for (int e = 0; e < cfg.epochs; ++e) {
        st.alpha = cfg.lr * std::pow(cfg.decay, e);
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_in_place(order, rng);
        EpochStats es;
        es.epoch = e + 1;
        es.lr = st.alpha;
        for (std::size_t s = 0, b = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch), ++b) {
            std::vector<const Sample*> batch;
            for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch); ++i) batch.push_back(pool[order[i]]);
            auto bg = loss_and_gradient(res.weights, batch, lw, cfg.workers);
            if (!std::isfinite(bg.loss.total))
                throw TrainingError("non-finite loss at epoch " + std::to_string(e + 1) + ", batch " + std::to_string(b + 1) +
                                    " (learning rate " + std::to_string(st.alpha) + ")");
            std::vector<const Tensor*> gp;
            for (const auto& g : bg.grads) gp.push_back(&g);
            adam_step(params, gp, st, names);
            es.mean += bg.loss.scaled(static_cast<double>(batch.size()));
            ++es.steps;
            ++res.steps;
        }
        es.mean = es.mean.scaled(1.0 / static_cast<double>(order.size()));
        res.history.push_back(es);
        if (on_epoch) on_epoch(es);
    }
    return res;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

constexpr char kMagic[8] = {'P', '2', 'D', 'N', 'E', 'T', 'C', 'K'};

json arch_json(const Architecture& a) {
    return {{"c1", a.c1},
            {"c2", a.c2},
            {"c3", a.c3},
            {"k1", a.k1},
            {"k2", a.k2},
            {"k3", a.k3},
            {"reg_hidden1", a.reg_hidden1},
            {"reg_hidden2", a.reg_hidden2},
            {"fail_hidden1", a.fail_hidden1},
            {"fail_hidden2", a.fail_hidden2},
            {"residual", a.residual},
            {"padding", "same"},
            {"pool", "3x3 stride 3; last pool clipped"}};
}

Architecture arch_from_json(const json& j) {
    Architecture a;
    a.c1 = j.at("c1").get<int>();
    a.c2 = j.at("c2").get<int>();
    a.c3 = j.at("c3").get<int>();
    a.k1 = j.at("k1").get<int>();
    a.k2 = j.at("k2").get<int>();
    a.k3 = j.at("k3").get<int>();
    a.reg_hidden1 = j.at("reg_hidden1").get<int>();
    a.reg_hidden2 = j.at("reg_hidden2").get<int>();
    a.fail_hidden1 = j.at("fail_hidden1").get<int>();
    a.fail_hidden2 = j.at("fail_hidden2").get<int>();
    a.residual = j.at("residual").get<bool>();
    return a;
}

} // namespace

void round_to_float(SurrogateWeights& w) {
    for (auto* t : w.tensors())
        for (auto& v : t->values()) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const SurrogateWeights& w, const std::filesystem::path& path) {
    w.validate();
    json tensors = json::array();
    std::size_t offset = 0;
    const auto ts = w.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        tensors.push_back({{"name", SurrogateWeights::tensor_names()[i]},
                           {"shape", ts[i]->shape()},
                           {"offset", offset},
                           {"count", ts[i]->size()}});
        offset += ts[i]->size();
    }
    const json m = {{"format_version", kCheckpointVersion},
                    {"architecture", arch_json(w.arch)},
                    {"normalization",
                     {{"V_lo", w.norm.V_lo},
                      {"V_hi", w.norm.V_hi},
                      {"I_scale", w.norm.I_scale},
                      {"clamp_current", w.norm.clamp_current}}},
                    {"seed", w.seed},
                    {"init", "uniform +-sqrt(6/(fan_in+fan_out)), tensor i seeded with seed+i, zero biases"},
                    {"dtype", "float32 little-endian"},
                    {"tensors", tensors},
                    {"payload_floats", offset}};
    const std::string header = m.dump(1);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t hl = header.size();
    out.write(reinterpret_cast<const char*>(&hl), sizeof hl);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> buf;
    for (const auto* t : ts) {
        buf.resize(t->size());
        for (std::size_t k = 0; k < t->size(); ++k) buf[k] = static_cast<float>((*t)[k]);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("write failed: " + path.string());
}

SurrogateWeights load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
    std::uint64_t hl = 0;
    std::memcpy(&hl, bytes.data() + 8, sizeof hl);
    if (hl > bytes.size() - 16) throw CheckpointError("checkpoint header length exceeds the file size");

    json m;
    try {
        m = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hl));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    SurrogateWeights w;
    std::size_t total = 0;
    try {
        if (m.at("format_version").get<int>() != kCheckpointVersion)
            throw CheckpointError("unsupported checkpoint version " + m.at("format_version").dump());
        w.arch = arch_from_json(m.at("architecture"));
        w.arch.validate();
        const auto& nj = m.at("normalization");
        w.norm.V_lo = nj.at("V_lo").get<double>();
        w.norm.V_hi = nj.at("V_hi").get<double>();
        w.norm.I_scale = nj.at("I_scale").get<double>();
        w.norm.clamp_current = nj.at("clamp_current").get<bool>();
        w.seed = m.at("seed").get<std::uint64_t>();

        const auto shapes = SurrogateWeights::expected_shapes(w.arch);
        const auto& tj = m.at("tensors");
        if (!tj.is_array() || tj.size() != shapes.size())
            throw CheckpointError("checkpoint lists " + std::to_string(tj.size()) + " tensors, expected " +
                                  std::to_string(shapes.size()));
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const auto& name = SurrogateWeights::tensor_names()[i];
            if (tj[i].at("name").get<std::string>() != name)
                throw CheckpointError("tensor " + std::to_string(i) + " should be " + name);
            const auto shape = tj[i].at("shape").get<std::vector<int>>();
            if (shape != shapes[i])
                throw CheckpointError("tensor " + name + " has shape " + shape_string(shape) + " in the manifest, architecture needs " +
                                      shape_string(shapes[i]));
            if (tj[i].at("offset").get<std::size_t>() != total || tj[i].at("count").get<std::size_t>() != shape_size(shape))
                throw CheckpointError("tensor " + name + " has an inconsistent offset or count");
            total += shape_size(shape);
        }
        if (m.at("payload_floats").get<std::size_t>() != total) throw CheckpointError("payload size field is inconsistent");
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest is malformed: ") + e.what());
    } catch (const ModelError& e) {
        throw CheckpointError(std::string("checkpoint architecture is invalid: ") + e.what());
    }

    const std::size_t payload = bytes.size() - 16 - hl;
    if (payload != total * sizeof(float))
        throw CheckpointError("checkpoint payload holds " + std::to_string(payload) + " bytes, manifest implies " +
                             std::to_string(total * sizeof(float)));
    const char* p = bytes.data() + 16 + hl;
    const auto shapes = SurrogateWeights::expected_shapes(w.arch);
    auto ts = w.tensors();
    std::vector<float> buf;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        *ts[i] = Tensor(shapes[i]);
        buf.resize(ts[i]->size());
        std::memcpy(buf.data(), p, buf.size() * sizeof(float));
        p += buf.size() * sizeof(float);
        for (std::size_t k = 0; k < buf.size(); ++k) (*ts[i])[k] = buf[k];
    }
    try {
        w.validate();
    } catch (const ModelError& e) {
        throw CheckpointError(e.what());
    }
    return w;
}

} // namespace p2dnet
