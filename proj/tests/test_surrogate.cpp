#include "helpers.hpp"

#include "p2dnet/errors.hpp"
#include "p2dnet/surrogate.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

using namespace p2dnet;
using testing::uniform;

namespace {

Normalization test_norm() {
    Normalization n;
    n.V_lo = 3.4;
    n.V_hi = 4.2;
    return n;
}

Architecture small_arch() {
    Architecture a;
    a.c1 = 2;
    a.c2 = 3;
    a.c3 = 4;
    a.reg_hidden1 = 5;
    a.reg_hidden2 = 6;
    a.fail_hidden1 = 4;
    a.fail_hidden2 = 3;
    return a;
}

Sample random_sample(std::mt19937_64& g) {
    Sample s;
    for (auto* grid : {&s.c_n, &s.c_p, &s.c_n_next, &s.c_p_next})
        for (auto& v : *grid) v = static_cast<float>(uniform(g));
    s.V_t = static_cast<float>(uniform(g, 3.5, 4.1));
    s.V_t100 = static_cast<float>(uniform(g, 3.5, 4.1));
    s.I_t = static_cast<float>(uniform(g, 0, 6));
    s.I_t100 = static_cast<float>(uniform(g, 0, 6));
    s.fail = uniform(g) < 0.3 ? 1.0f : 0.0f;
    return s;
}

Dataset random_dataset(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) d.samples.push_back(random_sample(g));
    CycleRecord c;
    c.count = n;
    d.cycles.push_back(c);
    return d;
}

// small random biases so no ReLU sits exactly at its kink
void jitter_biases(SurrogateWeights& w, std::mt19937_64& g) {
    for (auto* t : w.tensors())
        if (t->rank() == 1)
            for (auto& v : t->values()) v = uniform(g, -0.1, 0.1);
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "p2dnet_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("architecture arithmetic") {
    Architecture a;
    CHECK(a.conv_features() == 64);
    CHECK(a.features() == a.conv_features() + 3);
    CHECK(Architecture::kOutputs == 801);
    auto shapes = SurrogateWeights::expected_shapes(a);
    REQUIRE(shapes.size() == SurrogateWeights::kTensorCount);
    CHECK(shapes[0] == std::vector<int>{7, 7, 2, 16});
    CHECK(shapes[2] == std::vector<int>{5, 5, 16, 32});
    CHECK(shapes[4] == std::vector<int>{3, 3, 32, 64});
    CHECK(shapes[6] == std::vector<int>{256, 67});
    CHECK(shapes[10] == std::vector<int>{801, 256});
    CHECK(shapes[16] == std::vector<int>{1, 16});
    Architecture bad;
    bad.k2 = 4;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("forward outputs") {
    auto w = init_weights(Architecture{}, test_norm(), 3);
    std::mt19937_64 g(1);
    jitter_biases(w, g);
    for (int i = 0; i < 5; ++i) {
        const Sample s = random_sample(g);
        const Prediction a = forward(w, input_of(s));
        const Prediction b = forward(w, input_of(s));
        CHECK(a == b);
        CHECK(a.p_fail > 0.0);
        CHECK(a.p_fail < 1.0);
        CHECK(std::isfinite(a.V));
        CHECK(a.c_n.size() + a.c_p.size() + 1 == 801);
    }
    std::vector<SurrogateInput> in;
    for (int i = 0; i < 11; ++i) in.push_back(input_of(random_sample(g)));
    const auto batch = forward_batch(w, in);
    REQUIRE(batch.size() == in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const auto one = forward(w, in[i]);
        CHECK(batch[i].V == doctest::Approx(one.V).epsilon(1e-12));
        CHECK(batch[i].p_fail == doctest::Approx(one.p_fail).epsilon(1e-12));
        for (int k = 0; k < kGridCells; ++k) CHECK(std::abs(batch[i].c_n[k] - one.c_n[k]) <= 1e-12);
    }
    CHECK(forward_batch(w, in) == batch);
}

TEST_CASE("forward clamps and counts out-of-range inputs") {
    auto w = init_weights(Architecture{}, test_norm(), 3);
    SurrogateInput in;
    in.c_n.fill(0.5);
    in.c_p.fill(0.5);
    in.c_n[0] = 1.2;
    in.c_p[7] = -0.1;
    in.I_t = 7.5;
    in.I_t100 = 2.0;
    in.V_t = 3.9;
    const auto p = forward(w, in);
    CHECK(p.clamped_cells == 2);
    CHECK(p.clamped_currents == 1);
    SurrogateInput clipped = in;
    clipped.c_n[0] = 1.0;
    clipped.c_p[7] = 0.0;
    clipped.I_t = 6.0;
    const auto q = forward(w, clipped);
    CHECK(q.V == p.V);
    CHECK(q.p_fail == p.p_fail);
}

TEST_CASE("weights validation") {
    auto w = init_weights(Architecture{}, test_norm(), 1);
    CHECK_NOTHROW(w.validate());
    w.reg3_b = Tensor({800});
    CHECK_THROWS_AS(w.validate(), ModelError);
    CHECK_THROWS_AS(forward(w, SurrogateInput{}), ModelError);
}

TEST_CASE("initialisation is seeded per tensor") {
    const auto a = init_weights(Architecture{}, test_norm(), 11);
    const auto b = init_weights(Architecture{}, test_norm(), 11);
    const auto c = init_weights(Architecture{}, test_norm(), 12);
    CHECK(a == b);
    CHECK_FALSE(a.conv1_k == c.conv1_k);
    for (double v : a.reg1_b.values()) CHECK(v == 0.0);
    CHECK(a.parameter_count() == [&] {
        std::size_t n = 0;
        for (const auto& s : SurrogateWeights::expected_shapes(a.arch)) n += shape_size(s);
        return n;
    }());
}

TEST_CASE("loss arithmetic") {
    std::mt19937_64 g(2);
    const Sample t = random_sample(g);

    Prediction exact;
    exact.V = t.V_t100;
    for (int i = 0; i < kGridCells; ++i) {
        exact.c_n[i] = t.c_n_next[i];
        exact.c_p[i] = t.c_p_next[i];
    }
    exact.p_fail = t.fail;
    const auto z = loss(exact, t);
    CHECK(z.total == 0.0);

    Prediction off = exact;
    const double delta = 0.0375;
    off.V += delta;
    const auto lv = loss(off, t);
    CHECK(lv.total == doctest::Approx(10 * delta * delta).epsilon(1e-12));
    CHECK(lv.conc == 0.0);
    CHECK(lv.fail == 0.0);

    // independent straight-line oracle on a random pair
    Prediction p;
    p.V = uniform(g, 3.4, 4.2);
    for (auto& v : p.c_n) v = uniform(g);
    for (auto& v : p.c_p) v = uniform(g);
    p.p_fail = uniform(g);
    double sq = 0.0;
    for (int i = 0; i < kGridCells; ++i) {
        sq += (p.c_n[i] - double(t.c_n_next[i])) * (p.c_n[i] - double(t.c_n_next[i]));
        sq += (p.c_p[i] - double(t.c_p_next[i])) * (p.c_p[i] - double(t.c_p_next[i]));
    }
    const double conc = sq / 800.0;
    const double volt = 2.5 * (p.V - double(t.V_t100)) * (p.V - double(t.V_t100));
    const double fail = 0.75 * (p.p_fail - double(t.fail)) * (p.p_fail - double(t.fail));
    const auto l = loss(p, t, {2.5, 0.75});
    CHECK(std::abs(l.conc - conc) <= 1e-12);
    CHECK(std::abs(l.voltage - volt) <= 1e-12);
    CHECK(std::abs(l.fail - fail) <= 1e-12);
    CHECK(std::abs(l.total - (l.conc + l.voltage + l.fail)) <= 1e-12);

    // scaling w_V scales only the voltage component
    const auto l3 = loss(p, t, {7.5, 0.75});
    CHECK(l3.conc == l.conc);
    CHECK(l3.fail == l.fail);
    CHECK(l3.voltage == doctest::Approx(3 * l.voltage).epsilon(1e-14));
}

TEST_CASE("composed gradient agrees with finite differences") {
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 3; ++trial) {
        auto w = init_weights(small_arch(), test_norm(), 100 + static_cast<std::uint64_t>(trial));
        jitter_biases(w, g);
        std::vector<Sample> ss = {random_sample(g), random_sample(g)};
        std::vector<const Sample*> b = {&ss[0], &ss[1]};
        const auto bg = loss_and_gradient(w, b);
        std::uint64_t sig = 0;
        std::vector<GradTarget> targets;
        auto ts = w.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i)
            targets.push_back({SurrogateWeights::tensor_names()[i], ts[i], &bg.grads[i]});
        GradCheckOptions o;
        o.tolerance = 1e-4;
        o.signature = [&] { return sig; };
        const auto rep = grad_check(
            [&] {
                const auto r = loss_and_gradient(w, b, {}, 1, false);
                sig = r.signature;
                return r.loss.total;
            },
            targets, o);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error() <= 1e-4);
    }
}

TEST_CASE("batch gradient is independent of the worker count") {
    auto w = init_weights(Architecture{}, test_norm(), 5);
    std::mt19937_64 g(8);
    std::vector<Sample> ss;
    for (int i = 0; i < 21; ++i) ss.push_back(random_sample(g));
    std::vector<const Sample*> b;
    for (auto& s : ss) b.push_back(&s);
    const auto one = loss_and_gradient(w, b, {}, 1);
    const auto four = loss_and_gradient(w, b, {}, 4);
    CHECK(one.loss.total == four.loss.total);
    CHECK(one.grads == four.grads);
    CHECK(one.signature == four.signature);
}

TEST_CASE("training steps and determinism") {
    const Dataset d64 = random_dataset(64, 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.arch = small_arch();
    auto r = train(d64, test_norm(), cfg);
    CHECK(r.steps == 1);
    REQUIRE(r.history.size() == 1);
    CHECK(r.history[0].lr == cfg.lr);

    const Dataset d = random_dataset(100, 4);
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.seed = 9;
    const auto a = train(d, test_norm(), cfg);
    CHECK(a.steps == 3 * 7);  // last partial batch included
    CHECK(a.history[2].lr == doctest::Approx(cfg.lr * 0.25));
    const auto b = train(d, test_norm(), cfg);
    CHECK(a.weights == b.weights);
    cfg.workers = 4;
    const auto c = train(d, test_norm(), cfg);
    CHECK(a.weights == c.weights);
    cfg.seed = 10;
    const auto e = train(d, test_norm(), cfg);
    CHECK_FALSE(a.weights == e.weights);
}

TEST_CASE("training rejects bad input") {
    TrainConfig cfg;
    cfg.arch = small_arch();
    cfg.batch = 0;
    CHECK_THROWS_AS(train(random_dataset(8, 1), test_norm(), cfg), TrainingError);
    cfg.batch = 4;
    Dataset empty;
    CHECK_THROWS_AS(train(empty, test_norm(), cfg), TrainingError);

    Dataset bad = random_dataset(8, 2);
    bad.samples[5].V_t100 = std::nanf("");
    try {
        train(bad, test_norm(), cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
        CHECK(msg.find("learning rate") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip") {
    auto w = init_weights(Architecture{}, test_norm(), 21);
    std::mt19937_64 g(9);
    jitter_biases(w, g);
    const auto path = temp_path("rt.ckpt");
    save_checkpoint(w, path);
    const auto back = load_checkpoint(path);
    auto rounded = w;
    round_to_float(rounded);
    CHECK(back == rounded);
    CHECK(back.norm == w.norm);
    CHECK(back.seed == 21);

    const Sample s = random_sample(g);
    const auto p0 = forward(w, input_of(s));
    const auto p1 = forward(back, input_of(s));
    CHECK(std::abs(p1.V - p0.V) <= 1e-6 * std::abs(p0.V));
    for (int i = 0; i < kGridCells; ++i) CHECK(std::abs(p1.c_n[i] - p0.c_n[i]) <= 1e-5);

    // saving the loaded weights reproduces the file byte for byte
    const auto path2 = temp_path("rt2.ckpt");
    save_checkpoint(back, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint corruption is detected") {
    const auto w = init_weights(small_arch(), test_norm(), 2);
    const auto path = temp_path("c.ckpt");
    save_checkpoint(w, path);
    const std::string good = slurp(path);
    const auto bad = temp_path("bad.ckpt");

    SUBCASE("magic") {
        std::string b = good;
        b[0] = 'X';
        spit(bad, b);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("header bytes") {
        std::string b = good;
        b[17] = '#';
        spit(bad, b);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("header length") {
        std::string b = good;
        const std::uint64_t huge = 1ULL << 40;
        std::memcpy(b.data() + 8, &huge, 8);
        spit(bad, b);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("truncated payload") {
        spit(bad, good.substr(0, good.size() - 4));
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("edited manifest") {
        std::uint64_t hl = 0;
        std::memcpy(&hl, good.data() + 8, 8);
        auto m = nlohmann::json::parse(good.substr(16, hl));
        const std::string payload = good.substr(16 + hl);
        auto rewrite = [&](const nlohmann::json& mm) {
            const std::string h = mm.dump();
            const std::uint64_t n = h.size();
            std::string b(good.data(), 8);
            b.append(reinterpret_cast<const char*>(&n), 8);
            b += h;
            b += payload;
            spit(bad, b);
        };
        rewrite(m);
        CHECK_NOTHROW(load_checkpoint(bad));  // re-serialised header is fine

        auto shape = m;
        shape["tensors"][6]["shape"] = {5, 66};
        rewrite(shape);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

        auto version = m;
        version["format_version"] = 2;
        rewrite(version);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

        auto arch = m;
        arch["architecture"]["c1"] = 3;
        rewrite(arch);
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), CheckpointError);
    }
}
