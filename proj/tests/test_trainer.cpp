#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nsce/synthetic.hpp"
#include "nsce/trainer.hpp"

#include "grad_check.hpp"

using namespace nsce;

namespace {

Sample make_sample(Vec features, int label) {
    Sample s;
    s.features = std::move(features);
    s.label = label;
    return s;
}

std::vector<Sample> gaussian_batch(Rng& rng, std::size_t n, std::size_t d, std::size_t c) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Vec f(d);
        for (double& v : f) v = rng.normal(0.0, 1.0);
        out.push_back(make_sample(std::move(f), static_cast<int>(rng.index(c))));
    }
    return out;
}

}  // namespace

TEST_CASE("composed objective gradient matches finite differences through the adapter") {
    Rng rng(101);
    const std::size_t d = 6, h = 4, c = 3, n = 5;
    AdapterHead adapter(d, h, rng);
    LinearHead head(h, c, rng);
    NcmState ncm(c, 0.1);
    ncm.prototypes[2] = Vec(h, 0.3);  // one fallback prototype

    const auto batch = gaussian_batch(rng, n, d, 2);  // labels in {0,1}; class 2 via fallback
    const std::vector<int> active{0, 1, 2};
    const double gamma = 0.05;

    // avoid ReLU kinks: nudge pre-activations away from zero
    for (const Sample& s : batch)
        for (double z : adapter.pre_activation(s.features)) REQUIRE(std::abs(z) > 1e-4);

    auto pack = [&]() {
        testutil::ParamVec p;
        p.insert(p.end(), head.W.a.begin(), head.W.a.end());
        p.insert(p.end(), head.bias.begin(), head.bias.end());
        p.insert(p.end(), adapter.W1.a.begin(), adapter.W1.a.end());
        p.insert(p.end(), adapter.b1.begin(), adapter.b1.end());
        return p;
    };
    auto eval = [&](const testutil::ParamVec& p) {
        LinearHead hh = head;
        AdapterHead aa = adapter;
        std::size_t off = 0;
        for (double& v : hh.W.a) v = p[off++];
        for (double& v : hh.bias) v = p[off++];
        for (double& v : aa.W1.a) v = p[off++];
        for (double& v : aa.b1) v = p[off++];
        return nsce_objective(batch, hh, aa, ncm, gamma, active).losses.total;
    };

    const auto numeric = testutil::numeric_gradient(eval, pack());
    const BatchGradients g = nsce_objective(batch, head, adapter, ncm, gamma, active);
    testutil::ParamVec analytic;
    analytic.insert(analytic.end(), g.grad_W.a.begin(), g.grad_W.a.end());
    analytic.insert(analytic.end(), g.grad_bias.begin(), g.grad_bias.end());
    analytic.insert(analytic.end(), g.grad_W1.a.begin(), g.grad_W1.a.end());
    analytic.insert(analytic.end(), g.grad_b1.begin(), g.grad_b1.end());
    CHECK(testutil::max_rel_error(analytic, numeric) < 1e-5);

    SECTION("loss breakdown composes per the total-loss rule") {
        CHECK(g.losses.total ==
              Catch::Approx(g.losses.ce + gamma * (g.losses.lp + g.losses.ls)).margin(1e-12));
    }
}

TEST_CASE("single adaptive step matches a hand-computed update") {
    TrainerConfig cfg;
    cfg.gamma = 0.0;
    cfg.optim.learning_rate = 0.1;
    cfg.optim.weight_decay = 0.0;
    cfg.seed = 55;
    Trainer trainer(2, 2, cfg);
    const Matrix w0 = trainer.head().W;
    const Vec b0 = trainer.head().bias;

    const std::vector<Sample> batch{make_sample({1.0, -2.0}, 1)};
    // independent forward pass for the expected gradient
    Vec logits(2, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 2; ++c) logits[c] += w0(i, c) * batch[0].features[i];
    for (std::size_t c = 0; c < 2; ++c) logits[c] += b0[c];
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const Vec probs{e0 / (e0 + e1), e1 / (e0 + e1)};
    Matrix gw(2, 2);
    Vec gb(2);
    for (std::size_t c = 0; c < 2; ++c) {
        const double gl = probs[c] - (c == 1 ? 1.0 : 0.0);
        gb[c] = gl;
        for (std::size_t i = 0; i < 2; ++i) gw(i, c) = batch[0].features[i] * gl;
    }
    auto adam_first_step = [&](double p, double g) {
        // zero moments, step 1: mhat = g, vhat = g^2
        return p - 0.1 * g / (std::abs(g) + cfg.optim.eps);
    };

    trainer.train_step(batch, 0);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(trainer.head().W.a[i] == Catch::Approx(adam_first_step(w0.a[i], gw.a[i])).margin(1e-10));
    for (std::size_t c = 0; c < 2; ++c)
        CHECK(trainer.head().bias[c] == Catch::Approx(adam_first_step(b0[c], gb[c])).margin(1e-10));
}

TEST_CASE("frozen adapter is bit-identical across steps") {
    TrainerConfig cfg;
    cfg.adapter_hidden = 4;
    cfg.seed = 7;
    Trainer trainer(3, 2, cfg);
    trainer.adapter().frozen = true;
    const Vec w1 = trainer.adapter().W1.a;
    const Vec b1 = trainer.adapter().b1;
    Rng rng(88);
    for (int step = 0; step < 20; ++step) trainer.train_step(gaussian_batch(rng, 6, 3, 2), step);
    CHECK(trainer.adapter().W1.a == w1);
    CHECK(trainer.adapter().b1 == b1);
}

TEST_CASE("loss decreases on a separable problem") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.dim = 2;
    spec.separation = 4.0;
    spec.sigma = 0.2;
    spec.per_class = 100;
    spec.seed = 13;
    const Dataset ds = generate_synthetic(spec);

    TrainerConfig cfg;
    cfg.gamma = 0.0;
    cfg.optim.learning_rate = 0.05;
    cfg.seed = 1;
    Trainer trainer(2, 2, cfg);
    Rng rng(2);
    double first_ce = -1.0, last_ce = 0.0;
    for (int step = 0; step < 200; ++step) {
        std::vector<Sample> batch;
        for (int i = 0; i < 10; ++i) batch.push_back(ds.samples[rng.index(ds.samples.size())]);
        const auto [losses, t] = trainer.train_step(batch, step);
        if (first_ce < 0.0) first_ce = losses.ce;
        last_ce = losses.ce;
    }
    CHECK(last_ce < first_ce);
    CHECK(last_ce < 0.1);
}

TEST_CASE("lite gate") {
    TrainerConfig cfg;
    cfg.lite_mode = true;
    cfg.lite_threshold = 0.9;
    LiteGate gate;
    SECTION("fires at the threshold crossing") {
        CHECK_FALSE(gate.check(0.5, cfg));
        CHECK_FALSE(gate.check(0.85, cfg));
        CHECK(gate.check(0.92, cfg));
    }
    SECTION("disabled mode never fires") {
        TrainerConfig off = cfg;
        off.lite_mode = false;
        CHECK_FALSE(gate.check(0.99, off));
    }
    SECTION("latches through an accuracy drop, resets at the boundary") {
        CHECK(gate.check(0.95, cfg));
        CHECK(gate.check(0.7, cfg));  // latched
        gate.reset();
        CHECK_FALSE(gate.check(0.7, cfg));
    }
    SECTION("toggle mode follows the accuracy") {
        TrainerConfig toggle = cfg;
        toggle.lite_latch = false;
        CHECK(gate.check(0.95, toggle));
        CHECK_FALSE(gate.check(0.7, toggle));
    }
}

TEST_CASE("replay step pair selection") {
    TrainerConfig cfg;
    cfg.tau = 0.5;
    cfg.seed = 3;

    SECTION("dominant confusion picks exactly that pair") {
        // head that always predicts class 1
        Trainer trainer(2, 3, cfg);
        trainer.head().W = Matrix(2, 3);
        trainer.head().bias = {0.0, 10.0, 0.0};
        MemoryBuffer buffer(50, 4);
        std::vector<Sample> data;
        for (int i = 0; i < 20; ++i) data.push_back(make_sample({0.1 * i, 0.0}, i % 2));
        buffer.update(data);
        AccessPolicy policy;
        policy.every_k = 10;
        const auto pairs = trainer.replay_step(buffer, policy, 10);
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0] == std::pair{0, 1});
    }
    SECTION("perfect classification falls back to plain replay") {
        Trainer trainer(2, 2, cfg);
        trainer.head().W = Matrix(2, 2);
        trainer.head().W(0, 0) = 10.0;
        trainer.head().W(0, 1) = -10.0;
        trainer.head().bias = {0.0, 0.0};
        MemoryBuffer buffer(50, 4);
        std::vector<Sample> data;
        for (int i = 0; i < 20; ++i)
            data.push_back(make_sample({i % 2 == 0 ? 1.0 : -1.0, 0.0}, i % 2));
        buffer.update(data);
        AccessPolicy policy;
        policy.every_k = 10;
        const Matrix before = trainer.head().W;
        const auto pairs = trainer.replay_step(buffer, policy, 10);
        CHECK(pairs.empty());
        CHECK(trainer.head().W.a != before.a);  // the fallback update ran
        CHECK(policy.accesses_used == 1);
    }
    SECTION("threshold tau gates a known confusion rate") {
        // fixed head misclassifies class 0 as 1 in ~30% of the buffer
        Trainer trainer(1, 2, cfg);
        trainer.head().W = Matrix(1, 2);
        trainer.head().W(0, 0) = 1.0;
        trainer.head().W(0, 1) = -1.0;
        trainer.head().bias = {0.0, 0.0};
        MemoryBuffer buffer(100, 4);
        std::vector<Sample> data;
        for (int i = 0; i < 10; ++i)
            data.push_back(make_sample({i < 3 ? -1.0 : 1.0, }, 0));  // 3 of 10 on the wrong side
        for (int i = 0; i < 10; ++i) data.push_back(make_sample({-1.0}, 1));
        buffer.update(data);

        // brute-force confusion of the fixed head over the buffer
        const auto confusion = buffer_confusion(buffer, trainer.head(), trainer.adapter(), 2);
        CHECK(confusion[0][1] == Catch::Approx(0.3));

        CHECK(confused_pairs(confusion, 0.2).size() == 1);
        CHECK(confused_pairs(confusion, 0.4).empty());
    }
    SECTION("empty buffer is a no-op") {
        Trainer trainer(2, 2, cfg);
        MemoryBuffer buffer(10, 1);
        AccessPolicy policy;
        policy.every_k = 10;
        const Matrix before = trainer.head().W;
        trainer.replay_step(buffer, policy, 10);
        CHECK(trainer.head().W.a == before.a);
    }
    SECTION("access must be granted") {
        Trainer trainer(2, 2, cfg);
        MemoryBuffer buffer(10, 1);
        AccessPolicy policy;
        policy.every_k = 10;
        CHECK_THROWS_AS(trainer.replay_step(buffer, policy, 7), BufferError);
    }
}

TEST_CASE("streaming run invariants") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.dim = 4;
    spec.separation = 3.0;
    spec.sigma = 0.3;
    spec.per_class = 300;
    spec.seed = 5;
    const Dataset ds = generate_synthetic(spec);
    auto [train, eval_set] = split_eval(ds.samples, 4, 0.2, 11);

    StreamConfig scfg;
    scfg.flow_rate = 100.0;
    scfg.batch_size = 10;
    scfg.seed = 21;
    scfg.schedule.tasks = {{{0, 1}, 400, 4.0}, {{2, 3}, 400, 4.0}};

    TrainerConfig tcfg;
    tcfg.fixed_v_m = 200.0;
    tcfg.eval_interval = 20;
    tcfg.seed = 21;

    AccessPolicy policy;
    policy.every_k = 10;

    SECTION("identical configs yield identical trajectories and records") {
        const RunResult a = run_training(train, eval_set, 4, 4, scfg, tcfg, policy, 50);
        const RunResult b = run_training(train, eval_set, 4, 4, scfg, tcfg, policy, 50);
        REQUIRE(a.log.complete);
        CHECK(a.trainer.head().W.a == b.trainer.head().W.a);
        REQUIRE(a.log.records.size() == b.log.records.size());
        for (std::size_t i = 0; i < a.log.records.size(); ++i) {
            CHECK(a.log.records[i].accuracy_softmax == b.log.records[i].accuracy_softmax);
            CHECK(a.log.records[i].per_class_s == b.log.records[i].per_class_s);
        }
    }
    SECTION("replay budget is exact") {
        const RunResult r = run_training(train, eval_set, 4, 4, scfg, tcfg, policy, 50);
        REQUIRE(r.log.complete);
        std::size_t iterations = 0;
        for (const auto& rec : r.log.throughput) iterations += rec.processed;
        iterations /= 10;  // batch size
        CHECK(r.replay_steps == iterations / policy.every_k);
        CHECK(r.final_policy.accesses_used == r.replay_steps);
    }
    SECTION("skipping under a slow model follows the throughput law") {
        TrainerConfig slow = tcfg;
        slow.fixed_v_m = 60.0;
        const RunResult r = run_training(train, eval_set, 4, 4, scfg, slow, policy, 50);
        REQUIRE(r.log.complete);
        for (const auto& rec : r.log.throughput) {
            CHECK(rec.arrived == rec.processed + rec.skipped);
            CHECK(std::abs(static_cast<double>(rec.processed) - 60.0 * 4.0) <= 10.0);
        }
    }
    SECTION("lite gate freezes the adapter until the task boundary") {
        TrainerConfig lite = tcfg;
        lite.adapter_hidden = 8;
        lite.lite_mode = true;
        lite.lite_threshold = 0.3;  // fires quickly on this easy stream
        RunResult r = run_training(train, eval_set, 4, 4, scfg, lite, policy, 50);
        REQUIRE(r.log.complete);
        // gate must have fired at least once (easy stream, low threshold)
        CHECK(r.trainer.gate().fired());
    }
}
