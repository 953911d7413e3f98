#include <catch2/catch_amalgamated.hpp>

#include "nsce/metrics.hpp"

using namespace nsce;

TEST_CASE("sparsity stats") {
    SECTION("pythagorean norm") {
        Matrix w(2, 1);
        w(0, 0) = 3.0;
        w(1, 0) = 4.0;
        const auto [m, s] = sparsity_stats(w);
        CHECK(m[0] == Catch::Approx(5.0));
    }
    SECTION("uniform column has s = 1") {
        Matrix w(4, 1);
        for (std::size_t i = 0; i < 4; ++i) w(i, 0) = 1.0;
        CHECK(sparsity_stats(w).second[0] == Catch::Approx(1.0));
    }
    SECTION("one-hot-ish column") {
        Matrix w(4, 1);
        w(0, 0) = 2.0;
        CHECK(sparsity_stats(w).second[0] == Catch::Approx(0.25));
    }
    SECTION("zero column: s = 1 by convention, m = 0") {
        Matrix w(3, 1);
        const auto [m, s] = sparsity_stats(w);
        CHECK(m[0] == 0.0);
        CHECK(s[0] == 1.0);
    }
    SECTION("s in [1/d, 1] and invariant to positive scaling") {
        Rng rng(12);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t d = 2 + rng.index(14);
            Matrix w(d, 1);
            for (double& v : w.a) v = rng.normal(0.0, 1.0);
            const double s = sparsity_stats(w).second[0];
            CHECK(s >= 1.0 / static_cast<double>(d) - 1e-12);
            CHECK(s <= 1.0 + 1e-12);
            Matrix scaled = w;
            for (double& v : scaled.a) v *= 41.7;
            CHECK(std::abs(sparsity_stats(scaled).second[0] - s) <= 1e-12);
        }
    }
}

TEST_CASE("evaluate") {
    LinearHead head;
    head.W = Matrix(2, 2);
    head.W(0, 0) = 1.0;
    head.W(1, 1) = 1.0;
    head.bias = {0.0, 0.0};
    AdapterHead adapter;
    NcmState ncm(2, 0.1);

    SECTION("degenerate single-class set") {
        std::vector<Sample> eval_set;
        Sample s;
        s.features = {5.0, 0.0};
        s.label = 0;
        eval_set.push_back(s);
        const EvalRecord rec = evaluate(head, adapter, ncm, eval_set, 2);
        CHECK(rec.accuracy_softmax == 1.0);
        CHECK(rec.confusion[0][0] == 1.0);
        CHECK(rec.confusion[0][1] == 0.0);
    }
    SECTION("empty set rejected") {
        CHECK_THROWS_AS(evaluate(head, adapter, ncm, {}, 2), MetricsError);
    }
    SECTION("random head on balanced set is near chance") {
        Rng rng(3);
        LinearHead rand_head(2, 2, rng);
        std::vector<Sample> eval_set;
        for (int i = 0; i < 1000; ++i) {
            Sample s;
            s.features = {rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
            s.label = i % 2;
            eval_set.push_back(s);
        }
        const EvalRecord rec = evaluate(rand_head, adapter, ncm, eval_set, 2);
        CHECK(rec.accuracy_softmax > 0.40);
        CHECK(rec.accuracy_softmax < 0.60);
    }
    SECTION("confusion matrix equals exhaustive pair counting; rows sum to 1") {
        Rng rng(9);
        LinearHead rand_head(3, 3, rng);
        std::vector<Sample> eval_set;
        for (int i = 0; i < 50; ++i) {
            Sample s;
            s.features = {rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)};
            s.label = i % 3;
            eval_set.push_back(s);
        }
        const EvalRecord rec = evaluate(rand_head, adapter, ncm, eval_set, 3);
        std::vector<std::vector<double>> counts(3, std::vector<double>(3, 0.0));
        std::vector<double> rows(3, 0.0);
        for (const Sample& s : eval_set) {
            const auto fwd = forward(s.features, adapter, rand_head);
            const int pred = softmax_predict(fwd.logits).second;
            counts[s.label][pred] += 1.0;
            rows[s.label] += 1.0;
        }
        for (int r = 0; r < 3; ++r) {
            double row_sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                CHECK(rec.confusion[r][c] == Catch::Approx(counts[r][c] / rows[r]).margin(1e-12));
                row_sum += rec.confusion[r][c];
            }
            CHECK(std::abs(row_sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("accuracy curve metrics") {
    auto record_with = [](double acc, std::size_t it) {
        EvalRecord r;
        r.iteration = it;
        r.accuracy_softmax = acc;
        return r;
    };
    SECTION("constant accuracy") {
        std::vector<EvalRecord> recs{record_with(0.8, 100), record_with(0.8, 200)};
        CHECK(a_auc(recs) == Catch::Approx(0.8));
    }
    SECTION("mean of evaluation points") {
        std::vector<EvalRecord> recs{record_with(1.0, 1), record_with(0.5, 2), record_with(0.75, 3)};
        CHECK(a_auc(recs) == Catch::Approx(0.75));
    }
    SECTION("matches an independent Riemann sum and is scale invariant in dn") {
        Rng rng(21);
        std::vector<EvalRecord> recs;
        double riemann = 0.0;
        for (int i = 0; i < 100; ++i) {
            const double acc = rng.uniform(0.0, 1.0);
            recs.push_back(record_with(acc, static_cast<std::size_t>(i + 1)));
            riemann += acc;
        }
        const double dn = 100.0;
        CHECK(a_auc(recs) == Catch::Approx(riemann * dn / (100.0 * dn)).epsilon(1e-12));
        CHECK(a_auc_raw(recs, 2.0) == Catch::Approx(2.0 * riemann).epsilon(1e-12));
        CHECK(a_auc(recs) >= 0.0);
        CHECK(a_auc(recs) <= 1.0);
    }
    SECTION("last accuracy") {
        std::vector<EvalRecord> recs{record_with(0.9, 1)};
        CHECK(last_accuracy(recs) == 0.9);
        recs.push_back(record_with(0.95, 2));
        CHECK(last_accuracy(recs) == 0.95);
        CHECK_THROWS_AS(last_accuracy({}), MetricsError);
        CHECK_THROWS_AS(a_auc({}), MetricsError);
    }
}

TEST_CASE("throughput measurement") {
    CHECK(measure_throughput({0.01, 0.01, 0.01}, 10) == Catch::Approx(1000.0));
    CHECK(measure_throughput({0.01, 0.01, 10.0}, 10) == Catch::Approx(1000.0));
    CHECK(measure_throughput({0.02}, 10) == Catch::Approx(500.0));
    CHECK_THROWS_AS(measure_throughput({}, 10), MetricsError);
}
