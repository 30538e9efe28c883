#include <doctest.h>

#include "vase/probes.hpp"

using vase::Index;
using vase::Rng;

namespace {

vase::StreamSchedule schedule_of(std::vector<long> budgets) {
    vase::StreamSchedule s;
    for (long b : budgets) {
        vase::SegmentSpec seg;
        seg.sprite_shapes = {0};
        seg.budget = b;
        s.segments.push_back(seg);
    }
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("probes");

TEST_CASE("constant targets give trivially perfect accuracy") {
    Rng rng(2);
    vase::ProbeData<double> data;
    data.latents.resize(64, 4);
    for (Index i = 0; i < data.latents.size(); ++i)
        data.latents(i / 4, i % 4) = rng.normal();
    data.classes.assign(64, 0);
    vase::ProbeConfig cfg;
    cfg.steps = 50;
    auto head = vase::train_probe(data, vase::ProbeTask::Classification, cfg, rng);
    CHECK(vase::evaluate_probe(head, data) == doctest::Approx(1.0));
}

TEST_CASE("a class absent from training targets is rejected") {
    Rng rng(3);
    vase::ProbeData<double> data;
    data.latents.resize(8, 2);
    data.latents.setZero();
    data.classes = {0, 0, 2, 2, 0, 2, 0, 2};  // class 1 missing
    vase::ProbeConfig cfg;
    cfg.steps = 5;
    CHECK_THROWS_AS(vase::train_probe(data, vase::ProbeTask::Classification, cfg, rng),
                    std::invalid_argument);
}

TEST_CASE("noiseless factor inputs regress position to near-zero error") {
    Rng rng(4);
    vase::ProbeData<double> train, eval;
    auto fill = [&](vase::ProbeData<double>& d, Index m) {
        d.latents.resize(m, 2);
        d.targets.resize(m, 2);
        for (Index i = 0; i < m; ++i) {
            const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
            d.latents(i, 0) = x;
            d.latents(i, 1) = y;
            d.targets(i, 0) = x;
            d.targets(i, 1) = y;
        }
    };
    fill(train, 512);
    fill(eval, 128);
    vase::ProbeConfig cfg;
    cfg.steps = 2000;
    auto head = vase::train_probe(train, vase::ProbeTask::Regression, cfg, rng);
    CHECK(vase::evaluate_probe(head, eval) < 1e-4);
}

TEST_CASE("probes on prior-noise latents sit at chance level") {
    const int kClasses = 10;
    double mean_acc = 0.0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        vase::ProbeData<double> train, eval;
        auto fill = [&](vase::ProbeData<double>& d, Index m) {
            d.latents.resize(m, 8);
            d.classes.resize(static_cast<size_t>(m));
            for (Index i = 0; i < m; ++i) {
                for (Index j = 0; j < 8; ++j) d.latents(i, j) = rng.normal();
                d.classes[static_cast<size_t>(i)] = static_cast<int>(i) % kClasses;
            }
        };
        fill(train, 400);
        fill(eval, 400);
        vase::ProbeConfig cfg;
        cfg.steps = 300;
        auto head = vase::train_probe(train, vase::ProbeTask::Classification, cfg, rng);
        mean_acc += vase::evaluate_probe(head, eval);
    }
    mean_acc /= 10.0;
    CHECK(mean_acc > 0.07);
    CHECK(mean_acc < 0.13);
}

TEST_CASE("probe training leaves the probed latents untouched") {
    Rng rng(5);
    vase::ProbeData<double> data;
    data.latents.resize(32, 3);
    for (Index i = 0; i < data.latents.size(); ++i) data.latents(i / 3, i % 3) = rng.normal();
    vase::RowMat<double> before = data.latents;
    data.classes.assign(32, 0);
    for (Index i = 0; i < 16; ++i) data.classes[static_cast<size_t>(i)] = 1;
    vase::ProbeConfig cfg;
    cfg.steps = 20;
    auto head = vase::train_probe(data, vase::ProbeTask::Classification, cfg, rng);
    CHECK((data.latents - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("probe correlation identifies informative dimensions") {
    Rng rng(6);
    vase::RowMat<double> latents(256, 3);
    vase::VecX<double> target(256);
    for (Index i = 0; i < 256; ++i) {
        const double t = rng.uniform(-1, 1);
        target(i) = t;
        latents(i, 0) = 2.0 * t + 0.01 * rng.normal();  // strongly correlated
        latents(i, 1) = rng.normal();                   // noise
        latents(i, 2) = -t + 0.2 * rng.normal();        // anti-correlated
    }
    auto rho = vase::probe_correlation(latents, target);
    CHECK(std::abs(rho(0)) > 0.99);
    CHECK(std::abs(rho(1)) < 0.2);
    CHECK(rho(2) < -0.9);
}

TEST_CASE("forgetting summary: direct definition, monotone case, exclusions") {
    auto sched = schedule_of({100, 100, 100});

    // accuracy 0.2 -> 0.9 during segment 0, then 0.7 and 0.8 afterwards
    std::vector<vase::EnvTrajectory> t1{{0, {{10, 0.2}, {90, 0.9}, {150, 0.7}, {250, 0.8}}}};
    auto r1 = vase::forgetting_summary(t1, sched, vase::MetricKind::Accuracy);
    CHECK(r1.environments[0].best_during == doctest::Approx(0.9));
    CHECK(r1.environments[0].change == doctest::Approx(-0.2));

    // monotone non-decreasing trajectory: no forgetting
    std::vector<vase::EnvTrajectory> t2{{0, {{50, 0.5}, {150, 0.5}, {250, 0.6}}}};
    auto r2 = vase::forgetting_summary(t2, sched, vase::MetricKind::Accuracy);
    CHECK(r2.environments[0].change == doctest::Approx(0.0));

    // an environment with no post-segment checkpoints is excluded, noted
    std::vector<vase::EnvTrajectory> t3{{2, {{250, 0.8}}}};
    auto r3 = vase::forgetting_summary(t3, sched, vase::MetricKind::Accuracy);
    CHECK(!r3.environments[0].valid);
    CHECK(r3.environments[0].note.find("excluded") != std::string::npos);
    CHECK(r3.contributing == 0);

    // MSE convention: change = worst after - best during >= 0
    std::vector<vase::EnvTrajectory> t4{{0, {{50, 0.02}, {90, 0.01}, {150, 0.05}, {250, 0.03}}}};
    auto r4 = vase::forgetting_summary(t4, sched, vase::MetricKind::Mse);
    CHECK(r4.environments[0].best_during == doctest::Approx(0.01));
    CHECK(r4.environments[0].worst_after == doctest::Approx(0.05));
    CHECK(r4.environments[0].change == doctest::Approx(0.04));
}

TEST_CASE("forgetting summary is idempotent under appended stable checkpoints") {
    auto sched = schedule_of({100, 100});
    std::vector<vase::EnvTrajectory> t{{0, {{50, 0.9}, {150, 0.6}}}};
    auto before = vase::forgetting_summary(t, sched, vase::MetricKind::Accuracy);
    t[0].points.push_back({180, 0.7});
    t[0].points.push_back({199, 0.7});
    auto after = vase::forgetting_summary(t, sched, vase::MetricKind::Accuracy);
    CHECK(before.environments[0].change == after.environments[0].change);
    CHECK(before.mean_change == after.mean_change);
}

TEST_SUITE_END();
