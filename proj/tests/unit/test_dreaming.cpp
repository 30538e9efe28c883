#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "vase/dreaming.hpp"

using vase::ArrX;
using vase::Index;
using vase::Rng;
using Tensor = vase::TensorT<double>;
using Nets = vase::VaseNetworks<double>;

namespace {

vase::ModelConfig small_config() {
    vase::ModelConfig cfg;
    cfg.latent_dim = 4;
    cfg.max_environments = 4;
    cfg.hidden = 12;
    cfg.image_h = 5;
    cfg.image_w = 5;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("dreaming");

TEST_CASE("encoder proximity closed forms") {
    // identical posteriors -> 0
    Tensor mu = Tensor::zeros({2, 3}, true);
    Tensor lv = Tensor::zeros({2, 3}, true);
    auto zero = vase::encoder_proximity(mu, lv, mu.detach(), lv.detach());
    CHECK(zero.item() == 0.0);

    // mu differing by 2 on one dim: W2^2 = 4
    Tensor mu2 = Tensor::zeros({1, 1}, true);
    mu2.values()(0) = 2.0;
    Tensor lv1 = Tensor::zeros({1, 1}, true);
    auto dmu = vase::encoder_proximity(mu2, lv1, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
    CHECK(dmu.item() == doctest::Approx(4.0));

    // sigma 1 vs 3, equal mu: W2^2 = 4
    Tensor lv3 = Tensor::full({1, 1}, 2.0 * std::log(3.0));
    auto dsg = vase::encoder_proximity(Tensor::zeros({1, 1}, true), lv3, Tensor::zeros({1, 1}),
                                       Tensor::zeros({1, 1}));
    CHECK(dsg.item() == doctest::Approx(4.0));
}

TEST_CASE("encoder proximity agrees with the quantile-coupling Monte Carlo oracle") {
    const double mu1 = 0.7, s1 = 1.3, mu2 = -0.4, s2 = 0.6;
    Tensor m1 = Tensor::full({1, 1}, mu1);
    Tensor l1 = Tensor::full({1, 1}, 2.0 * std::log(s1));
    Tensor m2 = Tensor::full({1, 1}, mu2);
    Tensor l2 = Tensor::full({1, 1}, 2.0 * std::log(s2));
    const double closed = vase::encoder_proximity(m1, l1, m2, l2).item();
    Rng rng(555);
    const double mc = oracles::mc_w2_squared(mu1, s1, mu2, s2, 200000, rng);
    CHECK(closed == doctest::Approx(mc).epsilon(0.02));
}

TEST_CASE("decoder proximity closed forms") {
    Tensor p = Tensor::full({1, 1}, 0.5);
    auto zero = vase::decoder_proximity_bernoulli(p, p);
    CHECK(zero.item() == 0.0);

    Tensor q = Tensor::full({1, 1}, 0.25);
    auto kl = vase::decoder_proximity_bernoulli(p, q);
    const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl.item() == doctest::Approx(expect).epsilon(1e-9));

    Tensor bad = Tensor::full({1, 1}, 1.25);
    CHECK_THROWS_AS(vase::decoder_proximity_bernoulli(bad, q), std::invalid_argument);

    // Gaussian means one sigma apart: 0.5 nats per pixel
    Tensor a = Tensor::full({1, 1}, 0.3);
    Tensor b = Tensor::full({1, 1}, 0.3 + 0.1);
    auto g = vase::decoder_proximity_gaussian(a, b, 0.1);
    CHECK(g.item() == doctest::Approx(0.5));
}

TEST_CASE("hallucination: skip with no environments, sole environment replays itself") {
    vase::ModelSnapshot<double> empty;
    Rng rng(1);
    CHECK(!vase::hallucinate_batch(empty, 0, 8, rng).has_value());

    Rng init(2);
    Nets nets(small_config(), init);
    vase::ModelSnapshot<double> snap;
    snap.sync(nets, 1, 0);
    auto h = vase::hallucinate_batch(snap, 0, 8, rng);
    REQUIRE(h.has_value());
    CHECK(h->source_env == 0);
    CHECK(h->images.values().minCoeff() > 0.0);
    CHECK(h->images.values().maxCoeff() < 1.0);
    // every latent dim is drawn from the prior, none is zeroed
    for (Index n = 0; n < 4; ++n) {
        double var = 0;
        for (Index b = 0; b < 8; ++b) var += h->latents.values()(b * 4 + n) *
                                              h->latents.values()(b * 4 + n);
        CHECK(var > 0.0);
    }
}

TEST_CASE("hallucination excludes the current environment when another exists") {
    Rng init(3);
    Nets nets(small_config(), init);
    vase::ModelSnapshot<double> snap;
    snap.sync(nets, 3, 0);
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto h = vase::hallucinate_batch(snap, 1, 2, rng);
        REQUIRE(h.has_value());
        CHECK(h->source_env != 1);
        CHECK(h->source_env < 3);
    }
}

TEST_CASE("dream loss is exactly zero right after a sync and positive after drift") {
    Rng init(5);
    Nets nets(small_config(), init);
    vase::ModelSnapshot<double> snap;
    snap.sync(nets, 2, 0);
    vase::DreamConfig cfg;

    Rng rng(6);
    auto h = vase::hallucinate_batch(snap, 0, 6, rng);
    REQUIRE(h.has_value());
    auto terms = vase::dream_loss(nets, snap, *h, cfg);
    CHECK(terms.loss.item() == 0.0);
    CHECK(terms.encoder_term == 0.0);
    CHECK(terms.decoder_term == 0.0);

    // perturb the posterior-mean bias: loss must become strictly positive
    auto params = nets.main_params();
    for (auto& p : params)
        if (p.name == "enc.mu.b") p.tensor.values()(0) += 0.05;
    auto drifted = vase::dream_loss(nets, snap, *h, cfg);
    CHECK(drifted.loss.item() > 0.0);
}

TEST_CASE("no gradient ever reaches snapshot parameters") {
    Rng init(7);
    Nets nets(small_config(), init);
    vase::ModelSnapshot<double> snap;
    snap.sync(nets, 1, 0);
    auto params = nets.main_params();
    params[2].tensor.values()(0) += 0.1;  // force nonzero dream loss

    Rng rng(8);
    auto h = vase::hallucinate_batch(snap, 0, 4, rng);
    vase::DreamConfig cfg;
    auto terms = vase::dream_loss(nets, snap, *h, cfg);
    for (auto& p : params) p.tensor.zero_grad();
    terms.loss.backward();

    bool live_grads = false;
    for (auto& p : params) live_grads |= p.tensor.grad().abs().maxCoeff() > 0;
    CHECK(live_grads);
    auto snap_params = const_cast<Nets&>(snap.nets()).all_params();
    for (auto& p : snap_params) {
        CHECK(!p.tensor.requires_grad());
        CHECK(!p.tensor.has_grad());
    }
}

TEST_CASE("dream loss gradients match finite differences") {
    Rng init(9);
    Nets nets(small_config(), init);
    vase::ModelSnapshot<double> snap;
    snap.sync(nets, 2, 0);
    auto params = nets.main_params();
    for (auto& p : params) {
        for (Index i = 0; i < p.tensor.size(); ++i)
            p.tensor.values()(i) += 0.01 * ((i % 3) - 1);
    }
    Rng rng(10);
    auto h = vase::hallucinate_batch(snap, 0, 3, rng);
    vase::DreamConfig cfg;
    cfg.w_enc = 3.0;
    cfg.w_dec = 2.0;
    std::vector<Tensor> inputs;
    for (auto& p : params) inputs.push_back(p.tensor);
    auto build = [&]() { return vase::dream_loss(nets, snap, *h, cfg).loss; };
    CHECK(oracles::max_grad_rel_error(inputs, build, 1e-4) < 1e-4);
}

TEST_SUITE_END();
