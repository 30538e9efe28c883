#include <doctest.h>

#include "vase/losses.hpp"
#include "vase/networks.hpp"
#include "vase/registry.hpp"

using vase::Index;
using vase::LatentMask;
using vase::Rng;
using vase::VecX;

namespace {

vase::RegistryConfig small_registry() {
    vase::RegistryConfig cfg;
    cfg.max_environments = 3;
    cfg.kappa = 1.5;
    cfg.debounce_window = 3;
    return cfg;
}

LatentMask mask_of(std::initializer_list<double> bits) {
    LatentMask m;
    m.bits = VecX<double>(static_cast<Index>(bits.size()));
    Index i = 0;
    for (double b : bits) m.bits(i++) = b;
    m.alpha = VecX<double>::Zero(m.bits.size());
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("registry");

TEST_CASE("classify_env: no records, single record, tie break") {
    vase::Registry reg(small_registry());
    VecX<double> probs(3);
    probs << 0.2, 0.5, 0.3;
    CHECK(!reg.classify_env(probs).has_value());

    reg.infer_environment(mask_of({1, 1}), [](int) { return 1.0; }, std::nullopt);
    CHECK(reg.count() == 1);
    CHECK(*reg.classify_env(probs) == 0);  // argmax restricted to known indices

    reg.record(0).running_loss = 1.0;
    reg.record(0).sample_count = 1;

    // allocate a second record, then feed uniform probabilities
    for (int i = 0; i < 3; ++i)
        reg.infer_environment(mask_of({1, 1}), [](int) { return 10.0; }, 0);
    CHECK(reg.count() == 2);
    VecX<double> uniform = VecX<double>::Constant(3, 1.0 / 3.0);
    CHECK(*reg.classify_env(uniform) == 0);  // tie broken toward the lowest index
}

TEST_CASE("loss ratio above kappa allocates after the debounce window") {
    vase::Registry reg(small_registry());
    reg.infer_environment(mask_of({1, 1}), [](int) { return 1.0; }, std::nullopt);
    reg.record(0).running_loss = 100.0;
    reg.record(0).sample_count = 10;

    // 1.6x the running loss with kappa = 1.5: candidate fails the check
    auto losses = [](int) { return 160.0; };
    auto d1 = reg.infer_environment(mask_of({1, 1}), losses, 0);
    CHECK(!d1.allocated);
    CHECK(d1.pending_allocation);
    CHECK(d1.env == 0);
    auto d2 = reg.infer_environment(mask_of({1, 1}), losses, 0);
    CHECK(!d2.allocated);
    auto d3 = reg.infer_environment(mask_of({1, 1}), losses, 0);
    CHECK(d3.allocated);
    CHECK(d3.env == 1);
    CHECK(reg.count() == 2);
}

TEST_CASE("a used component masked in the current batch allocates despite good loss") {
    vase::Registry reg(small_registry());
    reg.infer_environment(mask_of({1, 1, 1}), [](int) { return 1.0; }, std::nullopt);
    auto& rec = reg.record(0);
    rec.running_loss = 100.0;
    rec.sample_count = 10;
    rec.used = VecX<double>(3);
    rec.used << 1, 1, 0;  // decoder uses dims 0 and 1 only

    // batch mask disagrees on a used dim -> new environment path
    auto good = [](int) { return 90.0; };
    LatentMask batch = mask_of({1, 0, 1});
    vase::InferenceDecision last;
    for (int i = 0; i < 3; ++i) last = reg.infer_environment(batch, good, 0);
    CHECK(last.allocated);
    CHECK(last.mask_mismatch);
    CHECK(reg.count() == 2);

    // disagreement only on an unused dim is ignored
    vase::Registry reg2(small_registry());
    reg2.infer_environment(mask_of({1, 1, 1}), [](int) { return 1.0; }, std::nullopt);
    auto& rec2 = reg2.record(0);
    rec2.running_loss = 100.0;
    rec2.sample_count = 10;
    rec2.used = VecX<double>(3);
    rec2.used << 1, 1, 0;
    auto d = reg2.infer_environment(mask_of({1, 1, 0}), good, 0);
    CHECK(!d.pending_allocation);
    CHECK(d.env == 0);
}

TEST_CASE("both checks passing keeps the candidate and resets the debounce") {
    vase::Registry reg(small_registry());
    reg.infer_environment(mask_of({1, 1}), [](int) { return 1.0; }, std::nullopt);
    reg.record(0).running_loss = 100.0;
    reg.record(0).sample_count = 5;

    auto bad = [](int) { return 200.0; };
    auto good = [](int) { return 100.0; };
    reg.infer_environment(mask_of({1, 1}), bad, 0);
    reg.infer_environment(mask_of({1, 1}), bad, 0);
    CHECK(reg.debounce_counter() == 2);
    auto d = reg.infer_environment(mask_of({1, 1}), good, 0);
    CHECK(d.env == 0);
    CHECK(reg.debounce_counter() == 0);
    CHECK(reg.count() == 1);
}

TEST_CASE("exhausting the registry capacity throws") {
    vase::RegistryConfig cfg = small_registry();
    cfg.max_environments = 1;
    cfg.debounce_window = 1;
    vase::Registry reg(cfg);
    reg.infer_environment(mask_of({1}), [](int) { return 1.0; }, std::nullopt);
    reg.record(0).running_loss = 1.0;
    reg.record(0).sample_count = 1;
    CHECK_THROWS_AS(
        reg.infer_environment(mask_of({1}), [](int) { return 100.0; }, 0),
        vase::CapacityExhausted);
}

TEST_CASE("running loss: fixed point, direct formula, first observation, non-finite") {
    vase::EnvironmentRecord rec;
    vase::Registry::update_running_loss(rec, 42.0, 0.99);
    CHECK(rec.running_loss == 42.0);  // first observation
    CHECK(rec.sample_count == 1);

    rec.running_loss = 100.0;
    vase::Registry::update_running_loss(rec, 200.0, 0.99);
    CHECK(rec.running_loss == doctest::Approx(101.0));

    // constant stream converges to the constant
    vase::EnvironmentRecord c;
    for (int i = 0; i < 2000; ++i) vase::Registry::update_running_loss(c, 7.0, 0.99);
    CHECK(c.running_loss == doctest::Approx(7.0));

    const long count = rec.sample_count;
    vase::Registry::update_running_loss(rec, std::nan(""), 0.99);
    CHECK(rec.running_loss == doctest::Approx(101.0));
    CHECK(rec.sample_count == count);
}

TEST_CASE("environment indices are stable across consistent batches") {
    vase::Registry reg(small_registry());
    reg.infer_environment(mask_of({1, 1}), [](int) { return 1.0; }, std::nullopt);
    reg.record(0).running_loss = 50.0;
    reg.record(0).sample_count = 3;
    for (int i = 0; i < 20; ++i) {
        auto d = reg.infer_environment(mask_of({1, 1}), [](int) { return 50.0; }, 0);
        CHECK(d.env == 0);
        CHECK(!d.allocated);
    }
    CHECK(reg.count() == 1);
}

TEST_CASE("classifier loss: perfect prediction, degenerate case, encoder isolation") {
    using Tensor = vase::TensorT<double>;
    // near-perfect logits give near-zero loss
    Tensor logits = Tensor::zeros({4, 3});
    for (Index i = 0; i < 4; ++i) logits.values()(i * 3 + 1) = 50.0;
    auto perfect = vase::env_classifier_loss<double>(logits, 1, nullptr, 0, 3);
    CHECK(perfect.item() == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(vase::env_classifier_loss<double>(logits, 3, nullptr, 0, 3),
                    std::invalid_argument);

    // m=1, no hallucinations: plain cross-entropy toward index 0
    Tensor l2 = Tensor::zeros({2, 3}, true);
    auto plain = vase::env_classifier_loss<double>(l2, 0, nullptr, 0, 3);
    CHECK(plain.item() == doctest::Approx(std::log(3.0)));

    // gradients from the classifier loss never reach the encoder
    vase::ModelConfig cfg;
    cfg.latent_dim = 3;
    cfg.hidden = 8;
    cfg.image_h = 4;
    cfg.image_w = 4;
    cfg.max_environments = 3;
    Rng rng(17);
    vase::VaseNetworks<double> nets(cfg, rng);
    Tensor x = Tensor::zeros({2, 16});
    rng.fill_uniform(x.values(), 0.0, 1.0);
    auto enc = nets.encode(x);
    auto cls_logits = nets.classifier_logits(enc.hidden);
    auto loss = vase::env_classifier_loss<double>(cls_logits, 0, nullptr, 0, 3);
    for (auto& p : nets.main_params()) p.tensor.zero_grad();
    for (auto& p : nets.classifier_params()) p.tensor.zero_grad();
    loss.backward();
    for (auto& p : nets.main_params())
        CHECK(p.tensor.grad().abs().maxCoeff() == 0.0);
    bool cls_has_grad = false;
    for (auto& p : nets.classifier_params())
        cls_has_grad |= p.tensor.grad().abs().maxCoeff() > 0.0;
    CHECK(cls_has_grad);
}

TEST_SUITE_END();
