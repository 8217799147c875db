#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "arn/attacks.hpp"
#include "arn/dataset.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/trainer.hpp"

using namespace arn;

namespace {

// Logistic model as a 2-class net: logits (0, w*x + b); for w=1, b=0 the
// cross-entropy gradient w.r.t. x at label 0 is sigmoid(x) > 0.
Network<float> logistic_model(float w, float b) {
    NetworkSpec spec;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(1, 2)};
    Network<float> net("logistic", spec);
    net.params()[1].w = Tensor<float>({2, 1}, {0.0f, w});
    net.params()[1].b = Tensor<float>({2}, {0.0f, b});
    return net;
}

Network<float> zero_model() {
    NetworkSpec spec;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(4, 3)};
    return Network<float>("zero", spec);  // params default to zero
}

struct TrainedToy {
    LabeledDataset train, test;
    Network<float> model;
};

TrainedToy make_trained_toy(std::uint64_t seed) {
    TrainedToy toy;
    SeededRng r1 = SeededRng(seed).fork(1), r2 = SeededRng(seed).fork(2);
    toy.train = make_synthetic(4, 40, 16, 0.1, r1, Split::train);
    toy.test = make_synthetic(4, 50, 16, 0.1, r2, Split::test);
    toy.model = build_toynet<float>(4, {1, 16, 16});
    SeededRng init = SeededRng(seed).fork(3);
    toy.model.init_params(init);
    TargetTrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 20;
    cfg.seed = seed;
    train_target(toy.model, toy.train, &toy.test, cfg);
    return toy;
}

}  // namespace

TEST_CASE("fgsm with zero budget returns the input unchanged") {
    auto toy = make_trained_toy(1);
    AttackSpec spec;
    spec.kind = AttackKind::fgsm;
    spec.epsilon = 0.0;
    spec.steps = 1;
    const Tensor<float> x = gather_images(toy.test.images, {0, 1, 2});
    const auto adv = fgsm(toy.model, x, {toy.test.labels[0], toy.test.labels[1], toy.test.labels[2]}, spec);
    CHECK(bits_equal(adv, x));
}

TEST_CASE("fgsm on the 1-D logistic model moves by exactly +epsilon") {
    auto model = logistic_model(1.0f, 0.0f);
    AttackSpec spec;
    spec.kind = AttackKind::fgsm;
    spec.epsilon = 0.1;
    const Tensor<float> x({1, 1, 1, 1}, {0.5f});
    const auto adv = fgsm(model, x, {0}, spec);
    CHECK(adv[0] == doctest::Approx(0.6f).epsilon(1e-6));
}

TEST_CASE("a model with zero gradient everywhere leaves the input unchanged") {
    auto model = zero_model();
    AttackSpec spec;
    spec.kind = AttackKind::fgsm;
    spec.epsilon = 0.3;
    Tensor<float> x({2, 1, 2, 2}, {0.1f, 0.9f, 0.4f, 0.6f, 0.2f, 0.8f, 0.3f, 0.7f});
    // zero parameters: logits constant in x, so dCE/dx = 0 and sign(0) = 0
    const auto adv = fgsm(model, x, {0, 1}, spec);
    CHECK(bits_equal(adv, x));
}

TEST_CASE("pgd respects the ball and the pixel range on random cases") {
    auto toy = make_trained_toy(2);
    SeededRng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        AttackSpec spec;
        spec.kind = trial % 2 == 0 ? AttackKind::pgd : AttackKind::fgsm;
        spec.epsilon = rng.uniform(0.0, 0.5);
        spec.steps = spec.kind == AttackKind::pgd ? 5 : 1;
        spec.step_size = rng.uniform(0.01, 0.2);
        spec.rand_init = trial % 3 == 0;
        const std::vector<std::int64_t> idx{static_cast<std::int64_t>(rng.below(toy.test.count()))};
        const Tensor<float> x = gather_images(toy.test.images, idx);
        const std::vector<int> y{toy.test.labels[static_cast<std::size_t>(idx[0])]};
        const Tensor<float> adv = spec.kind == AttackKind::pgd ? pgd(toy.model, x, y, spec, rng.fork(trial))
                                                               : fgsm(toy.model, x, y, spec);
        const float bound = static_cast<float>(spec.epsilon) + std::exp2(-20.0f);
        for (std::int64_t i = 0; i < adv.size(); ++i) {
            REQUIRE(std::abs(adv[i] - x[i]) <= bound);
            REQUIRE(adv[i] >= 0.0f);
            REQUIRE(adv[i] <= 1.0f);
        }
    }
}

TEST_CASE("single-step pgd without random init equals fgsm bitwise") {
    auto toy = make_trained_toy(3);
    AttackSpec pgd_spec;
    pgd_spec.kind = AttackKind::pgd;
    pgd_spec.epsilon = 0.3;
    pgd_spec.steps = 1;
    pgd_spec.step_size = 0.3;
    pgd_spec.rand_init = false;
    AttackSpec fgsm_spec = pgd_spec;
    fgsm_spec.kind = AttackKind::fgsm;

    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < 40; ++i) idx.push_back(i);
    const Tensor<float> x = gather_images(toy.test.images, idx);
    std::vector<int> y;
    for (std::int64_t i : idx) y.push_back(toy.test.labels[static_cast<std::size_t>(i)]);
    CHECK(bits_equal(pgd(toy.model, x, y, pgd_spec), fgsm(toy.model, x, y, fgsm_spec)));

    // larger step size saturates at the same projection
    pgd_spec.step_size = 0.5;
    CHECK(bits_equal(pgd(toy.model, x, y, pgd_spec), fgsm(toy.model, x, y, fgsm_spec)));
}

TEST_CASE("pgd with zero budget is the identity regardless of steps") {
    auto toy = make_trained_toy(4);
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.epsilon = 0.0;
    spec.steps = 7;
    spec.rand_init = true;
    const Tensor<float> x = gather_images(toy.test.images, {5, 6});
    const auto adv = pgd(toy.model, x, {toy.test.labels[5], toy.test.labels[6]}, spec, SeededRng(1));
    CHECK(bits_equal(adv, x));
}

TEST_CASE("non-targeted pgd increases the cross-entropy on most points") {
    auto toy = make_trained_toy(5);
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.epsilon = 0.3;
    spec.steps = 10;
    spec.step_size = 0.05;
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < toy.test.count(); ++i) idx.push_back(i);
    const Tensor<float> x = gather_images(toy.test.images, idx);
    const Tensor<float> adv = run_attack(toy.model, toy.test, spec, SeededRng(9));

    int increased = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::vector<std::int64_t> one{static_cast<std::int64_t>(i)};
        const std::vector<int> y{toy.test.labels[i]};
        const double before = softmax_cross_entropy(toy.model.forward_eval(gather_images(x, one)), y).value;
        const double after = softmax_cross_entropy(toy.model.forward_eval(gather_images(adv, one)), y).value;
        if (after >= before) ++increased;
    }
    CHECK(static_cast<double>(increased) / static_cast<double>(idx.size()) >= 0.9);
}

TEST_CASE("targeted attack with target equal to the true label is rejected") {
    auto toy = make_trained_toy(6);
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.targeted = true;
    spec.target_label = toy.test.labels[0];
    LabeledDataset one = toy.test;
    one.images = gather_images(toy.test.images, {0});
    one.labels = {toy.test.labels[0]};
    CHECK_THROWS_AS(run_attack(toy.model, one, spec, SeededRng(1)), ConfigError);
}

TEST_CASE("zero-flow spatial transform is the identity warp") {
    auto toy = make_trained_toy(7);
    AttackSpec spec;
    spec.kind = AttackKind::sta_lite;
    spec.epsilon = 0.1;
    spec.steps = 1;
    const Tensor<float> x = gather_images(toy.test.images, {0, 1});
    Tensor<float> warped = x;
    Tensor<float> zero_flow({2, 2, 16, 16});
    for (std::int64_t n = 0; n < 2; ++n) {
        arn::detail::warp_image(x.data() + n * 256, 1, 16, 16, zero_flow.data() + n * 512,
                                warped.data() + n * 256);
    }
    CHECK(bits_equal(warped, x));
}

TEST_CASE("a constant +1 pixel flow translates the interior exactly") {
    Tensor<float> x({1, 1, 5, 5});
    x[2 * 5 + 3] = 1.0f;  // single hot pixel at (2,3)
    Tensor<float> flow({1, 2, 5, 5});
    for (std::int64_t i = 0; i < 25; ++i) {
        flow[i] = 1.0f;       // sample from one row below
        flow[25 + i] = 0.0f;
    }
    Tensor<float> warped = x;
    arn::detail::warp_image(x.data(), 1, 5, 5, flow.data(), warped.data());
    CHECK(warped[1 * 5 + 3] == 1.0f);  // hot pixel appears one row up
    CHECK(warped[2 * 5 + 3] == 0.0f);
}

TEST_CASE("spatial transform fools a trained model more than a zero-budget attack") {
    // a low-margin model: noisy 10-class data shrinks the decision margins
    // enough for small warps to matter
    SeededRng r1(80), r2(81), init(82);
    LabeledDataset train = make_synthetic(10, 30, 16, 0.3, r1, Split::train);
    LabeledDataset test = make_synthetic(10, 12, 16, 0.3, r2, Split::test);
    auto model = build_toynet<float>(10, {1, 16, 16});
    model.init_params(init);
    TargetTrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 30;
    cfg.seed = 8;
    train_target(model, train, &test, cfg);

    AttackSpec spec;
    spec.kind = AttackKind::sta_lite;
    spec.epsilon = 0.15;
    spec.steps = 40;

    const Tensor<float> adv = run_attack(model, test, spec, SeededRng(3));
    const auto clean_pred = predict(model, test.images);
    const auto adv_pred = predict(model, adv);
    int flips = 0;
    for (std::size_t i = 0; i < adv_pred.size(); ++i) {
        if (adv_pred[i] != test.labels[i] && clean_pred[i] == test.labels[i]) ++flips;
    }
    CHECK(flips > 0);  // strictly above the 0% zero-budget baseline
    // and the warp stays within the pixel range
    for (std::int64_t i = 0; i < adv.size(); ++i) {
        REQUIRE(adv[i] >= 0.0f);
        REQUIRE(adv[i] <= 1.0f);
    }
}

TEST_CASE("bpda with an identity defense is exactly pgd") {
    auto toy = make_trained_toy(9);
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.epsilon = 0.2;
    spec.steps = 5;
    spec.step_size = 0.05;
    const Tensor<float> x = gather_images(toy.test.images, {0, 1, 2, 3});
    const std::vector<int> y{toy.test.labels[0], toy.test.labels[1], toy.test.labels[2], toy.test.labels[3]};
    const auto direct = pgd(toy.model, x, y, spec, SeededRng(77));
    const auto via_bpda =
        bpda_attack([](const Tensor<float>& v) { return v; }, toy.model, x, y, spec, SeededRng(77));
    CHECK(bits_equal(direct, via_bpda));
}

TEST_CASE("bpda with zero budget is the identity") {
    auto toy = make_trained_toy(10);
    AttackSpec spec;
    spec.kind = AttackKind::bpda_pgd;
    spec.epsilon = 0.0;
    spec.steps = 3;
    const Tensor<float> x = gather_images(toy.test.images, {0});
    const auto adv =
        bpda_attack([](const Tensor<float>& v) { return v; }, toy.model, x, {toy.test.labels[0]}, spec,
                    SeededRng(1));
    CHECK(bits_equal(adv, x));
}

TEST_CASE("craft_dataset tags each example with its 1-based spec index") {
    auto toy = make_trained_toy(11);
    AttackSpec pgd_n;
    pgd_n.kind = AttackKind::pgd;
    pgd_n.steps = 3;
    pgd_n.step_size = 0.15;
    AttackSpec pgd_t = pgd_n;
    pgd_t.targeted = true;

    const auto crafted = craft_dataset(toy.model, toy.test, {pgd_n, pgd_t}, SeededRng(13));
    CHECK(crafted.K == 2);
    CHECK(crafted.count() == toy.test.count() * 2);
    const auto counts = crafted.type_counts();
    CHECK(counts[0] == toy.test.count());
    CHECK(counts[1] == toy.test.count());
    CHECK(crafted.attack_type.front() == 1);
    CHECK(crafted.attack_type.back() == 2);
    // paired natural images are the originals
    for (std::int64_t i = 0; i < toy.test.images.size(); ++i) {
        REQUIRE(crafted.natural[i] == toy.test.images[i]);
    }

    // single spec: every type index is 1
    const auto single = craft_dataset(toy.model, toy.test, {pgd_n}, SeededRng(13));
    CHECK(single.K == 1);
    for (int t : single.attack_type) REQUIRE(t == 1);

    CHECK_THROWS_AS(craft_dataset(toy.model, toy.test, {}, SeededRng(13)), ConfigError);
}

TEST_CASE("crafting is deterministic under a fixed seed and independent of thread count") {
    auto toy = make_trained_toy(12);
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.steps = 4;
    spec.step_size = 0.1;
    spec.rand_init = true;
    const auto a = craft_dataset(toy.model, toy.test, {spec}, SeededRng(21));
    const auto b = craft_dataset(toy.model, toy.test, {spec}, SeededRng(21));
    CHECK(bits_equal(a.adversarial, b.adversarial));

    setenv("ARN_THREADS", "1", 1);
    const auto c = craft_dataset(toy.model, toy.test, {spec}, SeededRng(21));
    unsetenv("ARN_THREADS");
    CHECK(bits_equal(a.adversarial, c.adversarial));
}

TEST_CASE("pgd fooling rate is non-decreasing in the budget") {
    auto toy = make_trained_toy(13);
    double prev_err = -1.0;
    for (double eps : {0.0, 0.1, 0.2, 0.3, 0.4}) {
        AttackSpec spec;
        spec.kind = AttackKind::pgd;
        spec.epsilon = eps;
        spec.steps = 10;
        spec.step_size = 0.05;
        const Tensor<float> adv = run_attack(toy.model, toy.test, spec, SeededRng(31));
        const auto pred = predict(toy.model, adv);
        std::int64_t errors = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] != toy.test.labels[i]) ++errors;
        }
        const double err = static_cast<double>(errors) / static_cast<double>(pred.size());
        CHECK(err >= prev_err);
        prev_err = err;
    }
}
