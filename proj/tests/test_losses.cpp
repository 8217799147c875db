#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "arn/defense.hpp"
#include "arn/gradcheck.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/rng.hpp"

using namespace arn;

namespace {

// Logits whose softmax is exactly the given probability row.
template <typename T>
Tensor<T> logits_for(const std::vector<std::vector<double>>& probs) {
    const std::int64_t B = static_cast<std::int64_t>(probs.size());
    const std::int64_t K = static_cast<std::int64_t>(probs[0].size());
    Tensor<T> t({B, K});
    for (std::int64_t n = 0; n < B; ++n) {
        for (std::int64_t k = 0; k < K; ++k) {
            t[n * K + k] = static_cast<T>(std::log(probs[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)]));
        }
    }
    return t;
}

// Monte-Carlo KL(N(mu, diag var) || N(0, I)) by sampling from the fitted
// Gaussian; the independent oracle for the closed-form normalization term.
double mc_kl_to_standard_normal(const std::vector<double>& mu, const std::vector<double>& var,
                                std::int64_t samples, SeededRng& rng) {
    const std::size_t D = mu.size();
    double acc = 0.0;
    for (std::int64_t s = 0; s < samples; ++s) {
        double log_ratio = 0.0;  // log q(x) - log p(x); the 2*pi terms cancel
        for (std::size_t d = 0; d < D; ++d) {
            const double x = mu[d] + std::sqrt(var[d]) * rng.normal();
            const double zq = x - mu[d];
            log_ratio += -0.5 * std::log(var[d]) - 0.5 * zq * zq / var[d] + 0.5 * x * x;
        }
        acc += log_ratio;
    }
    return acc / static_cast<double>(samples);
}

}  // namespace

TEST_CASE("attack-type cross-entropy: frozen analytic values") {
    // uniform over K=2 -> ln 2
    const auto uniform = loss_da(Tensor<double>({3, 2}), {1, 2, 1});
    CHECK(uniform.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // softmax (0.9, 0.1), true type 1 -> -ln 0.9
    const auto confident = loss_da(logits_for<double>({{0.9, 0.1}}), {1});
    CHECK(confident.value == doctest::Approx(-std::log(0.9)).epsilon(1e-9));

    // confidence pushed to the clamp -> loss approaches 0
    Tensor<double> sharp({1, 2}, {40.0, -40.0});
    CHECK(loss_da(sharp, {1}).value == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(loss_da(Tensor<double>({1, 2}), {3}), ConfigError);
}

TEST_CASE("attack-confusion loss: frozen analytic values and minimum") {
    // uniform softmax attains the minimum ln K
    for (int K : {2, 3, 5}) {
        const auto l = loss_att(Tensor<double>({4, K}));
        CHECK(l.value == doctest::Approx(std::log(static_cast<double>(K))).epsilon(1e-12));
    }
    // softmax (0.9, 0.1) -> -(ln 0.9 + ln 0.1) / 2
    const auto l = loss_att(logits_for<double>({{0.9, 0.1}}));
    CHECK(l.value == doctest::Approx(-0.5 * (std::log(0.9) + std::log(0.1))).epsilon(1e-9));
    CHECK(l.value == doctest::Approx(1.20397).epsilon(1e-4));

    // K=1 degenerates: the only softmax is 1, both losses vanish
    Tensor<double> single({3, 1}, {5.0, -1.0, 0.3});
    CHECK(loss_att(single).value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_da(single, {1, 1, 1}).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("attack-confusion loss is bounded below by ln K over random logits") {
    SeededRng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t K = 2 + static_cast<std::int64_t>(rng.below(5));
        Tensor<double> logits({2, K});
        for (std::int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-6, 6);
        REQUIRE(loss_att(logits).value >= std::log(static_cast<double>(K)) - 1e-12);
    }
}

TEST_CASE("normalization term: exact moments give exact values") {
    // slice values {+1,-1} per dim: mu=0, var=1 -> KL 0
    Tensor<double> unit({2, 3}, {1, 1, 1, -1, -1, -1});
    CHECK(loss_nor(unit, {1, 1}, 1).value == doctest::Approx(0.0).epsilon(1e-12));

    // mu=(1,0,0), var=1 -> 0.5 * ||mu||^2 = 0.5
    Tensor<double> shifted({2, 3}, {2, 1, 1, 0, -1, -1});
    CHECK(loss_nor(shifted, {1, 1}, 1).value == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("normalization term equals half the squared mean when variance is one") {
    SeededRng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t D = 1 + static_cast<std::int64_t>(rng.below(6));
        Tensor<double> latents({2, D});
        double sq = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            const double mu = rng.uniform(-2, 2);
            latents[d] = mu + 1.0;       // pair (mu+1, mu-1): mean mu, population var 1
            latents[D + d] = mu - 1.0;
            sq += mu * mu;
        }
        REQUIRE(loss_nor(latents, {1, 1}, 1).value == doctest::Approx(0.5 * sq).epsilon(1e-9));
    }
}

TEST_CASE("normalization term matches a Monte-Carlo KL oracle within 2%") {
    SeededRng rng(23);
    const std::int64_t B = 64, D = 4;
    Tensor<double> latents({B, D});
    std::vector<int> types;
    for (std::int64_t n = 0; n < B; ++n) {
        types.push_back(n % 2 == 0 ? 1 : 2);
        for (std::int64_t d = 0; d < D; ++d) {
            latents[n * D + d] = rng.normal(0.5 * (n % 2), 0.8 + 0.2 * static_cast<double>(d));
        }
    }
    const double closed = loss_nor(latents, types, 2).value;

    double oracle = 0.0;
    for (int k = 1; k <= 2; ++k) {
        std::vector<double> mu(D, 0.0), var(D, 0.0);
        std::int64_t count = 0;
        for (std::int64_t n = 0; n < B; ++n) {
            if (types[static_cast<std::size_t>(n)] != k) continue;
            ++count;
            for (std::int64_t d = 0; d < D; ++d) mu[static_cast<std::size_t>(d)] += latents[n * D + d];
        }
        for (auto& m : mu) m /= static_cast<double>(count);
        for (std::int64_t n = 0; n < B; ++n) {
            if (types[static_cast<std::size_t>(n)] != k) continue;
            for (std::int64_t d = 0; d < D; ++d) {
                const double c = latents[n * D + d] - mu[static_cast<std::size_t>(d)];
                var[static_cast<std::size_t>(d)] += c * c;
            }
        }
        for (auto& v : var) v /= static_cast<double>(count);
        SeededRng mc_rng = rng.fork(static_cast<std::uint64_t>(k));
        oracle += mc_kl_to_standard_normal(mu, var, 200000, mc_rng);
    }
    oracle /= 2.0;
    CHECK(closed == doctest::Approx(oracle).epsilon(0.02));
}

TEST_CASE("normalization term rejects slices that cannot carry a variance") {
    Tensor<double> latents({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(loss_nor(latents, {1, 1, 2}, 2), ConfigError);  // type 2 has one example
}

TEST_CASE("normalization gradient matches finite differences") {
    SeededRng rng(29);
    Tensor<double> latents({6, 3});
    for (std::int64_t i = 0; i < latents.size(); ++i) latents[i] = rng.uniform(-2, 2);
    const std::vector<int> types{1, 2, 1, 2, 1, 2};
    auto f = [&](const std::vector<double>& p) {
        return loss_nor(Tensor<double>({6, 3}, p), types, 2).value;
    };
    const auto res = loss_nor(latents, types, 2);
    const auto rep = gradcheck(f, std::vector<double>(latents.vec().begin(), latents.vec().end()),
                               std::vector<double>(res.grad.vec().begin(), res.grad.vec().end()));
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("pixel reconstruction error: frozen values and gradient") {
    Tensor<double> a({2, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    CHECK(loss_mse(a, a).value == 0.0);

    Tensor<double> b = a;
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] += 0.1;
    CHECK(loss_mse(b, a).value == doctest::Approx(0.01).epsilon(1e-9));

    auto f = [&](const std::vector<double>& p) { return loss_mse(Tensor<double>(a.shape(), p), a).value; };
    const auto res = loss_mse(b, a);
    const auto rep = gradcheck(f, std::vector<double>(b.vec().begin(), b.vec().end()),
                               std::vector<double>(res.grad.vec().begin(), res.grad.vec().end()));
    CHECK(rep.pass);

    Tensor<double> wrong({2, 4});
    CHECK_THROWS_AS(loss_mse(wrong, a), ConfigError);
}

TEST_CASE("image-discriminator loss: frozen value, asymmetry, saturation clamp") {
    Tensor<double> half({2, 1}, {0.5, 0.5});
    CHECK(loss_di(half, half).value == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));

    Tensor<double> fake({2, 1}, {0.2, 0.3});
    Tensor<double> real({2, 1}, {0.8, 0.9});
    const double fr = loss_di(fake, real).value;
    const double rf = loss_di(real, fake).value;
    CHECK(fr < rf);  // correct discrimination scores lower than an inverted one

    // the loss decreases as fakes are scored lower and reals higher
    Tensor<double> fake2({2, 1}, {0.1, 0.2});
    Tensor<double> real2({2, 1}, {0.9, 0.95});
    CHECK(loss_di(fake2, real2).value < fr);

    // exact 0/1 values are clamped, not infinite
    Tensor<double> zero({1, 1}, {0.0});
    Tensor<double> one({1, 1}, {1.0});
    CHECK(std::isfinite(loss_di(zero, one).value));
}

TEST_CASE("generator adversarial loss: frozen values, monotone decreasing") {
    Tensor<double> half({1, 1}, {0.5});
    CHECK(loss_adv(half).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor<double> one({1, 1}, {1.0});
    CHECK(loss_adv(one).value == doctest::Approx(0.0).epsilon(1e-6));

    double prev = 1e9;
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const double v = loss_adv(Tensor<double>({1, 1}, {p})).value;
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("combined objectives are the stated weighted sums") {
    const LossWeights w{0.1, 0.01, 0.1};
    CHECK(loss_E(1.0, 2.0, 3.0, w) == doctest::Approx(1.23).epsilon(1e-12));
    CHECK(loss_G(1.0, 2.0, w) == doctest::Approx(1.2).epsilon(1e-12));

    // zero weights ablate terms without touching the remaining ones
    const LossWeights off{0.0, 0.0, 0.0};
    CHECK(loss_E(1.5, 99.0, 99.0, off) == 1.5);
    CHECK(loss_G(1.5, 99.0, off) == 1.5);

    SeededRng rng(37);
    for (int trial = 0; trial < 100; ++trial) {
        LossWeights rw{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
        const double mse = rng.uniform(0, 3), att = rng.uniform(0, 3), nor = rng.uniform(0, 3);
        REQUIRE(loss_E(mse, att, nor, rw) ==
                doctest::Approx(mse + rw.lambda1 * att + rw.lambda2 * nor).epsilon(1e-12));
    }
    const LossWeights negative{-0.1, 0.0, 0.0};
    CHECK_THROWS_AS(negative.validate(), ConfigError);
}

TEST_CASE("gradient routing: discriminator losses leave the adversary constant") {
    // loss_att's backward through D_A with a null sink must leave a zeroed
    // sink untouched, and loss_da on a detached latent never reaches E.
    auto enc = build_encoder<double>(4, {1, 8, 8});
    auto da = build_attack_discriminator<double>(2, 4);
    SeededRng rng(41);
    enc.init_params(rng);
    da.init_params(rng);
    Tensor<double> x({4, 1, 8, 8});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();

    Cache<double> ce, cda;
    const auto& latent = enc.forward(x, ce);
    const auto& logits = da.forward(latent, cda);

    GradSink<double> da_sink = da.make_grad_sink();
    const auto att = loss_att(logits);
    da.backward(att.grad, cda, nullptr);  // encoder update path: D_A params constant
    for (const auto& g : da_sink.grads) {
        for (std::int64_t i = 0; i < g.w.size(); ++i) REQUIRE(g.w[i] == 0.0);
        for (std::int64_t i = 0; i < g.b.size(); ++i) REQUIRE(g.b[i] == 0.0);
    }

    GradSink<double> enc_sink = enc.make_grad_sink();
    const auto da_loss = loss_da(logits, {1, 2, 1, 2});
    da.backward(da_loss.grad, cda, &da_sink);  // discriminator update path stops at the latent
    for (const auto& g : enc_sink.grads) {
        for (std::int64_t i = 0; i < g.w.size(); ++i) REQUIRE(g.w[i] == 0.0);
    }
    // and the discriminator did receive gradient
    double total = 0.0;
    for (const auto& g : da_sink.grads) {
        for (std::int64_t i = 0; i < g.w.size(); ++i) total += std::abs(g.w[i]);
    }
    CHECK(total > 0.0);
}

TEST_CASE("denoise preserves shape and lands strictly inside (0,1)") {
    auto enc = build_encoder<float>(8, {1, 16, 16});
    auto dec = build_decoder<float>(8, {1, 16, 16});
    SeededRng rng(43);
    enc.init_params(rng);
    dec.init_params(rng);
    Tensor<float> x({3, 1, 16, 16});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());
    const auto restored = denoise(enc, dec, x);
    CHECK(restored.shape() == x.shape());
    for (std::int64_t i = 0; i < restored.size(); ++i) {
        REQUIRE(restored[i] > 0.0f);
        REQUIRE(restored[i] < 1.0f);
    }
}
