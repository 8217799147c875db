#pragma once

// The training objectives. Every loss returns its scalar value together with
// the gradient w.r.t. its direct input; routing those gradients into the
// right networks is the trainer's job. All losses are batch means, so the
// trade-off weights keep their meaning across batch sizes.

#include <cmath>
#include <cstdint>
#include <vector>

#include "arn/errors.hpp"
#include "arn/layers.hpp"
#include "arn/tensor.hpp"

namespace arn {

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;  // d value / d input
};

struct LossWeights {
    double lambda1 = 0.1;   // attack-invariance term
    double lambda2 = 0.01;  // latent normalization term
    double theta = 0.1;     // pixel-space adversarial term

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || theta < 0) throw ConfigError("loss weights must be >= 0");
    }
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* who) {
    if (!t.all_finite()) throw ConfigError(std::string(who) + ": non-finite input");
}

constexpr double kProbClamp = 1e-7;
constexpr double kVarianceFloor = 1e-6;

}  // namespace detail

// Mean cross-entropy of softmax(logits) against integer class labels; the
// workhorse for classifier training and for attack objectives.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    detail::check_finite(logits, "softmax_cross_entropy");
    const std::int64_t B = logits.dim(0), D = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != B) throw ConfigError("label count mismatch");
    Tensor<T> probs(logits.shape());
    kernels::softmax_rows(logits, probs);
    LossResult<T> res;
    res.grad = probs;
    double loss = 0.0;
    for (std::int64_t n = 0; n < B; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= D) throw ConfigError("label out of range");
        const double p = std::max(static_cast<double>(probs[n * D + y]), detail::kProbClamp);
        loss -= std::log(p);
        res.grad[n * D + y] -= T(1);
    }
    const T inv = T(1) / static_cast<T>(B);
    for (std::int64_t i = 0; i < res.grad.size(); ++i) res.grad[i] *= inv;
    res.value = loss / static_cast<double>(B);
    return res;
}

// Attack discriminator objective: cross-entropy against the one-hot attack
// type, type indices 1-based in {1..K}.
template <typename T>
LossResult<T> loss_da(const Tensor<T>& da_logits, const std::vector<int>& type_indices) {
    std::vector<int> zero_based(type_indices.size());
    for (std::size_t i = 0; i < type_indices.size(); ++i) {
        if (type_indices[i] < 1 || type_indices[i] > da_logits.dim(1)) {
            throw ConfigError("attack type index out of range");
        }
        zero_based[i] = type_indices[i] - 1;
    }
    return softmax_cross_entropy(da_logits, zero_based);
}

// Encoder adversary: cross-entropy against the attack-confused label
// (1/K,...,1/K). Minimum ln K, attained exactly at the uniform softmax.
template <typename T>
LossResult<T> loss_att(const Tensor<T>& da_logits) {
    detail::check_finite(da_logits, "loss_att");
    const std::int64_t B = da_logits.dim(0), K = da_logits.dim(1);
    Tensor<T> probs(da_logits.shape());
    kernels::softmax_rows(da_logits, probs);
    LossResult<T> res;
    res.grad = probs;
    double loss = 0.0;
    const double invK = 1.0 / static_cast<double>(K);
    for (std::int64_t n = 0; n < B; ++n) {
        for (std::int64_t k = 0; k < K; ++k) {
            const double p = std::max(static_cast<double>(probs[n * K + k]), detail::kProbClamp);
            loss -= invK * std::log(p);
            res.grad[n * K + k] -= static_cast<T>(invK);
        }
    }
    const T inv = T(1) / static_cast<T>(B);
    for (std::int64_t i = 0; i < res.grad.size(); ++i) res.grad[i] *= inv;
    res.value = loss / static_cast<double>(B);
    return res;
}

// Per-type diagonal-Gaussian fit of the latent batch slice, scored against
// the standard normal prior: KL_k = 0.5 * sum_d (var + mu^2 - 1 - ln var),
// averaged over the K types. Population moments; each slice needs >= 2
// examples for the variance to mean anything.
template <typename T>
LossResult<T> loss_nor(const Tensor<T>& latents, const std::vector<int>& type_indices, int K) {
    detail::check_finite(latents, "loss_nor");
    if (latents.rank() != 2) throw ConfigError("loss_nor expects [B,D] latents");
    const std::int64_t B = latents.dim(0), D = latents.dim(1);
    if (static_cast<std::int64_t>(type_indices.size()) != B) throw ConfigError("type index count mismatch");

    LossResult<T> res;
    res.grad = Tensor<T>(latents.shape());
    double total = 0.0;
    std::vector<std::int64_t> slice;
    for (int k = 1; k <= K; ++k) {
        slice.clear();
        for (std::int64_t n = 0; n < B; ++n) {
            if (type_indices[static_cast<std::size_t>(n)] == k) slice.push_back(n);
        }
        if (slice.size() < 2) {
            throw ConfigError("loss_nor: attack type " + std::to_string(k) + " has " +
                              std::to_string(slice.size()) + " examples in batch, need >= 2");
        }
        const double inv_n = 1.0 / static_cast<double>(slice.size());
        double kl = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double mu = 0.0;
            for (std::int64_t n : slice) mu += static_cast<double>(latents[n * D + d]);
            mu *= inv_n;
            double var = 0.0;
            for (std::int64_t n : slice) {
                const double c = static_cast<double>(latents[n * D + d]) - mu;
                var += c * c;
            }
            var *= inv_n;
            const bool floored = var < detail::kVarianceFloor;
            const double v = floored ? detail::kVarianceFloor : var;
            kl += 0.5 * (v + mu * mu - 1.0 - std::log(v));
            // d KL / d x_n = (1/n) * [(1 - 1/v)(x_n - mu) + mu]; the variance
            // path is cut when the floor clamps it.
            const double vcoef = floored ? 0.0 : (1.0 - 1.0 / v);
            for (std::int64_t n : slice) {
                const double c = static_cast<double>(latents[n * D + d]) - mu;
                res.grad[n * D + d] += static_cast<T>(inv_n / K * (vcoef * c + mu));
            }
        }
        total += kl;
    }
    res.value = total / static_cast<double>(K);
    return res;
}

// Pixel reconstruction error: mean squared difference over batch and pixels.
template <typename T>
LossResult<T> loss_mse(const Tensor<T>& restored, const Tensor<T>& natural) {
    if (restored.shape() != natural.shape()) {
        throw ConfigError("loss_mse shape mismatch " + shape_str(restored.shape()) + " vs " +
                          shape_str(natural.shape()));
    }
    LossResult<T> res;
    res.grad = Tensor<T>(restored.shape());
    const std::int64_t n = restored.size();
    double acc = 0.0;
    const T scale = T(2) / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(restored[i]) - static_cast<double>(natural[i]);
        acc += d * d;
        res.grad[i] = scale * (restored[i] - natural[i]);
    }
    res.value = acc / static_cast<double>(n);
    return res;
}

template <typename T>
struct DiLossResult {
    double value = 0.0;
    Tensor<T> grad_fake;
    Tensor<T> grad_real;
};

// Image discriminator objective: mean of log D(fake) + log(1 - D(real)).
// Minimizing drives D toward calling natural examples true and synthesized
// ones false. Inputs are post-sigmoid probabilities, clamped away from {0,1}.
template <typename T>
DiLossResult<T> loss_di(const Tensor<T>& di_fake, const Tensor<T>& di_real) {
    detail::check_finite(di_fake, "loss_di");
    detail::check_finite(di_real, "loss_di");
    if (di_fake.dim(0) != di_real.dim(0)) throw ConfigError("loss_di batch mismatch");
    const std::int64_t B = di_fake.dim(0);
    DiLossResult<T> res;
    res.grad_fake = Tensor<T>(di_fake.shape());
    res.grad_real = Tensor<T>(di_real.shape());
    double acc = 0.0;
    const double lo = detail::kProbClamp, hi = 1.0 - detail::kProbClamp;
    for (std::int64_t n = 0; n < B; ++n) {
        const double f = static_cast<double>(di_fake[n]);
        const double r = static_cast<double>(di_real[n]);
        const double fc = std::min(std::max(f, lo), hi);
        const double rc = std::min(std::max(r, lo), hi);
        acc += std::log(fc) + std::log(1.0 - rc);
        if (f > lo && f < hi) res.grad_fake[n] = static_cast<T>(1.0 / (fc * B));
        if (r > lo && r < hi) res.grad_real[n] = static_cast<T>(-1.0 / ((1.0 - rc) * B));
    }
    res.value = acc / static_cast<double>(B);
    return res;
}

// Non-saturating generator objective: mean of -log D(fake).
template <typename T>
LossResult<T> loss_adv(const Tensor<T>& di_fake) {
    detail::check_finite(di_fake, "loss_adv");
    const std::int64_t B = di_fake.dim(0);
    LossResult<T> res;
    res.grad = Tensor<T>(di_fake.shape());
    double acc = 0.0;
    const double lo = detail::kProbClamp, hi = 1.0 - detail::kProbClamp;
    for (std::int64_t n = 0; n < B; ++n) {
        const double f = static_cast<double>(di_fake[n]);
        const double fc = std::min(std::max(f, lo), hi);
        acc -= std::log(fc);
        if (f > lo && f < hi) res.grad[n] = static_cast<T>(-1.0 / (fc * B));
    }
    res.value = acc / static_cast<double>(B);
    return res;
}

// Combined encoder and decoder objectives.
inline double loss_E(double mse, double att, double nor, const LossWeights& w) {
    return mse + w.lambda1 * att + w.lambda2 * nor;
}
inline double loss_G(double mse, double adv, const LossWeights& w) { return mse + w.theta * adv; }

}  // namespace arn
