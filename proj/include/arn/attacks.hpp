#pragma once

// Adversarial example crafting: FGSM and PGD in the pixel L-inf ball, a lite
// spatial-transform attack driven by a per-pixel flow field, and the BPDA
// straight-through loop for attacking pre-processing defenses.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "arn/defense.hpp"
#include "arn/errors.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/parallel.hpp"
#include "arn/rng.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class AttackKind { fgsm, pgd, sta_lite, bpda_pgd };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd";
        case AttackKind::sta_lite: return "sta_lite";
        case AttackKind::bpda_pgd: return "bpda_pgd";
    }
    return "?";
}

struct AttackSpec {
    AttackKind kind = AttackKind::pgd;
    double epsilon = 0.3;    // L-inf pixel budget; for sta_lite, flow cap as a fraction of H
    int steps = 40;
    double step_size = 0.01;
    bool targeted = false;
    int target_label = -1;   // fixed target class; -1 with targeted means per-example seeded choice
    bool rand_init = true;
    double tv_weight = 0.05; // sta_lite flow smoothness
    std::string label;       // report name; defaults to kind plus _N/_T suffix

    void validate() const {
        if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("attack epsilon must be in [0,1]");
        if (steps < 1) throw ConfigError("attack steps must be >= 1");
        if (step_size < 0.0) throw ConfigError("attack step_size must be >= 0");
    }

    std::string display_name() const {
        if (!label.empty()) return label;
        std::string n = attack_kind_name(kind);
        n += targeted ? "_T" : "_N";
        return n;
    }
};

namespace detail {

inline float sign0(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// Gradient of the attack objective w.r.t. the input pixels. Non-targeted
// ascends CE on the true label; targeted descends CE on the target label
// (realized by flipping the sign here, the caller always ascends).
inline Tensor<float> input_gradient(const Network<float>& model, const Tensor<float>& x,
                                    const std::vector<int>& labels, bool targeted) {
    Cache<float> cache;
    const Tensor<float>& logits = model.forward(x, cache);
    LossResult<float> ce = softmax_cross_entropy(logits, labels);
    Tensor<float> grad = model.backward(ce.grad, cache, nullptr);
    if (targeted) {
        for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] = -grad[i];
    }
    return grad;
}

}  // namespace detail

// x_adv = clip_[0,1](x + eps * sign(d CE / d x)). Zero-gradient coordinates
// stay untouched (sign(0) = 0); a model with zero gradient everywhere
// therefore returns x unchanged.
inline Tensor<float> fgsm(const Network<float>& model, const Tensor<float>& x, const std::vector<int>& labels,
                          const AttackSpec& spec) {
    spec.validate();
    const Tensor<float> grad = detail::input_gradient(model, x, labels, spec.targeted);
    Tensor<float> adv = x;
    const float eps = static_cast<float>(spec.epsilon);
    for (std::int64_t i = 0; i < adv.size(); ++i) {
        adv[i] = detail::clamp01(adv[i] + eps * detail::sign0(grad[i]));
    }
    return adv;
}

// Ascent gradient of the attack objective w.r.t. the pixels; targeted specs
// are expected to fold the sign flip into the returned gradient.
using InputGradFn = std::function<Tensor<float>(const Tensor<float>&, const std::vector<int>&)>;

// The shared projected sign-ascent loop: optional uniform start inside the
// ball, then `steps` sign-gradient steps, each projected back onto the L-inf
// ball around x and clipped to [0,1].
inline Tensor<float> pgd_loop(const InputGradFn& grad_fn, const Tensor<float>& x,
                              const std::vector<int>& labels, const AttackSpec& spec, SeededRng rng) {
    spec.validate();
    const float eps = static_cast<float>(spec.epsilon);
    const float alpha = static_cast<float>(spec.step_size);
    Tensor<float> adv = x;
    if (spec.rand_init && eps > 0.0f) {
        for (std::int64_t i = 0; i < adv.size(); ++i) {
            adv[i] = detail::clamp01(adv[i] + static_cast<float>(rng.uniform(-spec.epsilon, spec.epsilon)));
        }
    }
    for (int step = 0; step < spec.steps; ++step) {
        const Tensor<float> grad = grad_fn(adv, labels);
        for (std::int64_t i = 0; i < adv.size(); ++i) {
            float v = adv[i] + alpha * detail::sign0(grad[i]);
            v = std::min(x[i] + eps, std::max(x[i] - eps, v));
            adv[i] = detail::clamp01(v);
        }
    }
    return adv;
}

// Iterated sign-gradient steps against the bare classifier. With steps=1,
// step_size >= eps and no random init this reduces to fgsm exactly.
inline Tensor<float> pgd(const Network<float>& model, const Tensor<float>& x, const std::vector<int>& labels,
                         const AttackSpec& spec, SeededRng rng = SeededRng(0)) {
    return pgd_loop(
        [&model, &spec](const Tensor<float>& xt, const std::vector<int>& y) {
            return detail::input_gradient(model, xt, y, spec.targeted);
        },
        x, labels, spec, rng);
}

// True end-to-end gradient through classifier(decoder(encoder(x))); the
// white-box adaptive attacker's view of a leaked pre-processing defense.
inline Tensor<float> composition_input_gradient(const Network<float>& model, const Network<float>& encoder,
                                                const Network<float>& decoder, const Tensor<float>& x,
                                                const std::vector<int>& labels, bool targeted) {
    Cache<float> ce_cache, cg_cache, cf_cache;
    const Tensor<float>& latent = encoder.forward(x, ce_cache);
    const Tensor<float>& restored = decoder.forward(latent, cg_cache);
    const Tensor<float>& logits = model.forward(restored, cf_cache);
    LossResult<float> ce = softmax_cross_entropy(logits, labels);
    Tensor<float> g = model.backward(ce.grad, cf_cache, nullptr);
    g = decoder.backward(g, cg_cache, nullptr);
    g = encoder.backward(g, ce_cache, nullptr);
    if (targeted) {
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = -g[i];
    }
    return g;
}

inline Tensor<float> whitebox_pgd(const Network<float>& model, const Network<float>& encoder,
                                  const Network<float>& decoder, const Tensor<float>& x,
                                  const std::vector<int>& labels, const AttackSpec& spec,
                                  SeededRng rng = SeededRng(0)) {
    return pgd_loop(
        [&](const Tensor<float>& xt, const std::vector<int>& y) {
            return composition_input_gradient(model, encoder, decoder, xt, y, spec.targeted);
        },
        x, labels, spec, rng);
}

namespace detail {

// Bilinear sample of one channel at (y+uy, x+ux); zero outside the border.
inline float bilinear(const float* img, std::int64_t H, std::int64_t W, float y, float x) {
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const float fy = y - static_cast<float>(y0);
    const float fx = x - static_cast<float>(x0);
    auto pix = [&](std::int64_t yy, std::int64_t xx) -> float {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0f;
        return img[yy * W + xx];
    };
    return (1 - fy) * ((1 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
           fy * ((1 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
}

// d sample / d (uy, ux) at the same point.
inline void bilinear_grad(const float* img, std::int64_t H, std::int64_t W, float y, float x, float& dy,
                          float& dx) {
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const float fy = y - static_cast<float>(y0);
    const float fx = x - static_cast<float>(x0);
    auto pix = [&](std::int64_t yy, std::int64_t xx) -> float {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0f;
        return img[yy * W + xx];
    };
    const float p00 = pix(y0, x0), p01 = pix(y0, x0 + 1), p10 = pix(y0 + 1, x0), p11 = pix(y0 + 1, x0 + 1);
    dy = (1 - fx) * (p10 - p00) + fx * (p11 - p01);
    dx = (1 - fy) * (p01 - p00) + fy * (p11 - p10);
}

// Warp every channel of one image by the flow field (2 planes: dy, dx).
inline void warp_image(const float* img, std::int64_t C, std::int64_t H, std::int64_t W, const float* flow,
                       float* out) {
    for (std::int64_t c = 0; c < C; ++c) {
        const float* src = img + c * H * W;
        float* dst = out + c * H * W;
        for (std::int64_t yy = 0; yy < H; ++yy) {
            for (std::int64_t xx = 0; xx < W; ++xx) {
                const float sy = static_cast<float>(yy) + flow[yy * W + xx];
                const float sx = static_cast<float>(xx) + flow[H * W + yy * W + xx];
                dst[yy * W + xx] = clamp01(bilinear(src, H, W, sy, sx));
            }
        }
    }
}

}  // namespace detail

// Lite spatial-transform attack: ascend CE minus tv_weight * TV(flow) over a
// per-pixel 2-D flow field, warp by bilinear sampling, cap flow magnitude at
// epsilon * H pixels per axis. Zero flow is the identity warp. Steps are
// plain gradient ascent normalized by the largest flow-gradient entry of the
// example; sign steps would let the TV subgradient drown the objective
// whenever classifier gradients are small.
inline Tensor<float> sta_lite(const Network<float>& model, const Tensor<float>& x,
                              const std::vector<int>& labels, const AttackSpec& spec) {
    spec.validate();
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const float cap = static_cast<float>(spec.epsilon) * static_cast<float>(H);
    const float lr = 0.5f;  // pixels per iteration for the largest-gradient site
    const float tau = static_cast<float>(spec.tv_weight);

    Tensor<float> flow({B, 2, H, W});
    Tensor<float> warped = x;
    for (int step = 0; step < spec.steps; ++step) {
        for (std::int64_t n = 0; n < B; ++n) {
            detail::warp_image(x.data() + n * C * H * W, C, H, W, flow.data() + n * 2 * H * W,
                               warped.data() + n * C * H * W);
        }
        Cache<float> cache;
        const Tensor<float>& logits = model.forward(warped, cache);
        LossResult<float> ce = softmax_cross_entropy(logits, labels);
        if (spec.targeted) {
            for (std::int64_t i = 0; i < ce.grad.size(); ++i) ce.grad[i] = -ce.grad[i];
        }
        const Tensor<float> dwarped = model.backward(ce.grad, cache, nullptr);

        // chain through the bilinear sampler into the flow planes
        Tensor<float> dflow({B, 2, H, W});
        for (std::int64_t n = 0; n < B; ++n) {
            const float* f = flow.data() + n * 2 * H * W;
            float* df = dflow.data() + n * 2 * H * W;
            for (std::int64_t c = 0; c < C; ++c) {
                const float* src = x.data() + (n * C + c) * H * W;
                const float* g = dwarped.data() + (n * C + c) * H * W;
                for (std::int64_t yy = 0; yy < H; ++yy) {
                    for (std::int64_t xx = 0; xx < W; ++xx) {
                        const float gv = g[yy * W + xx];
                        if (gv == 0.0f) continue;
                        float dy = 0.0f, dx = 0.0f;
                        detail::bilinear_grad(src, H, W, static_cast<float>(yy) + f[yy * W + xx],
                                              static_cast<float>(xx) + f[H * W + yy * W + xx], dy, dx);
                        df[yy * W + xx] += gv * dy;
                        df[H * W + yy * W + xx] += gv * dx;
                    }
                }
            }
            // subtract the total-variation subgradient on both flow planes
            for (std::int64_t plane = 0; plane < 2; ++plane) {
                const float* fp = f + plane * H * W;
                float* dfp = df + plane * H * W;
                for (std::int64_t yy = 0; yy < H; ++yy) {
                    for (std::int64_t xx = 0; xx < W; ++xx) {
                        float tv = 0.0f;
                        const float v = fp[yy * W + xx];
                        if (yy + 1 < H) tv += detail::sign0(v - fp[(yy + 1) * W + xx]);
                        if (yy > 0) tv += detail::sign0(v - fp[(yy - 1) * W + xx]);
                        if (xx + 1 < W) tv += detail::sign0(v - fp[yy * W + xx + 1]);
                        if (xx > 0) tv += detail::sign0(v - fp[yy * W + xx - 1]);
                        dfp[yy * W + xx] -= tau * tv;
                    }
                }
            }
        }
        for (std::int64_t n = 0; n < B; ++n) {
            float* f = flow.data() + n * 2 * H * W;
            const float* df = dflow.data() + n * 2 * H * W;
            float peak = 0.0f;
            for (std::int64_t i = 0; i < 2 * H * W; ++i) peak = std::max(peak, std::abs(df[i]));
            if (peak == 0.0f) continue;
            const float scale = lr / peak;
            for (std::int64_t i = 0; i < 2 * H * W; ++i) {
                f[i] = std::min(cap, std::max(-cap, f[i] + scale * df[i]));
            }
        }
    }
    for (std::int64_t n = 0; n < B; ++n) {
        detail::warp_image(x.data() + n * C * H * W, C, H, W, flow.data() + n * 2 * H * W,
                           warped.data() + n * C * H * W);
    }
    return warped;
}

// BPDA straight-through PGD: forward evaluates the classifier behind the
// defense, the backward pass takes the classifier gradient at the purified
// point as if the defense were the identity.
inline Tensor<float> bpda_attack(const std::function<Tensor<float>(const Tensor<float>&)>& defense_fn,
                                 const Network<float>& model, const Tensor<float>& x,
                                 const std::vector<int>& labels, const AttackSpec& spec,
                                 SeededRng rng = SeededRng(0)) {
    return pgd_loop(
        [&](const Tensor<float>& xt, const std::vector<int>& y) {
            return detail::input_gradient(model, defense_fn(xt), y, spec.targeted);
        },
        x, labels, spec, rng);
}

// ---------------------------------------------------------------------------
// Dataset crafting
// ---------------------------------------------------------------------------

struct AdversarialDataset {
    Tensor<float> natural;       // [M,C,H,W], the paired clean sources
    Tensor<float> adversarial;   // [M,C,H,W]
    std::vector<int> class_labels;
    std::vector<int> attack_type;  // 1-based, in {1..K}
    int K = 0;
    int num_classes = 0;

    std::int64_t count() const { return natural.shape().empty() ? 0 : natural.dim(0); }

    std::vector<std::int64_t> type_counts() const {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(K), 0);
        for (int t : attack_type) ++counts[static_cast<std::size_t>(t - 1)];
        return counts;
    }
};

// Pick a target class different from the true label.
inline int pick_target_label(int true_label, int num_classes, SeededRng& rng) {
    if (num_classes < 2) throw ConfigError("targeted attack needs >= 2 classes");
    const int offset = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes - 1)));
    return (true_label + offset) % num_classes;
}

// Crafts one batch-of-one adversarial example; labels already hold the attack
// objective's class (true label, or chosen target for targeted specs).
using ExampleCrafter =
    std::function<Tensor<float>(const Tensor<float>&, const std::vector<int>&, SeededRng&)>;

// Run a per-example crafter over a full dataset. Work is chunked and
// parallelized; each example draws randomness from its own substream, so
// results are identical regardless of chunking or thread count.
inline Tensor<float> run_per_example(const LabeledDataset& ds, const AttackSpec& spec, SeededRng base_rng,
                                     const ExampleCrafter& crafter) {
    spec.validate();
    if (spec.targeted && spec.target_label >= ds.num_classes) throw ConfigError("target label out of range");
    const std::int64_t n = ds.count();
    const std::int64_t per = ds.images.size() / n;
    Tensor<float> adv(ds.images.shape());
    const std::int64_t chunk = 16;
    const std::int64_t n_chunks = (n + chunk - 1) / chunk;
    parallel_for(n_chunks, [&](std::int64_t cb, std::int64_t ce) {
        for (std::int64_t c = cb; c < ce; ++c) {
            const std::int64_t lo = c * chunk, hi = std::min(n, lo + chunk);
            for (std::int64_t i = lo; i < hi; ++i) {
                std::vector<std::int64_t> idx{i};
                const Tensor<float> x = gather_images(ds.images, idx);
                SeededRng rng = base_rng.fork(static_cast<std::uint64_t>(i));
                const int y = ds.labels[static_cast<std::size_t>(i)];
                std::vector<int> labels{y};
                if (spec.targeted) {
                    int target = spec.target_label;
                    if (target < 0) target = pick_target_label(y, ds.num_classes, rng);
                    if (target == y) throw ConfigError("targeted attack with target == true label at example " +
                                                       std::to_string(i));
                    labels[0] = target;
                }
                const Tensor<float> xa = crafter(x, labels, rng);
                std::copy_n(xa.data(), per, adv.data() + i * per);
            }
        }
    });
    return adv;
}

inline Tensor<float> run_attack(const Network<float>& model, const LabeledDataset& ds, const AttackSpec& spec,
                                SeededRng base_rng,
                                const std::function<Tensor<float>(const Tensor<float>&)>& defense_fn = nullptr) {
    return run_per_example(ds, spec, base_rng,
                           [&](const Tensor<float>& x, const std::vector<int>& labels, SeededRng& rng) {
                               switch (spec.kind) {
                                   case AttackKind::fgsm: return fgsm(model, x, labels, spec);
                                   case AttackKind::pgd: return pgd(model, x, labels, spec, rng);
                                   case AttackKind::sta_lite: return sta_lite(model, x, labels, spec);
                                   case AttackKind::bpda_pgd:
                                       if (!defense_fn) throw ConfigError("bpda_pgd needs a defense function");
                                       return bpda_attack(defense_fn, model, x, labels, spec, rng);
                               }
                               throw ConfigError("unknown attack kind");
                           });
}

// Craft the paired natural/adversarial training set: one adversarial example
// per (natural example, attack spec), tagged with the 1-based spec index.
inline AdversarialDataset craft_dataset(const Network<float>& model, const LabeledDataset& ds,
                                        const std::vector<AttackSpec>& specs, SeededRng rng) {
    if (specs.empty()) throw ConfigError("craft_dataset: need at least one attack spec");
    const std::int64_t n = ds.count();
    const std::int64_t per = ds.images.size() / n;
    const int K = static_cast<int>(specs.size());

    AdversarialDataset out;
    out.K = K;
    out.num_classes = ds.num_classes;
    Shape s = ds.images.shape();
    s[0] = n * K;
    out.natural = Tensor<float>(s);
    out.adversarial = Tensor<float>(s);
    out.class_labels.reserve(static_cast<std::size_t>(n * K));
    out.attack_type.reserve(static_cast<std::size_t>(n * K));

    for (int k = 0; k < K; ++k) {
        const Tensor<float> adv = run_attack(model, ds, specs[static_cast<std::size_t>(k)],
                                             rng.fork(static_cast<std::uint64_t>(k) + 1));
        std::copy_n(ds.images.data(), n * per, out.natural.data() + static_cast<std::int64_t>(k) * n * per);
        std::copy_n(adv.data(), n * per, out.adversarial.data() + static_cast<std::int64_t>(k) * n * per);
        for (std::int64_t i = 0; i < n; ++i) {
            out.class_labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
            out.attack_type.push_back(k + 1);
        }
    }

    // ball containment and range invariants, checked before anything trains
    for (int k = 0; k < K; ++k) {
        const AttackSpec& spec = specs[static_cast<std::size_t>(k)];
        if (spec.kind == AttackKind::sta_lite) continue;
        const float bound = static_cast<float>(spec.epsilon) + std::exp2(-20.0f);
        const float* nat = out.natural.data() + static_cast<std::int64_t>(k) * n * per;
        const float* adv = out.adversarial.data() + static_cast<std::int64_t>(k) * n * per;
        for (std::int64_t i = 0; i < n * per; ++i) {
            if (std::abs(adv[i] - nat[i]) > bound || adv[i] < 0.0f || adv[i] > 1.0f) {
                throw ConfigError("crafted example violates the perturbation ball for attack " +
                                  spec.display_name());
            }
        }
    }
    return out;
}

}  // namespace arn
