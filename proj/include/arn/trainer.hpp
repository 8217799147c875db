#pragma once

// Training loops: plain cross-entropy training for target classifiers, and
// the alternating four-network optimization for the denoising defense. Steps
// are sequential and single-owner; identical seeds give identical traces.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "arn/attacks.hpp"
#include "arn/dataset.hpp"
#include "arn/defense.hpp"
#include "arn/errors.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/optim.hpp"
#include "arn/rng.hpp"
#include "arn/serialize.hpp"

namespace arn {

struct TargetTrainConfig {
    int epochs = 5;
    std::int64_t batch_size = 50;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

struct TargetTrainResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::int64_t steps = 0;
};

inline TargetTrainResult train_target(Network<float>& model, const LabeledDataset& train,
                                      const LabeledDataset* test, const TargetTrainConfig& cfg) {
    if (train.split != Split::train) throw ConfigError("train_target needs the train split");
    AdamOptimizer<float> opt(model, cfg.learning_rate);
    GradSink<float> grads = model.make_grad_sink();
    SeededRng rng = SeededRng(cfg.seed).fork(0x70);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& idx : epoch_batches(train.count(), cfg.batch_size, rng, true)) {
            const Batch batch = make_batch(train, idx);
            Cache<float> cache;
            const Tensor<float>& logits = model.forward(batch.images, cache);
            LossResult<float> ce = softmax_cross_entropy(logits, batch.labels);
            if (!std::isfinite(ce.value)) {
                throw TrainError("cross_entropy", step, "target training diverged at step " + std::to_string(step));
            }
            grads.zero();
            model.backward(ce.grad, cache, &grads);
            opt.step(model, grads);
            ++step;
        }
    }
    TargetTrainResult res;
    res.steps = step;
    res.train_accuracy = accuracy(model, train);
    res.test_accuracy = test ? accuracy(model, *test) : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// Defense training
// ---------------------------------------------------------------------------

struct ArnTrainConfig {
    int epochs = 30;
    std::int64_t batch_size = 50;
    double lr_encoder = 1e-4;
    double lr_decoder = 1e-4;
    double lr_attack_disc = 1e-4;
    double lr_image_disc = 1e-4;
    LossWeights weights;
    double val_fraction = 0.1;
    int patience = 5;          // epochs without meaningful improvement before stopping
    double min_delta = 1e-5;   // improvement threshold on validation MSE
    std::uint64_t seed = 1;
    int checkpoint_every = 0;       // epochs between on-disk checkpoints; 0 disables
    std::string checkpoint_dir;     // required when checkpoint_every > 0
};

struct StepLosses {
    std::int64_t step = 0;
    double da = 0.0, att = 0.0, nor = 0.0, mse = 0.0, adv = 0.0, di = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double val_mse = 0.0;
};

struct ArnState {
    Network<float> encoder, decoder, attack_disc, image_disc;
    AdamOptimizer<float> opt_e, opt_g, opt_da, opt_di;
    LossWeights weights;
    std::int64_t step = 0;
    int epoch = 0;
    std::vector<StepLosses> loss_trace;
    std::vector<EpochRecord> epoch_trace;
    double best_val_mse = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    NamedTensors<float> best_checkpoint;

    Defense<float> defense() const { return Defense<float>{encoder, decoder}; }

    NamedTensors<float> checkpoint() const {
        NamedTensors<float> named = encoder.to_named_tensors();
        named.merge(decoder.to_named_tensors());
        named.merge(attack_disc.to_named_tensors());
        named.merge(image_disc.to_named_tensors());
        return named;
    }

    void restore(const NamedTensors<float>& named) {
        encoder.from_named_tensors(named);
        decoder.from_named_tensors(named);
        attack_disc.from_named_tensors(named);
        image_disc.from_named_tensors(named);
    }
};

inline ArnState make_arn_state(Network<float> encoder, Network<float> decoder, Network<float> attack_disc,
                               Network<float> image_disc, const ArnTrainConfig& cfg) {
    cfg.weights.validate();
    ArnState st;
    st.encoder = std::move(encoder);
    st.decoder = std::move(decoder);
    st.attack_disc = std::move(attack_disc);
    st.image_disc = std::move(image_disc);
    st.opt_e = AdamOptimizer<float>(st.encoder, cfg.lr_encoder);
    st.opt_g = AdamOptimizer<float>(st.decoder, cfg.lr_decoder);
    st.opt_da = AdamOptimizer<float>(st.attack_disc, cfg.lr_attack_disc);
    st.opt_di = AdamOptimizer<float>(st.image_disc, cfg.lr_image_disc);
    st.weights = cfg.weights;
    return st;
}

namespace detail {

inline Tensor<float> flatten_latent(const Tensor<float>& latent) {
    std::int64_t rest = 1;
    for (std::size_t i = 1; i < latent.shape().size(); ++i) rest *= latent.shape()[i];
    return latent.reshaped({latent.dim(0), rest});
}

inline void require_finite(double v, const char* loss_name, std::int64_t step) {
    if (!std::isfinite(v)) {
        throw TrainError(loss_name, step,
                         std::string(loss_name) + " became non-finite at step " + std::to_string(step));
    }
}

}  // namespace detail

// One alternating update:
//   (a) encode the adversarial batch, score the attack-invariance and
//       normalization terms;
//   (b) decode, score reconstruction and the generator's adversarial term;
//   (c) step the encoder on L_mse + l1*L_att + l2*L_nor and the decoder on
//       L_mse + theta*L_adv (discriminator parameters held constant);
//   (d) step both discriminators on their own objectives with the encoder
//       and decoder outputs detached.
inline StepLosses arn_step(ArnState& st, const Tensor<float>& nat_batch, const Tensor<float>& adv_batch,
                           const std::vector<int>& type_indices, const LossWeights& w) {
    const int K = static_cast<int>(st.attack_disc.spec().layers.back().out_dim);

    // (a) encoder forward + latent losses
    Cache<float> cache_e;
    const Tensor<float>& latent = st.encoder.forward(adv_batch, cache_e);
    if (!latent.all_finite()) {
        throw TrainError("encoder_forward", st.step,
                         "encoder produced non-finite activations at step " + std::to_string(st.step));
    }
    const Tensor<float> latent_flat = detail::flatten_latent(latent);

    Cache<float> cache_da;
    const Tensor<float>& da_logits = st.attack_disc.forward(latent, cache_da);
    LossResult<float> att = loss_att(da_logits);
    LossResult<float> nor = loss_nor(latent_flat, type_indices, K);

    // (b) decoder forward + pixel losses
    Cache<float> cache_g;
    const Tensor<float>& restored = st.decoder.forward(latent, cache_g);
    LossResult<float> mse = loss_mse(restored, nat_batch);

    Cache<float> cache_di_fake;
    const Tensor<float>& di_fake = st.image_disc.forward(restored, cache_di_fake);
    LossResult<float> adv = loss_adv(di_fake);

    detail::require_finite(att.value, "loss_att", st.step);
    detail::require_finite(nor.value, "loss_nor", st.step);
    detail::require_finite(mse.value, "loss_mse", st.step);
    detail::require_finite(adv.value, "loss_adv", st.step);

    // (c) encoder/decoder updates. The attack-invariance gradient passes
    // through D_A with its parameters treated as constants; the generator
    // adversarial gradient passes through D_I the same way. The decoder sees
    // both reconstruction and adversarial gradients; only the reconstruction
    // path continues into the encoder.
    GradSink<float> grads_e = st.encoder.make_grad_sink();
    GradSink<float> grads_g = st.decoder.make_grad_sink();

    Tensor<float> d_latent_att = st.attack_disc.backward(att.grad, cache_da, nullptr);
    Tensor<float> d_restored_adv = st.image_disc.backward(adv.grad, cache_di_fake, nullptr);

    Tensor<float> d_latent = st.decoder.backward(mse.grad, cache_g, &grads_g);
    if (w.theta != 0.0) {
        for (std::int64_t i = 0; i < d_restored_adv.size(); ++i) {
            d_restored_adv[i] *= static_cast<float>(w.theta);
        }
        st.decoder.backward(d_restored_adv, cache_g, &grads_g);  // input grad discarded
    }
    axpy(d_latent, static_cast<float>(w.lambda1), d_latent_att);
    if (w.lambda2 != 0.0) {
        axpy(d_latent, static_cast<float>(w.lambda2), nor.grad.reshaped(latent.shape()));
    }
    st.encoder.backward(d_latent, cache_e, &grads_e);

    st.opt_e.step(st.encoder, grads_e);
    st.opt_g.step(st.decoder, grads_g);

    // (d) discriminator updates on detached inputs (the pre-update latent and
    // restored batch are reused as constants)
    GradSink<float> grads_da = st.attack_disc.make_grad_sink();
    Cache<float> cache_da2;
    const Tensor<float>& da_logits2 = st.attack_disc.forward(latent, cache_da2);
    LossResult<float> da = loss_da(da_logits2, type_indices);
    detail::require_finite(da.value, "loss_da", st.step);
    st.attack_disc.backward(da.grad, cache_da2, &grads_da);
    st.opt_da.step(st.attack_disc, grads_da);

    GradSink<float> grads_di = st.image_disc.make_grad_sink();
    Cache<float> cache_di2;
    const Tensor<float>& di_fake2 = st.image_disc.forward(restored, cache_di2);
    Cache<float> cache_di3;
    const Tensor<float>& di_real = st.image_disc.forward(nat_batch, cache_di3);
    DiLossResult<float> di = loss_di(di_fake2, di_real);
    detail::require_finite(di.value, "loss_di", st.step);
    st.image_disc.backward(di.grad_fake, cache_di2, &grads_di);
    st.image_disc.backward(di.grad_real, cache_di3, &grads_di);
    st.opt_di.step(st.image_disc, grads_di);

    StepLosses rec;
    rec.step = st.step;
    rec.da = da.value;
    rec.att = att.value;
    rec.nor = nor.value;
    rec.mse = mse.value;
    rec.adv = adv.value;
    rec.di = di.value;
    st.loss_trace.push_back(rec);
    ++st.step;
    return rec;
}

// ---------------------------------------------------------------------------
// Stratified batching over attack types
// ---------------------------------------------------------------------------

// Index batches where every attack type contributes at least two examples,
// proportional to its share of the pool. Types are laid out contiguously
// inside each batch.
inline std::vector<std::vector<std::int64_t>> stratified_batches(const std::vector<int>& attack_type, int K,
                                                                 std::int64_t batch_size, SeededRng& rng,
                                                                 const std::vector<std::int64_t>& pool) {
    std::vector<std::vector<std::int64_t>> by_type(static_cast<std::size_t>(K));
    for (std::int64_t i : pool) {
        by_type[static_cast<std::size_t>(attack_type[static_cast<std::size_t>(i)] - 1)].push_back(i);
    }
    const std::int64_t total = static_cast<std::int64_t>(pool.size());
    std::vector<std::int64_t> quota(static_cast<std::size_t>(K));
    std::int64_t assigned = 0;
    for (int k = 0; k < K; ++k) {
        const std::int64_t nk = static_cast<std::int64_t>(by_type[static_cast<std::size_t>(k)].size());
        quota[static_cast<std::size_t>(k)] = std::max<std::int64_t>(2, batch_size * nk / total);
        assigned += quota[static_cast<std::size_t>(k)];
    }
    // absorb rounding drift into the largest type
    std::size_t largest = 0;
    for (std::size_t k = 1; k < by_type.size(); ++k) {
        if (by_type[k].size() > by_type[largest].size()) largest = k;
    }
    quota[largest] += batch_size - assigned;
    if (quota[largest] < 2) throw ConfigError("batch size too small for stratified sampling");

    std::int64_t n_batches = std::numeric_limits<std::int64_t>::max();
    for (int k = 0; k < K; ++k) {
        const auto nk = static_cast<std::int64_t>(by_type[static_cast<std::size_t>(k)].size());
        if (nk < quota[static_cast<std::size_t>(k)]) {
            throw ConfigError("attack type " + std::to_string(k + 1) + " has too few examples (" +
                              std::to_string(nk) + ") for its per-batch quota");
        }
        n_batches = std::min(n_batches, nk / quota[static_cast<std::size_t>(k)]);
    }

    for (auto& list : by_type) rng.shuffle(list);
    std::vector<std::vector<std::int64_t>> batches(static_cast<std::size_t>(n_batches));
    for (std::int64_t b = 0; b < n_batches; ++b) {
        auto& batch = batches[static_cast<std::size_t>(b)];
        batch.reserve(static_cast<std::size_t>(batch_size));
        for (int k = 0; k < K; ++k) {
            const auto q = quota[static_cast<std::size_t>(k)];
            const auto& list = by_type[static_cast<std::size_t>(k)];
            for (std::int64_t j = 0; j < q; ++j) batch.push_back(list[static_cast<std::size_t>(b * q + j)]);
        }
    }
    return batches;
}

namespace detail {

inline Tensor<float> gather_rows(const Tensor<float>& images, const std::vector<std::int64_t>& idx) {
    return gather_images(images, idx);
}

inline double validation_mse(const ArnState& st, const AdversarialDataset& ds,
                             const std::vector<std::int64_t>& val_idx) {
    if (val_idx.empty()) return 0.0;
    double acc = 0.0;
    std::int64_t count = 0;
    const std::size_t chunk = 128;
    for (std::size_t lo = 0; lo < val_idx.size(); lo += chunk) {
        const std::size_t hi = std::min(val_idx.size(), lo + chunk);
        std::vector<std::int64_t> idx(val_idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                      val_idx.begin() + static_cast<std::ptrdiff_t>(hi));
        const Tensor<float> adv = gather_rows(ds.adversarial, idx);
        const Tensor<float> nat = gather_rows(ds.natural, idx);
        const Tensor<float> restored = denoise(st.encoder, st.decoder, adv);
        for (std::int64_t i = 0; i < restored.size(); ++i) {
            const double d = static_cast<double>(restored[i]) - static_cast<double>(nat[i]);
            acc += d * d;
        }
        count += restored.size();
    }
    return acc / static_cast<double>(count);
}

}  // namespace detail

// Full training run over stratified mini-batches with a held-out validation
// slice. Stops at the epoch budget or once validation MSE stops improving by
// min_delta for `patience` consecutive epochs; the best-validation parameters
// are retained and restored at the end.
inline ArnState train_arn(Network<float> encoder, Network<float> decoder, Network<float> attack_disc,
                          Network<float> image_disc, const AdversarialDataset& ds, const ArnTrainConfig& cfg) {
    if (ds.K < 1) throw ConfigError("train_arn: adversarial dataset has no attack types");
    ArnState st = make_arn_state(std::move(encoder), std::move(decoder), std::move(attack_disc),
                                 std::move(image_disc), cfg);

    SeededRng split_rng = SeededRng(cfg.seed).fork(0xA1);
    std::vector<std::int64_t> order(static_cast<std::size_t>(ds.count()));
    for (std::int64_t i = 0; i < ds.count(); ++i) order[static_cast<std::size_t>(i)] = i;
    split_rng.shuffle(order);
    const std::int64_t n_val = static_cast<std::int64_t>(static_cast<double>(ds.count()) * cfg.val_fraction);
    std::vector<std::int64_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::int64_t> train_idx(order.begin() + n_val, order.end());

    SeededRng batch_rng = SeededRng(cfg.seed).fork(0xB2);
    int stale_epochs = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        st.epoch = epoch;
        const auto batches = stratified_batches(ds.attack_type, ds.K, cfg.batch_size, batch_rng, train_idx);
        for (const auto& idx : batches) {
            const Tensor<float> adv = detail::gather_rows(ds.adversarial, idx);
            const Tensor<float> nat = detail::gather_rows(ds.natural, idx);
            std::vector<int> types;
            types.reserve(idx.size());
            for (std::int64_t i : idx) types.push_back(ds.attack_type[static_cast<std::size_t>(i)]);
            arn_step(st, nat, adv, types, st.weights);
        }

        const double val = detail::validation_mse(st, ds, val_idx);
        st.epoch_trace.push_back({epoch, val});
        if (val < st.best_val_mse - cfg.min_delta) {
            stale_epochs = 0;
        } else {
            ++stale_epochs;
        }
        if (val < st.best_val_mse) {
            st.best_val_mse = val;
            st.best_epoch = epoch;
            st.best_checkpoint = st.checkpoint();
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(st.checkpoint(), cfg.checkpoint_dir + "/arn_epoch_" + std::to_string(epoch) + ".arnc");
        }
        if (stale_epochs >= cfg.patience) break;
    }

    if (!st.best_checkpoint.empty()) st.restore(st.best_checkpoint);
    return st;
}

}  // namespace arn
