#pragma once

// The experiment pipeline behind the CLI subcommands and the end-to-end
// evaluation runs: data generation, target training, crafting, defense
// training, and the multi-seed protocol drivers. Everything is a pure
// function of (config, seed).

#include <cstdint>
#include <string>
#include <vector>

#include "arn/artifacts.hpp"
#include "arn/attacks.hpp"
#include "arn/config.hpp"
#include "arn/dataset.hpp"
#include "arn/evaluator.hpp"
#include "arn/network.hpp"
#include "arn/report.hpp"
#include "arn/trainer.hpp"

namespace arn {

struct DataPair {
    LabeledDataset train;
    LabeledDataset test;
};

inline DataPair make_data(const RunConfig& rc, std::uint64_t seed) {
    DataPair out;
    if (rc.data.kind == "synthetic") {
        SeededRng train_rng = SeededRng(seed).fork(0xD0);
        SeededRng test_rng = SeededRng(seed).fork(0xD1);
        out.train = make_synthetic(rc.data.num_classes, rc.data.train_per_class, rc.data.size,
                                   rc.data.noise_sigma, train_rng, Split::train);
        out.test = make_synthetic(rc.data.num_classes, rc.data.test_per_class, rc.data.size,
                                  rc.data.noise_sigma, test_rng, Split::test);
    } else {
        out.train = load_idx(rc.data.idx_train_images, rc.data.idx_train_labels, Split::train);
        out.test = load_idx(rc.data.idx_test_images, rc.data.idx_test_labels, Split::test);
    }
    return out;
}

inline Shape image_shape(const LabeledDataset& ds) {
    return {ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)};
}

inline Network<float> build_target(const std::string& arch, int num_classes, const Shape& img) {
    if (arch == "lenet") return build_lenet<float>(num_classes, img);
    if (arch == "toynet") return build_toynet<float>(num_classes, img);
    throw ConfigError("unknown target arch '" + arch + "'");
}

inline Network<float> make_trained_target(const RunConfig& rc, const std::string& arch, const DataPair& data,
                                          std::uint64_t seed, TargetTrainResult* result = nullptr) {
    Network<float> target = build_target(arch, data.train.num_classes, image_shape(data.train));
    SeededRng init_rng = SeededRng(seed).fork(0x7A);
    target.init_params(init_rng);
    TargetTrainConfig cfg = rc.target;
    cfg.seed = seed;
    const TargetTrainResult res = train_target(target, data.train, &data.test, cfg);
    if (result) *result = res;
    return target;
}

// Appends (natural, natural) identity pairs, spread round-robin over the
// existing attack types; opt-in via arn.include_clean.
inline AdversarialDataset augment_with_clean(const AdversarialDataset& ds, const LabeledDataset& natural) {
    AdversarialDataset out = ds;
    const std::int64_t n = natural.count();
    const std::int64_t per = natural.images.size() / n;
    Shape s = ds.natural.shape();
    s[0] = ds.count() + n;
    Tensor<float> nat(s), adv(s);
    std::copy_n(ds.natural.data(), ds.natural.size(), nat.data());
    std::copy_n(ds.adversarial.data(), ds.adversarial.size(), adv.data());
    std::copy_n(natural.images.data(), natural.images.size(), nat.data() + ds.natural.size());
    std::copy_n(natural.images.data(), natural.images.size(), adv.data() + ds.adversarial.size());
    out.natural = std::move(nat);
    out.adversarial = std::move(adv);
    for (std::int64_t i = 0; i < n; ++i) {
        out.class_labels.push_back(natural.labels[static_cast<std::size_t>(i)]);
        out.attack_type.push_back(static_cast<int>(i % ds.K) + 1);
    }
    return out;
}

inline ArnState make_trained_defense(const RunConfig& rc, const Network<float>& target, const DataPair& data,
                                     std::uint64_t seed, std::vector<AttackSpec>* seen_out = nullptr,
                                     AdversarialDataset* crafted_out = nullptr) {
    AdversarialDataset crafted =
        craft_dataset(target, data.train, rc.attacks, SeededRng(seed).fork(0xC0));
    if (rc.include_clean) crafted = augment_with_clean(crafted, data.train);
    if (seen_out) *seen_out = rc.attacks;
    if (crafted_out) *crafted_out = crafted;

    const Shape img = image_shape(data.train);
    SeededRng init_rng = SeededRng(seed).fork(0x11);
    auto enc = build_encoder<float>(rc.latent_channels, img);
    auto dec = build_decoder<float>(rc.latent_channels, img);
    auto da = build_attack_discriminator<float>(crafted.K, rc.latent_channels);
    auto di = build_image_discriminator<float>(img);
    enc.init_params(init_rng);
    dec.init_params(init_rng);
    da.init_params(init_rng);
    di.init_params(init_rng);

    ArnTrainConfig cfg = rc.arn;
    cfg.seed = seed;
    return train_arn(std::move(enc), std::move(dec), std::move(da), std::move(di), crafted, cfg);
}

// ---------------------------------------------------------------------------
// Protocol drivers (self-contained, one seed each)
// ---------------------------------------------------------------------------

// Undefended baseline rows plus the defended seen/unseen table.
inline Report run_seen_unseen(const RunConfig& rc, std::uint64_t seed) {
    const DataPair data = make_data(rc, seed);
    const Network<float> target = make_trained_target(rc, rc.target_arch, data, seed);
    const ArnState arn = make_trained_defense(rc, target, data, seed);
    const Defense<float> defense = arn.defense();

    EvalContext ec;
    ec.target = &target;
    ec.target_name = rc.target_arch;
    ec.seen_specs = rc.attacks;
    ec.eval_attacks = rc.eval.attacks;
    ec.test = &data.test;
    ec.max_examples = rc.eval.max_examples;
    ec.seed = seed;

    ec.defense = nullptr;
    ec.defense_name = "none";
    Report report = seen_unseen_protocol(ec);

    ec.defense = &defense;
    ec.defense_name = "arn";
    Report defended = seen_unseen_protocol(ec);
    report.rows.insert(report.rows.end(), defended.rows.begin(), defended.rows.end());
    return report;
}

// Leaked-defense scenarios; the surrogate is the same architecture trained
// from a shifted seed.
inline Report run_leaked(const RunConfig& rc, std::uint64_t seed, const AttackSpec& pgd_spec) {
    const DataPair data = make_data(rc, seed);
    const Network<float> target = make_trained_target(rc, rc.target_arch, data, seed);
    const ArnState arn = make_trained_defense(rc, target, data, seed);
    const ArnState surrogate_arn = make_trained_defense(rc, target, data, seed + 1000);
    const Defense<float> defense = arn.defense();
    const Defense<float> surrogate = surrogate_arn.defense();

    EvalContext ec;
    ec.target = &target;
    ec.target_name = rc.target_arch;
    ec.defense = &defense;
    ec.defense_name = "arn";
    ec.test = &data.test;
    ec.max_examples = rc.eval.max_examples;
    ec.seed = seed;
    return leaked_defense_eval(ec, pgd_spec, &surrogate);
}

// Cross-model transfer: defense trained against arch A, attacks crafted
// against arch B, classification by B behind the transferred defense.
inline Report run_cross_model(const RunConfig& rc, std::uint64_t seed, const std::string& arch_b) {
    const DataPair data = make_data(rc, seed);
    const Network<float> target_a = make_trained_target(rc, rc.target_arch, data, seed);
    const ArnState arn = make_trained_defense(rc, target_a, data, seed);
    const Network<float> target_b = make_trained_target(rc, arch_b, data, seed + 1);
    return cross_model(arn.defense(), target_b, arch_b, rc.eval.attacks, data.test, rc.eval.max_examples,
                       seed);
}

inline Report run_ablation(const RunConfig& rc, std::uint64_t seed) {
    const DataPair data = make_data(rc, seed);
    const Network<float> target = make_trained_target(rc, rc.target_arch, data, seed);
    AdversarialDataset crafted = craft_dataset(target, data.train, rc.attacks, SeededRng(seed).fork(0xC0));
    if (rc.include_clean) crafted = augment_with_clean(crafted, data.train);

    AblationContext ac;
    ac.target = &target;
    ac.target_name = rc.target_arch;
    ac.train_set = &crafted;
    ac.seen_specs = rc.attacks;
    ac.eval_attacks = rc.eval.attacks;
    ac.test = &data.test;
    ac.train_cfg = rc.arn;
    ac.train_cfg.seed = seed;
    ac.image_shape = image_shape(data.train);
    ac.latent_channels = rc.latent_channels;
    ac.max_examples = rc.eval.max_examples;
    return ablation(ac);
}

// Run a per-seed driver for eval.seeds consecutive seeds and pool the rows.
template <typename Driver>
Report run_multi_seed(const RunConfig& rc, Driver&& driver) {
    Report pooled;
    for (int i = 0; i < rc.eval.seeds; ++i) {
        Report part = driver(rc.seed + static_cast<std::uint64_t>(i));
        pooled.rows.insert(pooled.rows.end(), part.rows.begin(), part.rows.end());
    }
    return pooled;
}

}  // namespace arn
