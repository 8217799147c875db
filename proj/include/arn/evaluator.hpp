#pragma once

// Evaluation protocols: error rates with and without the defense, the
// seen/unseen table, leaked-defense scenarios (white-box, gray-box via a
// surrogate defense, BPDA), cross-model transfer, and the loss-term ablation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "arn/attacks.hpp"
#include "arn/dataset.hpp"
#include "arn/defense.hpp"
#include "arn/network.hpp"
#include "arn/report.hpp"
#include "arn/trainer.hpp"

namespace arn {

using DefenseFn = std::function<Tensor<float>(const Tensor<float>&)>;

// Classification error in percent, with the defense applied first when given.
inline double eval_error_rate(const Network<float>& model, const DefenseFn& defense,
                              const Tensor<float>& images, const std::vector<int>& labels) {
    const std::int64_t n = images.shape().empty() ? 0 : images.dim(0);
    if (n == 0) throw ConfigError("eval_error_rate: empty dataset");
    const std::int64_t chunk = 128;
    const std::int64_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<std::int64_t> errors(static_cast<std::size_t>(n_chunks), 0);
    parallel_for(n_chunks, [&](std::int64_t cb, std::int64_t ce) {
        for (std::int64_t c = cb; c < ce; ++c) {
            const std::int64_t lo = c * chunk, hi = std::min(n, lo + chunk);
            std::vector<std::int64_t> idx;
            for (std::int64_t i = lo; i < hi; ++i) idx.push_back(i);
            Tensor<float> batch = gather_images(images, idx);
            if (defense) batch = defense(batch);
            const auto pred = predict(model, batch);
            for (std::size_t j = 0; j < pred.size(); ++j) {
                if (pred[j] != labels[static_cast<std::size_t>(idx[j])]) ++errors[static_cast<std::size_t>(c)];
            }
        }
    });
    std::int64_t total = 0;
    for (std::int64_t e : errors) total += e;
    return 100.0 * static_cast<double>(total) / static_cast<double>(n);
}

inline double eval_error_rate(const Network<float>& model, const DefenseFn& defense, const LabeledDataset& ds) {
    return eval_error_rate(model, defense, ds.images, ds.labels);
}

// Truncate a dataset to at most `cap` examples (keeps order).
inline LabeledDataset cap_dataset(const LabeledDataset& ds, std::int64_t cap) {
    if (cap <= 0 || ds.count() <= cap) return ds;
    LabeledDataset out = ds;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cap));
    for (std::int64_t i = 0; i < cap; ++i) idx[static_cast<std::size_t>(i)] = i;
    out.images = gather_images(ds.images, idx);
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + cap);
    return out;
}

struct EvalContext {
    const Network<float>* target = nullptr;
    std::string target_name = "target";
    const Defense<float>* defense = nullptr;      // nullptr = undefended
    std::string defense_name = "none";
    std::vector<AttackSpec> seen_specs;           // recorded training attacks
    std::vector<AttackSpec> eval_attacks;         // columns of the table
    const LabeledDataset* test = nullptr;
    std::int64_t max_examples = 1000;
    std::uint64_t seed = 1;
};

inline bool matches_seen(const AttackSpec& a, const std::vector<AttackSpec>& seen) {
    for (const AttackSpec& s : seen) {
        if (a.kind == s.kind && a.targeted == s.targeted && a.epsilon == s.epsilon) return true;
    }
    return false;
}

// Evaluate the (possibly defended) target on the clean test set plus every
// configured attack, crafted against the bare target model. Rows tag whether
// each attack matched the defense's training attacks.
inline Report seen_unseen_protocol(const EvalContext& ctx) {
    if (!ctx.target || !ctx.test) throw ConfigError("seen_unseen_protocol: missing target or test set");
    const LabeledDataset test = cap_dataset(*ctx.test, ctx.max_examples);
    DefenseFn defense_fn;
    if (ctx.defense) {
        const Defense<float>* d = ctx.defense;
        defense_fn = [d](const Tensor<float>& x) { return (*d)(x); };
    }

    Report report;
    ReportRow base;
    base.target_model = ctx.target_name;
    base.defense_config = ctx.defense_name;
    base.n_examples = test.count();
    base.seed = ctx.seed;

    ReportRow clean = base;
    clean.attack_name = "clean";
    clean.seen = false;
    clean.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, test);
    report.rows.push_back(clean);

    SeededRng rng = SeededRng(ctx.seed).fork(0xE7);
    for (std::size_t a = 0; a < ctx.eval_attacks.size(); ++a) {
        const AttackSpec& spec = ctx.eval_attacks[a];
        const Tensor<float> adv = run_attack(*ctx.target, test, spec, rng.fork(a + 1));
        ReportRow row = base;
        row.attack_name = spec.display_name();
        row.seen = matches_seen(spec, ctx.seen_specs);
        row.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, adv, test.labels);
        report.rows.push_back(row);
    }
    return report;
}

// Leaked-defense scenarios, all built on non-targeted PGD at the given spec:
//   whitebox: true gradients end-to-end through classifier(defense(x));
//   graybox:  white-box against an independently trained surrogate defense,
//             transferred to the deployed one;
//   bpda:     straight-through gradient approximation of the defense.
inline Report leaked_defense_eval(const EvalContext& ctx, const AttackSpec& pgd_spec,
                                  const Defense<float>* surrogate) {
    if (!ctx.target || !ctx.test || !ctx.defense) {
        throw ConfigError("leaked_defense_eval: missing target, defense, or test set");
    }
    const LabeledDataset test = cap_dataset(*ctx.test, ctx.max_examples);
    const Defense<float>& defense = *ctx.defense;
    DefenseFn defense_fn = [&defense](const Tensor<float>& x) { return defense(x); };

    Report report;
    ReportRow base;
    base.target_model = ctx.target_name;
    base.defense_config = ctx.defense_name;
    base.n_examples = test.count();
    base.seed = ctx.seed;

    ReportRow clean = base;
    clean.attack_name = "clean";
    clean.scenario = "clean";
    clean.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, test);
    report.rows.push_back(clean);

    SeededRng rng = SeededRng(ctx.seed).fork(0x1E);

    {
        const Tensor<float> adv = run_per_example(
            test, pgd_spec, rng.fork(1),
            [&](const Tensor<float>& x, const std::vector<int>& labels, SeededRng& r) {
                return whitebox_pgd(*ctx.target, defense.encoder, defense.decoder, x, labels, pgd_spec, r);
            });
        ReportRow row = base;
        row.attack_name = pgd_spec.display_name() + "_whitebox";
        row.scenario = "whitebox";
        row.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, adv, test.labels);
        report.rows.push_back(row);
    }

    {
        if (!surrogate) throw ConfigError("leaked_defense_eval: gray-box scenario needs a surrogate defense");
        const Tensor<float> adv = run_per_example(
            test, pgd_spec, rng.fork(2),
            [&](const Tensor<float>& x, const std::vector<int>& labels, SeededRng& r) {
                return whitebox_pgd(*ctx.target, surrogate->encoder, surrogate->decoder, x, labels, pgd_spec, r);
            });
        ReportRow row = base;
        row.attack_name = pgd_spec.display_name() + "_graybox";
        row.scenario = "graybox";
        row.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, adv, test.labels);
        report.rows.push_back(row);
    }

    {
        const Tensor<float> adv = run_per_example(
            test, pgd_spec, rng.fork(3),
            [&](const Tensor<float>& x, const std::vector<int>& labels, SeededRng& r) {
                return bpda_attack(defense_fn, *ctx.target, x, labels, pgd_spec, r);
            });
        ReportRow row = base;
        row.attack_name = pgd_spec.display_name() + "_bpda";
        row.scenario = "bpda";
        row.error_rate_percent = eval_error_rate(*ctx.target, defense_fn, adv, test.labels);
        report.rows.push_back(row);
    }
    return report;
}

// Attacks are crafted against model B; the defense trained alongside model A
// purifies them before B classifies.
inline Report cross_model(const Defense<float>& defense_from_a, const Network<float>& model_b,
                          const std::string& model_b_name, const std::vector<AttackSpec>& attacks,
                          const LabeledDataset& test_full, std::int64_t max_examples, std::uint64_t seed) {
    const LabeledDataset test = cap_dataset(test_full, max_examples);
    const Shape img_shape{test.images.dim(1), test.images.dim(2), test.images.dim(3)};
    const Shape defended = defense_from_a.encoder.spec().out_shape(test.images.shape());
    (void)defended;  // throws on incompatible shapes

    DefenseFn defense_fn = [&defense_from_a](const Tensor<float>& x) { return defense_from_a(x); };

    Report report;
    ReportRow base;
    base.target_model = model_b_name;
    base.defense_config = "arn_transfer";
    base.n_examples = test.count();
    base.seed = seed;

    ReportRow clean = base;
    clean.attack_name = "clean";
    clean.error_rate_percent = eval_error_rate(model_b, defense_fn, test);
    report.rows.push_back(clean);

    SeededRng rng = SeededRng(seed).fork(0xCC);
    for (std::size_t a = 0; a < attacks.size(); ++a) {
        const Tensor<float> adv = run_attack(model_b, test, attacks[a], rng.fork(a + 1));
        ReportRow undef = base;
        undef.defense_config = "none";
        undef.attack_name = attacks[a].display_name();
        undef.error_rate_percent = eval_error_rate(model_b, nullptr, adv, test.labels);
        report.rows.push_back(undef);

        ReportRow row = base;
        row.attack_name = attacks[a].display_name();
        row.error_rate_percent = eval_error_rate(model_b, defense_fn, adv, test.labels);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationContext {
    const Network<float>* target = nullptr;
    std::string target_name = "target";
    const AdversarialDataset* train_set = nullptr;  // crafted from the seen specs
    std::vector<AttackSpec> seen_specs;
    std::vector<AttackSpec> eval_attacks;
    const LabeledDataset* test = nullptr;
    ArnTrainConfig train_cfg;
    Shape image_shape;       // [C,H,W]
    std::int64_t latent_channels = 16;
    std::int64_t max_examples = 1000;
};

struct AblationVariant {
    std::string name;
    LossWeights weights;
};

inline std::vector<AblationVariant> ablation_variants(const LossWeights& full) {
    std::vector<AblationVariant> v;
    v.push_back({"arn_full", full});
    LossWeights no_adv = full;
    no_adv.theta = 0.0;
    v.push_back({"arn_no_adv", no_adv});
    LossWeights no_nor = full;
    no_nor.lambda2 = 0.0;
    v.push_back({"arn_no_nor", no_nor});
    LossWeights no_att = full;
    no_att.lambda1 = 0.0;
    v.push_back({"arn_no_att", no_att});
    return v;
}

inline ArnState train_arn_variant(const AblationContext& ctx, const LossWeights& weights) {
    ArnTrainConfig cfg = ctx.train_cfg;
    cfg.weights = weights;
    SeededRng init_rng = SeededRng(cfg.seed).fork(0x11);
    auto enc = build_encoder<float>(ctx.latent_channels, ctx.image_shape);
    auto dec = build_decoder<float>(ctx.latent_channels, ctx.image_shape);
    auto da = build_attack_discriminator<float>(ctx.train_set->K, ctx.latent_channels);
    auto di = build_image_discriminator<float>(ctx.image_shape);
    enc.init_params(init_rng);
    dec.init_params(init_rng);
    da.init_params(init_rng);
    di.init_params(init_rng);
    return train_arn(std::move(enc), std::move(dec), std::move(da), std::move(di), *ctx.train_set, cfg);
}

// Trains the full objective plus the three single-term drops under identical
// seeds and data, then evaluates each against the configured attacks.
inline Report ablation(const AblationContext& ctx) {
    if (!ctx.target || !ctx.train_set || !ctx.test) throw ConfigError("ablation: missing inputs");
    Report report;
    for (const AblationVariant& variant : ablation_variants(ctx.train_cfg.weights)) {
        ArnState st = train_arn_variant(ctx, variant.weights);
        const Defense<float> defense = st.defense();
        EvalContext ec;
        ec.target = ctx.target;
        ec.target_name = ctx.target_name;
        ec.defense = &defense;
        ec.defense_name = variant.name;
        ec.seen_specs = ctx.seen_specs;
        ec.eval_attacks = ctx.eval_attacks;
        ec.test = ctx.test;
        ec.max_examples = ctx.max_examples;
        ec.seed = ctx.train_cfg.seed;
        Report part = seen_unseen_protocol(ec);
        report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
    }
    return report;
}

}  // namespace arn
