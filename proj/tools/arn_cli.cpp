// Command-line entry point. Subcommands compose through files under --out:
//
//   gen-data      -> train.arnc, test.arnc
//   train-target  -> target_<arch>.arnc, target_<arch>.json
//   craft         -> crafted_<split>.arnc (+ .json sidecar)
//   train-arn     -> arn.arnc, arn.json, arn_loss_trace.jsonl
//   eval          -> report.json, report.txt
//   ablate        -> ablation report
//   gradcheck     -> per-loss max relative errors (no files)
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure. Every run
// writes its resolved configuration (seed included) next to its outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arn/arn.hpp"
#include "arn/gradsuite.hpp"

namespace fs = std::filesystem;
using arn::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::int64_t seed = -1;
    int seeds = 0;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults used when omitted)");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_option("--seed", args.seed, "run seed (overrides config)");
    cmd->add_option("--override", args.overrides, "dotted-path config override, key=value (repeatable)");
    cmd->add_option("--seeds", args.seeds, "number of evaluation seeds (overrides config)");
}

arn::RunConfig resolve_config(const CommonArgs& args, const std::string& command) {
    json cfg = args.config_path.empty() ? arn::default_config_json() : arn::load_config_file(args.config_path);
    if (args.seed >= 0) cfg["seed"] = args.seed;
    if (!args.out.empty()) cfg["out"] = args.out;
    if (args.seeds > 0) cfg["eval"]["seeds"] = args.seeds;
    for (const std::string& ov : args.overrides) arn::apply_override(cfg, ov);
    arn::RunConfig rc = arn::parse_run_config(cfg);
    fs::create_directories(rc.out);
    std::ofstream resolved(rc.out + "/resolved_" + command + ".json");
    resolved << rc.resolved.dump(2) << "\n";
    return rc;
}

std::string target_stem(const arn::RunConfig& rc) { return rc.out + "/target_" + rc.target_arch; }

arn::DataPair load_data_files(const arn::RunConfig& rc) {
    arn::DataPair data;
    data.train = arn::load_dataset(rc.out + "/train.arnc");
    data.test = arn::load_dataset(rc.out + "/test.arnc");
    return data;
}

arn::Network<float> load_target(const arn::RunConfig& rc, const arn::DataPair& data) {
    arn::Network<float> target =
        arn::build_target(rc.target_arch, data.train.num_classes, arn::image_shape(data.train));
    target.from_named_tensors(arn::load_checkpoint<float>(target_stem(rc) + ".arnc"));
    return target;
}

struct LoadedDefense {
    arn::Defense<float> defense;
    std::vector<arn::AttackSpec> seen;
};

LoadedDefense load_defense(const arn::RunConfig& rc, const arn::Shape& img, const std::string& stem) {
    LoadedDefense out;
    out.defense.encoder = arn::build_encoder<float>(rc.latent_channels, img);
    out.defense.decoder = arn::build_decoder<float>(rc.latent_channels, img);
    const auto named = arn::load_checkpoint<float>(stem + ".arnc");
    out.defense.encoder.from_named_tensors(named);
    out.defense.decoder.from_named_tensors(named);

    const auto meta_bytes = arn::detail::read_file(stem + ".json");
    const json meta = json::parse(meta_bytes.begin(), meta_bytes.end());
    for (const auto& item : meta.at("seen_attacks")) out.seen.push_back(arn::attack_spec_from_json(item));
    return out;
}

void write_report(const arn::Report& report, const arn::RunConfig& rc, const std::string& stem) {
    arn::Report out = report;
    out.config_hash = arn::hash_config_text(rc.resolved.dump());
    out.timestamp = [] {
        char buf[32];
        const std::time_t now = std::time(nullptr);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        return std::string(buf);
    }();
    std::ofstream js(rc.out + "/" + stem + ".json");
    js << out.to_json().dump(2) << "\n";
    std::ofstream txt(rc.out + "/" + stem + ".txt");
    txt << out.text_table();
    std::cout << out.text_table();
}

int cmd_gen_data(const arn::RunConfig& rc) {
    const arn::DataPair data = arn::make_data(rc, rc.seed);
    arn::save_dataset(data.train, rc.out + "/train.arnc");
    arn::save_dataset(data.test, rc.out + "/test.arnc");
    std::cout << "wrote " << data.train.count() << " train / " << data.test.count() << " test examples to "
              << rc.out << "\n";
    return 0;
}

int cmd_train_target(const arn::RunConfig& rc) {
    const arn::DataPair data = load_data_files(rc);
    arn::TargetTrainResult res;
    arn::Network<float> target = arn::make_trained_target(rc, rc.target_arch, data, rc.seed, &res);
    arn::save_checkpoint(target.to_named_tensors(), target_stem(rc) + ".arnc");
    json meta = {{"arch", rc.target_arch},
                 {"seed", rc.seed},
                 {"train_accuracy", res.train_accuracy},
                 {"test_accuracy", res.test_accuracy},
                 {"steps", res.steps}};
    std::ofstream(target_stem(rc) + ".json") << meta.dump(2) << "\n";
    std::cout << rc.target_arch << ": train acc " << res.train_accuracy << ", test acc " << res.test_accuracy
              << "\n";
    return 0;
}

int cmd_craft(const arn::RunConfig& rc, const std::string& split) {
    const arn::DataPair data = load_data_files(rc);
    const arn::Network<float> target = load_target(rc, data);
    const arn::LabeledDataset& src = split == "test" ? data.test : data.train;
    const arn::AdversarialDataset crafted =
        arn::craft_dataset(target, src, rc.attacks, arn::SeededRng(rc.seed).fork(0xC0));
    arn::save_adversarial_dataset(crafted, rc.attacks, rc.seed, rc.out + "/crafted_" + split + ".arnc");
    std::cout << "crafted " << crafted.count() << " examples (" << crafted.K << " attack types) from the "
              << split << " split\n";
    return 0;
}

int cmd_train_arn(const arn::RunConfig& rc) {
    const arn::DataPair data = load_data_files(rc);
    arn::CraftedSet crafted = arn::load_adversarial_dataset(rc.out + "/crafted_train.arnc");
    if (rc.include_clean) crafted.data = arn::augment_with_clean(crafted.data, data.train);

    const arn::Shape img = arn::image_shape(data.train);
    arn::SeededRng init_rng = arn::SeededRng(rc.seed).fork(0x11);
    auto enc = arn::build_encoder<float>(rc.latent_channels, img);
    auto dec = arn::build_decoder<float>(rc.latent_channels, img);
    auto da = arn::build_attack_discriminator<float>(crafted.data.K, rc.latent_channels);
    auto di = arn::build_image_discriminator<float>(img);
    enc.init_params(init_rng);
    dec.init_params(init_rng);
    da.init_params(init_rng);
    di.init_params(init_rng);

    arn::ArnTrainConfig cfg = rc.arn;
    cfg.seed = rc.seed;
    cfg.checkpoint_dir = rc.out;
    arn::ArnState st = arn::train_arn(std::move(enc), std::move(dec), std::move(da), std::move(di),
                                      crafted.data, cfg);

    arn::save_checkpoint(st.checkpoint(), rc.out + "/arn.arnc");
    json meta;
    meta["seed"] = rc.seed;
    meta["best_val_mse"] = st.best_val_mse;
    meta["best_epoch"] = st.best_epoch;
    meta["epochs_run"] = static_cast<int>(st.epoch_trace.size());
    meta["seen_attacks"] = json::array();
    for (const auto& spec : crafted.specs) meta["seen_attacks"].push_back(arn::attack_spec_to_json(spec));
    std::ofstream(rc.out + "/arn.json") << meta.dump(2) << "\n";

    std::ofstream trace(rc.out + "/arn_loss_trace.jsonl");
    for (const arn::StepLosses& s : st.loss_trace) {
        trace << json{{"step", s.step}, {"l_da", s.da},   {"l_att", s.att}, {"l_nor", s.nor},
                      {"l_mse", s.mse}, {"l_adv", s.adv}, {"l_di", s.di}}
                     .dump()
              << "\n";
    }
    for (const arn::EpochRecord& e : st.epoch_trace) {
        trace << json{{"epoch", e.epoch}, {"val_mse", e.val_mse}}.dump() << "\n";
    }
    std::cout << "trained defense: best val mse " << st.best_val_mse << " at epoch " << st.best_epoch << "\n";
    return 0;
}

int cmd_eval(const arn::RunConfig& rc, const std::string& protocol) {
    if (rc.eval.seeds > 1) {
        // self-contained multi-seed runs: the whole pipeline per seed
        arn::Report report;
        if (protocol == "seen-unseen" || protocol == "all") {
            report = arn::run_multi_seed(rc, [&](std::uint64_t s) { return arn::run_seen_unseen(rc, s); });
        }
        if (protocol == "leaked" || protocol == "all") {
            arn::AttackSpec pgd_spec;
            pgd_spec.kind = arn::AttackKind::pgd;
            arn::Report leaked =
                arn::run_multi_seed(rc, [&](std::uint64_t s) { return arn::run_leaked(rc, s, pgd_spec); });
            report.rows.insert(report.rows.end(), leaked.rows.begin(), leaked.rows.end());
        }
        if (protocol == "cross-model" || protocol == "all") {
            const std::string arch_b = rc.target_arch == "lenet" ? "toynet" : "lenet";
            arn::Report cross =
                arn::run_multi_seed(rc, [&](std::uint64_t s) { return arn::run_cross_model(rc, s, arch_b); });
            report.rows.insert(report.rows.end(), cross.rows.begin(), cross.rows.end());
        }
        write_report(report, rc, "report");
        return 0;
    }

    // single seed: evaluate the artifacts already in --out
    const arn::DataPair data = load_data_files(rc);
    const arn::Network<float> target = load_target(rc, data);
    const LoadedDefense loaded = load_defense(rc, arn::image_shape(data.train), rc.out + "/arn");

    arn::EvalContext ec;
    ec.target = &target;
    ec.target_name = rc.target_arch;
    ec.seen_specs = loaded.seen;
    ec.eval_attacks = rc.eval.attacks;
    ec.test = &data.test;
    ec.max_examples = rc.eval.max_examples;
    ec.seed = rc.seed;

    arn::Report report;
    if (protocol == "seen-unseen" || protocol == "all") {
        ec.defense = nullptr;
        ec.defense_name = "none";
        report = arn::seen_unseen_protocol(ec);
        const arn::Defense<float> defense = loaded.defense;
        ec.defense = &defense;
        ec.defense_name = "arn";
        arn::Report defended = arn::seen_unseen_protocol(ec);
        report.rows.insert(report.rows.end(), defended.rows.begin(), defended.rows.end());
    }
    if (protocol == "leaked" || protocol == "all") {
        const arn::Defense<float> defense = loaded.defense;
        ec.defense = &defense;
        ec.defense_name = "arn";
        arn::AttackSpec pgd_spec;
        pgd_spec.kind = arn::AttackKind::pgd;
        // gray-box needs an independently trained surrogate on disk
        const std::string surrogate_stem = rc.out + "/arn_surrogate";
        if (!fs::exists(surrogate_stem + ".arnc")) {
            throw arn::ConfigError("gray-box scenario needs a surrogate defense at " + surrogate_stem +
                                   ".arnc (train one with --seed <other> and copy arn.arnc there)");
        }
        const LoadedDefense surrogate = load_defense(rc, arn::image_shape(data.train), surrogate_stem);
        arn::Report leaked = arn::leaked_defense_eval(ec, pgd_spec, &surrogate.defense);
        report.rows.insert(report.rows.end(), leaked.rows.begin(), leaked.rows.end());
    }
    if (protocol == "cross-model" || protocol == "all") {
        const std::string arch_b = rc.target_arch == "lenet" ? "toynet" : "lenet";
        arn::Network<float> target_b =
            arn::build_target(arch_b, data.train.num_classes, arn::image_shape(data.train));
        const std::string stem_b = rc.out + "/target_" + arch_b;
        if (fs::exists(stem_b + ".arnc")) {
            target_b.from_named_tensors(arn::load_checkpoint<float>(stem_b + ".arnc"));
        } else {
            arn::RunConfig rc_b = rc;
            arn::DataPair mutable_data = data;
            target_b = arn::make_trained_target(rc_b, arch_b, mutable_data, rc.seed + 1);
        }
        arn::Report cross = arn::cross_model(loaded.defense, target_b, arch_b, rc.eval.attacks, data.test,
                                             rc.eval.max_examples, rc.seed);
        report.rows.insert(report.rows.end(), cross.rows.begin(), cross.rows.end());
    }
    write_report(report, rc, "report");
    return 0;
}

int cmd_ablate(const arn::RunConfig& rc) {
    const arn::Report report =
        arn::run_multi_seed(rc, [&](std::uint64_t s) { return arn::run_ablation(rc, s); });
    write_report(report, rc, "ablation_report");
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
    const auto results = arn::gradsuite::run_loss_gradient_suite(seed, tolerance);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-24s max_rel_err %.3e  (%lld coords, %lld excluded)  %s\n", r.name.c_str(),
                    r.report.max_rel_err, static_cast<long long>(r.report.checked),
                    static_cast<long long>(r.report.excluded), r.report.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.report.pass;
    }
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial noise removal workbench"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string craft_split = "train";
    std::string protocol = "seen-unseen";
    std::uint64_t gc_seed = 11;
    double gc_tol = 1e-3;

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, args);
    CLI::App* tt = app.add_subcommand("train-target", "train the target classifier");
    add_common(tt, args);
    CLI::App* craft = app.add_subcommand("craft", "craft the adversarial training set");
    add_common(craft, args);
    craft->add_option("--split", craft_split, "dataset split to craft from (train|test)");
    CLI::App* ta = app.add_subcommand("train-arn", "train the denoising defense");
    add_common(ta, args);
    CLI::App* ev = app.add_subcommand("eval", "run evaluation protocols");
    add_common(ev, args);
    ev->add_option("--protocol", protocol, "seen-unseen|leaked|cross-model|all");
    CLI::App* ab = app.add_subcommand("ablate", "loss-term ablation study");
    add_common(ab, args);
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference checks for every loss");
    gc->add_option("--seed", gc_seed, "rig seed");
    gc->add_option("--tolerance", gc_tol, "max relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_tol);
        const std::string command = app.get_subcommands().front()->get_name();
        const arn::RunConfig rc = resolve_config(args, command);
        if (gen->parsed()) return cmd_gen_data(rc);
        if (tt->parsed()) return cmd_train_target(rc);
        if (craft->parsed()) {
            if (craft_split != "train" && craft_split != "test") {
                throw arn::ConfigError("--split must be train or test");
            }
            return cmd_craft(rc, craft_split);
        }
        if (ta->parsed()) return cmd_train_arn(rc);
        if (ev->parsed()) {
            if (protocol != "seen-unseen" && protocol != "leaked" && protocol != "cross-model" &&
                protocol != "all") {
                throw arn::ConfigError("--protocol must be seen-unseen, leaked, cross-model, or all");
            }
            return cmd_eval(rc, protocol);
        }
        if (ab->parsed()) return cmd_ablate(rc);
        return 1;
    } catch (const arn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
