// End-to-end checks of the command-line binary: subcommands compose through
// files, exit codes distinguish config errors from runtime failures, and a
// fixed seed reproduces crafted artifacts byte for byte.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "arn/artifacts.hpp"
#include "arn/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#ifndef ARN_CLI_PATH
#error "ARN_CLI_PATH must point at the built binary"
#endif

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ARN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("arn_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-but-real pipeline config: tiny images, 4 classes, short trainings.
std::string micro_config(const std::string& dir, int size = 8) {
    json cfg = {
        {"seed", 5},
        {"out", dir},
        {"data",
         {{"num_classes", 4}, {"train_per_class", 12}, {"test_per_class", 8}, {"size", size}, {"noise_sigma", 0.15}}},
        {"target", {{"arch", "toynet"}, {"epochs", 3}, {"batch_size", 12}}},
        {"arn",
         {{"latent_channels", 4},
          {"epochs", 2},
          {"batch_size", 12},
          {"lr_encoder", 1e-3},
          {"lr_decoder", 1e-3},
          {"lr_attack_disc", 1e-3},
          {"lr_image_disc", 1e-3}}},
        {"attacks", json::array({
                        {{"kind", "pgd"}, {"steps", 3}, {"step_size", 0.15}},
                        {{"kind", "pgd"}, {"steps", 3}, {"step_size", 0.15}, {"targeted", true}},
                    })},
        {"eval",
         {{"attacks", json::array({
                          {{"kind", "pgd"}, {"steps", 3}, {"step_size", 0.15}},
                          {{"kind", "fgsm"}, {"steps", 1}},
                      })},
          {"max_examples", 16},
          {"seeds", 1}}},
    };
    const std::string path = dir + "/config.json";
    std::ofstream(path) << cfg.dump(2);
    return path;
}

}  // namespace

TEST_CASE("missing config file exits with the config error code") {
    CHECK(run_cli("gen-data --config /no/such/file.json") == 1);
}

TEST_CASE("unknown override key exits with the config error code") {
    const std::string dir = fresh_dir("badoverride");
    CHECK(run_cli("gen-data --out " + dir + " --override data.nope=1") == 1);
}

TEST_CASE("eval before training is a runtime failure, not a config error") {
    const std::string dir = fresh_dir("premature");
    const std::string cfg = micro_config(dir);
    CHECK(run_cli("eval --config " + cfg) == 2);
}

TEST_CASE("the full pipeline composes through files and reproduces bitwise") {
    const std::string dir = fresh_dir("pipe");
    const std::string cfg = micro_config(dir);

    REQUIRE(run_cli("gen-data --config " + cfg) == 0);
    REQUIRE(fs::exists(dir + "/train.arnc"));
    REQUIRE(fs::exists(dir + "/test.arnc"));
    REQUIRE(fs::exists(dir + "/resolved_gen-data.json"));

    REQUIRE(run_cli("train-target --config " + cfg) == 0);
    REQUIRE(fs::exists(dir + "/target_toynet.arnc"));
    const json target_meta = json::parse(slurp(dir + "/target_toynet.json"));
    CHECK(target_meta.at("seed") == 5);
    CHECK(target_meta.at("test_accuracy").get<double>() >= 0.5);

    REQUIRE(run_cli("craft --config " + cfg) == 0);
    REQUIRE(fs::exists(dir + "/crafted_train.arnc"));
    const json sidecar = json::parse(slurp(dir + "/crafted_train.arnc.json"));
    CHECK(sidecar.at("K") == 2);
    CHECK(sidecar.at("attacks").size() == 2);

    // crafting twice with the same seed is byte-identical
    const std::string first = slurp(dir + "/crafted_train.arnc");
    REQUIRE(run_cli("craft --config " + cfg) == 0);
    CHECK(slurp(dir + "/crafted_train.arnc") == first);

    REQUIRE(run_cli("train-arn --config " + cfg) == 0);
    REQUIRE(fs::exists(dir + "/arn.arnc"));
    REQUIRE(fs::exists(dir + "/arn_loss_trace.jsonl"));
    const json arn_meta = json::parse(slurp(dir + "/arn.json"));
    CHECK(arn_meta.at("seen_attacks").size() == 2);

    // the loss trace is one JSON object per line with all six losses
    std::ifstream trace(dir + "/arn_loss_trace.jsonl");
    std::string line;
    int steps = 0;
    while (std::getline(trace, line)) {
        const json rec = json::parse(line);
        if (rec.contains("step")) {
            ++steps;
            for (const char* key : {"l_da", "l_att", "l_nor", "l_mse", "l_adv", "l_di"}) {
                REQUIRE(rec.contains(key));
            }
        }
    }
    CHECK(steps > 0);

    REQUIRE(run_cli("eval --config " + cfg) == 0);
    const json report = json::parse(slurp(dir + "/report.json"));
    CHECK(report.at("rows").size() >= 6);  // clean + 2 attacks, defended and undefended
    bool found_seen = false;
    for (const auto& row : report.at("rows")) {
        if (row.at("attack_name") == "pgd_N" && row.at("defense_config") == "arn") {
            found_seen = row.at("seen").get<bool>();
        }
    }
    CHECK(found_seen);
}

TEST_CASE("craft honors a raised-budget override and records it in the sidecar") {
    const std::string dir = fresh_dir("override");
    const std::string cfg = micro_config(dir);
    REQUIRE(run_cli("gen-data --config " + cfg) == 0);
    REQUIRE(run_cli("train-target --config " + cfg) == 0);
    REQUIRE(run_cli("craft --config " + cfg + " --override attacks.0.epsilon=0.4") == 0);
    const json sidecar = json::parse(slurp(dir + "/crafted_train.arnc.json"));
    CHECK(sidecar.at("attacks")[0].at("epsilon") == 0.4);
    CHECK(sidecar.at("attacks")[1].at("epsilon") == 0.3);

    // the crafted deltas actually use the raised budget
    const auto crafted = arn::load_adversarial_dataset(dir + "/crafted_train.arnc");
    float max_delta = 0.0f;
    const auto counts = crafted.data.type_counts();
    for (std::int64_t i = 0; i < counts[0] * 64; ++i) {
        max_delta = std::max(max_delta, std::abs(crafted.data.adversarial[i] - crafted.data.natural[i]));
    }
    CHECK(max_delta > 0.305f);
    CHECK(max_delta <= 0.4f + 1e-5f);
}

TEST_CASE("gradcheck subcommand reports per-loss errors and exits clean") {
    CHECK(run_cli("gradcheck") == 0);
}

TEST_CASE("leaked and cross-model protocols run from on-disk artifacts") {
    // 16x16 so the conv architecture can serve as the transfer target
    const std::string dir = fresh_dir("protocols");
    const std::string cfg = micro_config(dir, 16);
    REQUIRE(run_cli("gen-data --config " + cfg) == 0);
    REQUIRE(run_cli("train-target --config " + cfg) == 0);
    REQUIRE(run_cli("craft --config " + cfg) == 0);
    REQUIRE(run_cli("train-arn --config " + cfg) == 0);

    // leaked without a surrogate on disk is a config error
    CHECK(run_cli("eval --config " + cfg + " --protocol leaked") == 1);

    // an independently trained defense standing in as the surrogate
    fs::copy_file(dir + "/arn.arnc", dir + "/arn_surrogate.arnc");
    fs::copy_file(dir + "/arn.json", dir + "/arn_surrogate.json");
    REQUIRE(run_cli("eval --config " + cfg + " --protocol leaked") == 0);
    json report = json::parse(slurp(dir + "/report.json"));
    std::set<std::string> scenarios;
    for (const auto& row : report.at("rows")) {
        if (row.contains("scenario")) scenarios.insert(row.at("scenario").get<std::string>());
    }
    CHECK(scenarios.count("whitebox"));
    CHECK(scenarios.count("graybox"));
    CHECK(scenarios.count("bpda"));

    REQUIRE(run_cli("eval --config " + cfg + " --protocol cross-model") == 0);
    report = json::parse(slurp(dir + "/report.json"));
    bool has_transfer = false;
    for (const auto& row : report.at("rows")) {
        if (row.at("defense_config") == "arn_transfer") has_transfer = true;
    }
    CHECK(has_transfer);
}
