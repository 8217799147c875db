#pragma once

// JSON run configuration: a single schema covering data generation, target
// training, attack crafting, defense training, and evaluation. User files are
// merged over the defaults with unknown keys rejected; --override flags patch
// dotted paths that must already exist.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arn/attacks.hpp"
#include "arn/errors.hpp"
#include "arn/losses.hpp"
#include "arn/trainer.hpp"

namespace arn {

using json = nlohmann::json;

inline json default_attack_json() {
    return json{
        {"kind", "pgd"},     {"epsilon", 0.3}, {"steps", 40},       {"step_size", 0.01},
        {"targeted", false}, {"rand_init", true}, {"target_label", -1}, {"tv_weight", 0.05},
        {"label", ""},
    };
}

inline json default_config_json() {
    return json{
        {"seed", 1},
        {"out", "runs/latest"},
        {"data",
         {
             {"kind", "synthetic"},
             {"num_classes", 10},
             {"train_per_class", 100},
             {"test_per_class", 50},
             {"size", 16},
             {"noise_sigma", 0.08},
             {"idx_train_images", ""},
             {"idx_train_labels", ""},
             {"idx_test_images", ""},
             {"idx_test_labels", ""},
         }},
        {"target",
         {
             {"arch", "lenet"},
             {"epochs", 8},
             {"batch_size", 50},
             {"learning_rate", 1e-3},
         }},
        {"arn",
         {
             {"latent_channels", 16},
             {"epochs", 30},
             {"batch_size", 50},
             {"lr_encoder", 1e-4},
             {"lr_decoder", 1e-4},
             {"lr_attack_disc", 1e-4},
             {"lr_image_disc", 1e-4},
             {"lambda1", 0.1},
             {"lambda2", 0.01},
             {"theta", 0.1},
             {"val_fraction", 0.1},
             {"patience", 5},
             {"min_delta", 1e-5},
             {"include_clean", false},
             {"checkpoint_every", 0},
         }},
        {"attacks", json::array({default_attack_json()})},
        {"eval",
         {
             {"attacks", json::array()},
             {"max_examples", 1000},
             {"seeds", 3},
         }},
    };
}

namespace detail {

// Merge user JSON over defaults, rejecting keys the schema does not know.
// Arrays of attack objects are validated item by item against the attack
// schema defaults.
inline void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object() || !base.is_object()) {
        base = user;
        return;
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string child = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("unknown config key '" + child + "'");
        }
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object()) {
            merge_strict(slot, it.value(), child);
        } else if (slot.is_array() && it.value().is_array() && (it.key() == "attacks")) {
            json merged = json::array();
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                json item = default_attack_json();
                merge_strict(item, it.value()[i], child + "." + std::to_string(i));
                merged.push_back(std::move(item));
            }
            slot = std::move(merged);
        } else {
            slot = it.value();
        }
    }
}

inline bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace detail

inline json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json user;
    try {
        in >> user;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    json merged = default_config_json();
    detail::merge_strict(merged, user, "");
    return merged;
}

// key=value with dotted paths; numeric path components index arrays. The
// path must resolve to an existing schema node.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json* node = &cfg;
    std::size_t pos = 0;
    while (pos < path.size()) {
        const std::size_t dot = path.find('.', pos);
        const std::string part = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (node->is_array()) {
            if (!detail::all_digits(part)) throw ConfigError("expected array index in override path: " + path);
            const std::size_t idx = static_cast<std::size_t>(std::stoull(part));
            if (idx >= node->size()) throw ConfigError("override index out of range: " + path);
            node = &(*node)[idx];
        } else if (node->is_object()) {
            if (!node->contains(part)) throw ConfigError("override key does not exist: " + path);
            node = &(*node)[part];
        } else {
            throw ConfigError("override path goes through a scalar: " + path);
        }
        pos = dot == std::string::npos ? path.size() : dot + 1;
    }
    if (node->is_object() || node->is_array()) {
        throw ConfigError("override target is not a scalar: " + path);
    }
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // bare strings
    }
    if (value.is_object() || value.is_array()) throw ConfigError("override value must be scalar: " + assignment);
    *node = value;
}

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string kind = "synthetic";
    int num_classes = 10;
    std::int64_t train_per_class = 100;
    std::int64_t test_per_class = 50;
    std::int64_t size = 16;
    double noise_sigma = 0.08;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
};

struct EvalConfig {
    std::vector<AttackSpec> attacks;
    std::int64_t max_examples = 1000;
    int seeds = 3;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "runs/latest";
    DataConfig data;
    std::string target_arch = "lenet";
    TargetTrainConfig target;
    ArnTrainConfig arn;
    std::int64_t latent_channels = 16;
    bool include_clean = false;
    std::vector<AttackSpec> attacks;
    EvalConfig eval;
    json resolved;
};

inline AttackSpec parse_attack(const json& j) {
    AttackSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fgsm") spec.kind = AttackKind::fgsm;
    else if (kind == "pgd") spec.kind = AttackKind::pgd;
    else if (kind == "sta_lite") spec.kind = AttackKind::sta_lite;
    else if (kind == "bpda_pgd") spec.kind = AttackKind::bpda_pgd;
    else throw ConfigError("unknown attack kind '" + kind + "'");
    spec.epsilon = j.at("epsilon").get<double>();
    spec.steps = j.at("steps").get<int>();
    spec.step_size = j.at("step_size").get<double>();
    spec.targeted = j.at("targeted").get<bool>();
    spec.target_label = j.at("target_label").get<int>();
    spec.rand_init = j.at("rand_init").get<bool>();
    spec.tv_weight = j.at("tv_weight").get<double>();
    spec.label = j.at("label").get<std::string>();
    spec.validate();
    return spec;
}

inline RunConfig parse_run_config(const json& cfg) {
    RunConfig rc;
    rc.resolved = cfg;
    rc.seed = cfg.at("seed").get<std::uint64_t>();
    rc.out = cfg.at("out").get<std::string>();

    const json& d = cfg.at("data");
    rc.data.kind = d.at("kind").get<std::string>();
    if (rc.data.kind != "synthetic" && rc.data.kind != "idx") {
        throw ConfigError("data.kind must be 'synthetic' or 'idx'");
    }
    rc.data.num_classes = d.at("num_classes").get<int>();
    rc.data.train_per_class = d.at("train_per_class").get<std::int64_t>();
    rc.data.test_per_class = d.at("test_per_class").get<std::int64_t>();
    rc.data.size = d.at("size").get<std::int64_t>();
    rc.data.noise_sigma = d.at("noise_sigma").get<double>();
    rc.data.idx_train_images = d.at("idx_train_images").get<std::string>();
    rc.data.idx_train_labels = d.at("idx_train_labels").get<std::string>();
    rc.data.idx_test_images = d.at("idx_test_images").get<std::string>();
    rc.data.idx_test_labels = d.at("idx_test_labels").get<std::string>();

    const json& t = cfg.at("target");
    rc.target_arch = t.at("arch").get<std::string>();
    if (rc.target_arch != "lenet" && rc.target_arch != "toynet") {
        throw ConfigError("target.arch must be 'lenet' or 'toynet'");
    }
    rc.target.epochs = t.at("epochs").get<int>();
    rc.target.batch_size = t.at("batch_size").get<std::int64_t>();
    rc.target.learning_rate = t.at("learning_rate").get<double>();
    rc.target.seed = rc.seed;

    const json& a = cfg.at("arn");
    rc.latent_channels = a.at("latent_channels").get<std::int64_t>();
    rc.arn.epochs = a.at("epochs").get<int>();
    rc.arn.batch_size = a.at("batch_size").get<std::int64_t>();
    rc.arn.lr_encoder = a.at("lr_encoder").get<double>();
    rc.arn.lr_decoder = a.at("lr_decoder").get<double>();
    rc.arn.lr_attack_disc = a.at("lr_attack_disc").get<double>();
    rc.arn.lr_image_disc = a.at("lr_image_disc").get<double>();
    rc.arn.weights.lambda1 = a.at("lambda1").get<double>();
    rc.arn.weights.lambda2 = a.at("lambda2").get<double>();
    rc.arn.weights.theta = a.at("theta").get<double>();
    rc.arn.val_fraction = a.at("val_fraction").get<double>();
    rc.arn.patience = a.at("patience").get<int>();
    rc.arn.min_delta = a.at("min_delta").get<double>();
    rc.arn.checkpoint_every = a.at("checkpoint_every").get<int>();
    rc.arn.seed = rc.seed;
    rc.include_clean = a.at("include_clean").get<bool>();

    for (const json& item : cfg.at("attacks")) rc.attacks.push_back(parse_attack(item));
    for (const json& item : cfg.at("eval").at("attacks")) rc.eval.attacks.push_back(parse_attack(item));
    rc.eval.max_examples = cfg.at("eval").at("max_examples").get<std::int64_t>();
    rc.eval.seeds = cfg.at("eval").at("seeds").get<int>();

    // cross-field invariants
    if (rc.target.learning_rate <= 0 || rc.arn.lr_encoder <= 0 || rc.arn.lr_decoder <= 0 ||
        rc.arn.lr_attack_disc <= 0 || rc.arn.lr_image_disc <= 0) {
        throw ConfigError("all learning rates must be > 0");
    }
    if (rc.arn.batch_size < 2 || rc.target.batch_size < 2) {
        throw ConfigError("batch_size must be >= 2");
    }
    rc.arn.weights.validate();
    if (rc.eval.seeds < 1) throw ConfigError("eval.seeds must be >= 1");
    return rc;
}

}  // namespace arn
