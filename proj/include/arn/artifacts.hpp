#pragma once

// File shapes the CLI subcommands exchange: labeled datasets and crafted
// adversarial sets ride in checkpoint containers; attack provenance rides in
// a JSON sidecar so evaluation runs are reproducible without re-crafting.

#include <string>
#include <vector>

#include <json.hpp>

#include "arn/attacks.hpp"
#include "arn/dataset.hpp"
#include "arn/serialize.hpp"

namespace arn {

namespace detail {

inline Tensor<float> ints_to_tensor(const std::vector<int>& v) {
    Tensor<float> t({static_cast<std::int64_t>(v.size())});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<float>(v[i]);
    return t;
}

inline std::vector<int> tensor_to_ints(const Tensor<float>& t) {
    std::vector<int> v(static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<int>(t[i]);
    return v;
}

}  // namespace detail

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
    NamedTensors<float> named;
    named.emplace("images", ds.images);
    named.emplace("labels", detail::ints_to_tensor(ds.labels));
    named.emplace("num_classes", Tensor<float>({1}, {static_cast<float>(ds.num_classes)}));
    named.emplace("split", Tensor<float>({1}, {ds.split == Split::train ? 0.0f : 1.0f}));
    save_checkpoint(named, path);
}

inline LabeledDataset load_dataset(const std::string& path) {
    const NamedTensors<float> named = load_checkpoint<float>(path);
    LabeledDataset ds;
    ds.images = named.at("images");
    ds.labels = detail::tensor_to_ints(named.at("labels"));
    ds.num_classes = static_cast<int>(named.at("num_classes")[0]);
    ds.split = named.at("split")[0] == 0.0f ? Split::train : Split::test;
    ds.validate();
    return ds;
}

inline nlohmann::json attack_spec_to_json(const AttackSpec& spec) {
    return nlohmann::json{
        {"kind", attack_kind_name(spec.kind)},
        {"epsilon", spec.epsilon},
        {"steps", spec.steps},
        {"step_size", spec.step_size},
        {"targeted", spec.targeted},
        {"target_label", spec.target_label},
        {"rand_init", spec.rand_init},
        {"tv_weight", spec.tv_weight},
        {"label", spec.label},
    };
}

inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
    AttackSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fgsm") spec.kind = AttackKind::fgsm;
    else if (kind == "pgd") spec.kind = AttackKind::pgd;
    else if (kind == "sta_lite") spec.kind = AttackKind::sta_lite;
    else if (kind == "bpda_pgd") spec.kind = AttackKind::bpda_pgd;
    else throw ConfigError("unknown attack kind '" + kind + "' in sidecar");
    spec.epsilon = j.at("epsilon").get<double>();
    spec.steps = j.at("steps").get<int>();
    spec.step_size = j.at("step_size").get<double>();
    spec.targeted = j.at("targeted").get<bool>();
    spec.target_label = j.at("target_label").get<int>();
    spec.rand_init = j.at("rand_init").get<bool>();
    spec.tv_weight = j.at("tv_weight").get<double>();
    spec.label = j.at("label").get<std::string>();
    return spec;
}

// Crafted set: tensors in <path>, provenance in <path>.json.
inline void save_adversarial_dataset(const AdversarialDataset& ds, const std::vector<AttackSpec>& specs,
                                     std::uint64_t seed, const std::string& path) {
    NamedTensors<float> named;
    named.emplace("natural", ds.natural);
    named.emplace("adversarial", ds.adversarial);
    named.emplace("class_labels", detail::ints_to_tensor(ds.class_labels));
    named.emplace("attack_type", detail::ints_to_tensor(ds.attack_type));
    named.emplace("num_classes", Tensor<float>({1}, {static_cast<float>(ds.num_classes)}));
    save_checkpoint(named, path);

    nlohmann::json side;
    side["K"] = ds.K;
    side["seed"] = seed;
    side["num_classes"] = ds.num_classes;
    side["attacks"] = nlohmann::json::array();
    for (const AttackSpec& s : specs) side["attacks"].push_back(attack_spec_to_json(s));
    detail::write_file(path + ".json", side.dump(2) + "\n");
}

struct CraftedSet {
    AdversarialDataset data;
    std::vector<AttackSpec> specs;
    std::uint64_t seed = 0;
};

inline CraftedSet load_adversarial_dataset(const std::string& path) {
    CraftedSet out;
    const NamedTensors<float> named = load_checkpoint<float>(path);
    out.data.natural = named.at("natural");
    out.data.adversarial = named.at("adversarial");
    out.data.class_labels = detail::tensor_to_ints(named.at("class_labels"));
    out.data.attack_type = detail::tensor_to_ints(named.at("attack_type"));
    out.data.num_classes = static_cast<int>(named.at("num_classes")[0]);

    const auto side_bytes = detail::read_file(path + ".json");
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(side_bytes.begin(), side_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoCode::bad_value, path + ".json: " + e.what());
    }
    out.data.K = side.at("K").get<int>();
    out.seed = side.at("seed").get<std::uint64_t>();
    for (const auto& item : side.at("attacks")) out.specs.push_back(attack_spec_from_json(item));
    if (static_cast<int>(out.specs.size()) != out.data.K) {
        throw IoError(IoCode::bad_value, path + ".json: K does not match attack list");
    }
    return out;
}

}  // namespace arn
