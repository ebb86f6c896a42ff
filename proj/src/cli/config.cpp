#include <set>
#include <string>

#include "dppvae/cli.hpp"
#include "dppvae/errors.hpp"
#include "dppvae/io.hpp"
#include "dppvae/rng.hpp"

namespace dppvae::cli {

namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::string& path,
                 const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw InvalidConfig(path + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw InvalidConfig("unknown key '" + key + "' in " + path);
    }
}

void require(bool cond, const std::string& message) {
    if (!cond) throw InvalidConfig(message);
}

void validate_data(const json& d) {
    expect_keys(d, "data",
                {"kind", "n_per_class", "dim", "centers", "noise_std", "imbalance",
                 "test_per_class", "images", "labels", "classes", "binarize",
                 "n_neurons", "trial_counts", "baseline_rate", "tuned_rate",
                 "tuning_fraction", "replay_injection", "trials_path", "export_trials",
                 "reference_per_class"});
    require(d.contains("kind") && d.at("kind").is_string(), "data.kind is required");
    const std::string kind = d.at("kind").get<std::string>();
    require(kind == "blobs" || kind == "mnist" || kind == "spikes" || kind == "trials_file",
            "data.kind must be blobs|mnist|spikes|trials_file");
    if (d.contains("imbalance")) {
        expect_keys(d.at("imbalance"), "data.imbalance", {"total", "ratio", "minor_class"});
        require(d.at("imbalance").contains("total") && d.at("imbalance").contains("ratio"),
                "data.imbalance needs total and ratio");
        require(d.at("imbalance").at("ratio").is_array() &&
                    d.at("imbalance").at("ratio").size() >= 2,
                "data.imbalance.ratio must list one weight per class");
    }
    if (kind == "blobs") {
        require(d.contains("dim"), "data.dim is required for blobs");
        require(d.contains("centers") && d.at("centers").is_array(),
                "data.centers is required for blobs");
        require(d.contains("n_per_class") || d.contains("imbalance"),
                "blobs need n_per_class or imbalance");
    } else if (kind == "mnist") {
        require(d.contains("images") && d.contains("labels"),
                "data.images and data.labels are required for mnist");
    } else if (kind == "trials_file") {
        require(d.contains("trials_path"), "data.trials_path is required for trials_file");
    }
    if (d.contains("replay_injection") && !d.at("replay_injection").is_null()) {
        expect_keys(d.at("replay_injection"), "data.replay_injection",
                    {"source", "target", "window", "weight"});
    }
}

void validate_model(const json& m) {
    expect_keys(m, "model",
                {"latent_dim", "likelihood", "prior", "kernel", "encoder_hidden",
                 "decoder_hidden"});
    if (m.contains("likelihood")) {
        const std::string lik = m.at("likelihood").get<std::string>();
        require(lik == "bernoulli" || lik == "gaussian",
                "model.likelihood must be bernoulli|gaussian");
    }
    if (m.contains("prior")) {
        const std::string prior = m.at("prior").get<std::string>();
        require(prior == "standard" || prior == "dpp", "model.prior must be standard|dpp");
    }
    if (m.contains("kernel"))
        expect_keys(m.at("kernel"), "model.kernel", {"alpha", "rho", "sigma"});
}

}  // namespace

json load_config_file(const std::string& path) {
    json config;
    try {
        config = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw InvalidConfig("cannot parse " + path + ": " + e.what());
    }
    return config;
}

void validate_config(const json& config) {
    expect_keys(config, "config",
                {"seed", "out", "data", "model", "train", "classify", "generate", "replay"});
    if (config.contains("seed"))
        require(config.at("seed").is_number_integer(), "seed must be an integer");
    if (config.contains("out")) require(config.at("out").is_string(), "out must be a string");
    if (config.contains("data")) validate_data(config.at("data"));
    if (config.contains("model")) validate_model(config.at("model"));
    if (config.contains("train"))
        expect_keys(config.at("train"), "train",
                    {"epochs", "batch_size", "learning_rate", "mc_samples"});
    if (config.contains("classify"))
        expect_keys(config.at("classify"), "classify",
                    {"checkpoint", "mode", "l2_grid", "cv_folds", "per_class_test"});
    if (config.contains("generate"))
        expect_keys(config.at("generate"), "generate",
                    {"checkpoint", "n_samples", "reference_l2"});
    if (config.contains("replay"))
        expect_keys(config.at("replay"), "replay",
                    {"checkpoint", "grid_size", "windows", "logit_l2", "svg"});
}

void apply_override(json& config, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos || eq == 0)
        throw InvalidConfig("override must look like section.key=value: " + key_value);
    const std::string path = key_value.substr(0, eq);
    const std::string raw = key_value.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // bare strings allowed without quotes
    }
    json* at = &config;
    std::size_t begin = 0;
    for (;;) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw InvalidConfig("empty key segment in override: " + key_value);
        if (dot == std::string::npos) {
            (*at)[key] = value;
            break;
        }
        at = &(*at)[key];
        begin = dot + 1;
    }
}

std::string config_hash_hex(const json& config) {
    const std::uint64_t h = fnv1a64(config.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace dppvae::cli
