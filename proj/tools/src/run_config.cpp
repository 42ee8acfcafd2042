#include "run_config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vlgcbm/errors.hpp"
#include "vlgcbm/hash.hpp"
#include "vlgcbm/version.hpp"

namespace vlgcbm::cli {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& obj, const std::string& scope,
                    const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError(scope + it.key(), "unknown config key");
        }
    }
}

template <typename T>
void read_into(const json& obj, const std::string& scope, const char* key,
               T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(scope + key, "wrong type");
    }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw ConfigError("config", "cannot open config file: " + file.string());
    }
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config", "top level must be an object");

    RunConfig cfg;
    reject_unknown(root, "",
                   {"paths", "threshold", "cbl", "final", "eval", "seed"});

    if (auto it = root.find("paths"); it != root.end()) {
        const auto& p = *it;
        if (!p.is_object()) throw ConfigError("paths", "must be an object");
        reject_unknown(p, "paths.",
                       {"embeddings", "detections", "vocabulary",
                        "crop_embeddings", "output_dir"});
        read_into(p, "paths.", "embeddings", cfg.paths.embeddings);
        read_into(p, "paths.", "detections", cfg.paths.detections);
        read_into(p, "paths.", "vocabulary", cfg.paths.vocabulary);
        read_into(p, "paths.", "crop_embeddings", cfg.paths.crop_embeddings);
        read_into(p, "paths.", "output_dir", cfg.paths.output_dir);
    }
    read_into(root, "", "threshold", cfg.threshold);
    if (auto it = root.find("cbl"); it != root.end()) {
        const auto& c = *it;
        if (!c.is_object()) throw ConfigError("cbl", "must be an object");
        reject_unknown(c, "cbl.",
                       {"learning_rate", "weight_decay", "epochs", "batch_size",
                        "pos_loss_scale", "augmentation_prob", "val_fraction",
                        "seed"});
        read_into(c, "cbl.", "learning_rate", cfg.cbl.learning_rate);
        read_into(c, "cbl.", "weight_decay", cfg.cbl.weight_decay);
        read_into(c, "cbl.", "epochs", cfg.cbl.epochs);
        read_into(c, "cbl.", "batch_size", cfg.cbl.batch_size);
        read_into(c, "cbl.", "pos_loss_scale", cfg.cbl.pos_loss_scale);
        read_into(c, "cbl.", "augmentation_prob", cfg.cbl.augmentation_prob);
        read_into(c, "cbl.", "val_fraction", cfg.cbl.val_fraction);
        read_into(c, "cbl.", "seed", cfg.cbl.seed);
    }
    if (auto it = root.find("final"); it != root.end()) {
        const auto& f = *it;
        if (!f.is_object()) throw ConfigError("final", "must be an object");
        reject_unknown(f, "final.",
                       {"alpha_mix", "path_points", "min_ratio", "val_fraction",
                        "target_necs"});
        read_into(f, "final.", "alpha_mix", cfg.final.alpha_mix);
        read_into(f, "final.", "path_points", cfg.final.path_points);
        read_into(f, "final.", "min_ratio", cfg.final.min_ratio);
        read_into(f, "final.", "val_fraction", cfg.final.val_fraction);
        read_into(f, "final.", "target_necs", cfg.final.target_necs);
    }
    if (auto it = root.find("eval"); it != root.end()) {
        const auto& e = *it;
        if (!e.is_object()) throw ConfigError("eval", "must be an object");
        reject_unknown(e, "eval.", {"levels"});
        read_into(e, "eval.", "levels", cfg.eval_levels);
    }
    read_into(root, "", "seed", cfg.seed);
    return cfg;
}

void validate(const RunConfig& cfg) {
    if (cfg.threshold < 0.0 || cfg.threshold > 1.0) {
        throw ConfigError("threshold", "must be in [0, 1]");
    }
    if (cfg.cbl.learning_rate <= 0.0) {
        throw ConfigError("cbl.learning_rate", "must be positive");
    }
    if (cfg.cbl.weight_decay < 0.0) {
        throw ConfigError("cbl.weight_decay", "must be nonnegative");
    }
    if (cfg.cbl.epochs < 1) throw ConfigError("cbl.epochs", "must be >= 1");
    if (cfg.cbl.batch_size < 1) {
        throw ConfigError("cbl.batch_size", "must be >= 1");
    }
    if (cfg.cbl.pos_loss_scale < 0.0) {
        throw ConfigError("cbl.pos_loss_scale", "must be >= 0 (0 = derive)");
    }
    if (cfg.cbl.augmentation_prob < 0.0 || cfg.cbl.augmentation_prob > 1.0) {
        throw ConfigError("cbl.augmentation_prob", "must be in [0, 1]");
    }
    if (cfg.cbl.val_fraction < 0.0 || cfg.cbl.val_fraction >= 1.0) {
        throw ConfigError("cbl.val_fraction", "must be in [0, 1)");
    }
    if (cfg.final.alpha_mix <= 0.0 || cfg.final.alpha_mix > 1.0) {
        throw ConfigError("final.alpha_mix", "must be in (0, 1]");
    }
    if (cfg.final.path_points < 2) {
        throw ConfigError("final.path_points", "must be >= 2");
    }
    if (cfg.final.min_ratio <= 0.0 || cfg.final.min_ratio >= 1.0) {
        throw ConfigError("final.min_ratio", "must be in (0, 1)");
    }
    if (cfg.final.val_fraction <= 0.0 || cfg.final.val_fraction >= 1.0) {
        throw ConfigError("final.val_fraction", "must be in (0, 1)");
    }
    if (cfg.final.target_necs.empty()) {
        throw ConfigError("final.target_necs", "need at least one target");
    }
    for (double t : cfg.final.target_necs) {
        if (t < 0.0) throw ConfigError("final.target_necs", "must be >= 0");
    }
    if (cfg.eval_levels.empty()) {
        throw ConfigError("eval.levels", "need at least one level");
    }
    for (int level : cfg.eval_levels) {
        if (level < 0) throw ConfigError("eval.levels", "must be >= 0");
    }
    if (!cfg.paths.output_dir.size()) {
        throw ConfigError("paths.output_dir", "must not be empty");
    }
}

std::string config_hash(const RunConfig& cfg) {
    json j;
    j["tool"] = kVersion;
    j["paths"] = {{"embeddings", cfg.paths.embeddings},
                  {"detections", cfg.paths.detections},
                  {"vocabulary", cfg.paths.vocabulary},
                  {"crop_embeddings", cfg.paths.crop_embeddings},
                  {"output_dir", cfg.paths.output_dir}};
    j["threshold"] = cfg.threshold;
    j["cbl"] = {{"learning_rate", cfg.cbl.learning_rate},
                {"weight_decay", cfg.cbl.weight_decay},
                {"epochs", cfg.cbl.epochs},
                {"batch_size", cfg.cbl.batch_size},
                {"pos_loss_scale", cfg.cbl.pos_loss_scale},
                {"augmentation_prob", cfg.cbl.augmentation_prob},
                {"val_fraction", cfg.cbl.val_fraction},
                {"seed", cfg.cbl.seed}};
    j["final"] = {{"alpha_mix", cfg.final.alpha_mix},
                  {"path_points", cfg.final.path_points},
                  {"min_ratio", cfg.final.min_ratio},
                  {"val_fraction", cfg.final.val_fraction},
                  {"target_necs", cfg.final.target_necs}};
    j["eval"] = {{"levels", cfg.eval_levels}};
    j["seed"] = cfg.seed;
    return fnv1a64_hex(fnv1a64(j.dump()));
}

}  // namespace vlgcbm::cli
