#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlgcbm/cbl.hpp"

namespace vlgcbm::cli {

/// Everything a pipeline stage needs, collected from the optional JSON
/// config file and then overridden by command-line flags. Paths are kept
/// exactly as given (relative paths resolve against the working directory)
/// so identical configs produce identical artifacts wherever they run.
struct RunConfig {
    struct Paths {
        std::string embeddings;
        std::string detections;
        std::string vocabulary;
        std::string crop_embeddings;  // optional; empty disables augmentation
        std::string output_dir = "out";
    } paths;

    double threshold = 0.15;  // detection confidence cutoff T

    CblTrainConfig cbl;

    struct Final {
        double alpha_mix = 0.99;
        int path_points = 50;
        double min_ratio = 1.0 / 500.0;
        double val_fraction = 0.2;  // tail share of samples held out
        std::vector<double> target_necs = {5.0};
    } final;

    std::vector<int> eval_levels = {5, 10, 15, 20, 25, 30};
    std::uint64_t seed = 0;  // augmentation selection seed
};

/// Parses the JSON config file. Unknown keys and wrong types raise
/// ConfigError naming the offending field. Missing keys keep defaults.
RunConfig load_run_config(const std::filesystem::path& file);

/// Range checks every field; throws ConfigError naming the field.
void validate(const RunConfig& cfg);

/// Hash of the effective config plus the tool version, "fnv64:" prefixed.
/// Stage manifests and model bundles carry it so reruns can detect both
/// config and code drift.
std::string config_hash(const RunConfig& cfg);

}  // namespace vlgcbm::cli
