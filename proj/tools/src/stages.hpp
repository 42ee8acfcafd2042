#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace vlgcbm::cli {

/// Shared stage switches. `force` reruns a stage whose manifest says it is
/// already up to date.
struct StageOptions {
    bool force = false;
};

int cmd_build_dataset(const RunConfig& cfg, const StageOptions& opts);
int cmd_train_cbl(const RunConfig& cfg, const StageOptions& opts);

struct TrainFinalOptions : StageOptions {
    bool emit_dense = false;  // also solve lambda = 0 and bundle it
};
int cmd_train_final(const RunConfig& cfg, const TrainFinalOptions& opts);

int cmd_eval_anec(const RunConfig& cfg, const StageOptions& opts);

struct ExplainOptions : StageOptions {
    std::string model = "model_nec5.vlgm";  // bundle inside output_dir
    std::vector<std::string> samples;       // empty = every embedding row
    int top_n = 5;
};
int cmd_explain(const RunConfig& cfg, const ExplainOptions& opts);

struct AuditOptions : StageOptions {
    std::string model = "model_nec5.vlgm";
    std::string reference = "model_dense.vlgm";
};
int cmd_audit_prune(const RunConfig& cfg, const AuditOptions& opts);

struct TheoremOptions {
    int d = 64;
    int trials = 1000;
    std::vector<int> k_grid;  // empty = derived from d
    std::uint64_t seed = 0;
    std::string out = "theorem.csv";
};
int cmd_verify_theorem(const TheoremOptions& opts);

struct SynthOptions {
    int d = 64;
    int k = 24;
    int classes = 6;
    int sparsity = 5;
    int n = 2000;
    double noise = 0.05;
    std::uint64_t seed = 0;
    std::string out = "fixture";
    bool force = false;
};
int cmd_synth_generate(const SynthOptions& opts);

}  // namespace vlgcbm::cli
