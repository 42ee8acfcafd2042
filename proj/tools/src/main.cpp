#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vlgcbm/errors.hpp"
#include "vlgcbm/version.hpp"

#include "run_config.hpp"
#include "stages.hpp"

namespace cli = vlgcbm::cli;

namespace {

/// Pipeline-wide flags shared by every stage subcommand. Flag overrides are
/// applied on top of the (optional) JSON config after parsing.
struct CommonArgs {
    std::string config_file;
    cli::RunConfig cfg;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_file,
                    "JSON config file; flags override its values");
    cmd->add_option("--embeddings", args.cfg.paths.embeddings,
                    "Backbone embedding file (VLGC)");
    cmd->add_option("--detections", args.cfg.paths.detections,
                    "Grounded detection records (JSONL)");
    cmd->add_option("--vocabulary", args.cfg.paths.vocabulary,
                    "Concept vocabulary (JSONL)");
    cmd->add_option("--crops", args.cfg.paths.crop_embeddings,
                    "Crop embedding file for augmentation (VLGC)");
    cmd->add_option("--out", args.cfg.paths.output_dir, "Output directory");
    cmd->add_option("--threshold", args.cfg.threshold,
                    "Detection confidence cutoff T");
    cmd->add_option("--seed", args.cfg.seed, "Augmentation selection seed");
    cmd->add_flag("--force", args.force, "Rerun even when up to date");
}

/// Re-reads the config file (when given) and lets parsed flags win.
void finalize(const CLI::App* cmd, CommonArgs& args) {
    if (args.config_file.empty()) return;
    cli::RunConfig from_file = cli::load_run_config(args.config_file);
    auto keep = [&](const char* flag) { return cmd->count(flag) > 0; };
    if (!keep("--embeddings")) args.cfg.paths.embeddings = from_file.paths.embeddings;
    if (!keep("--detections")) args.cfg.paths.detections = from_file.paths.detections;
    if (!keep("--vocabulary")) args.cfg.paths.vocabulary = from_file.paths.vocabulary;
    if (!keep("--crops")) args.cfg.paths.crop_embeddings = from_file.paths.crop_embeddings;
    if (!keep("--out")) args.cfg.paths.output_dir = from_file.paths.output_dir;
    if (!keep("--threshold")) args.cfg.threshold = from_file.threshold;
    if (!keep("--seed")) args.cfg.seed = from_file.seed;
    args.cfg.cbl = from_file.cbl;
    args.cfg.final = from_file.final;
    args.cfg.eval_levels = from_file.eval_levels;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-bottleneck training, sparsification and audit toolkit"};
    app.set_version_flag("--version", vlgcbm::kVersion);
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker cap (processing is serial)")
        ->check(CLI::PositiveNumber);

    int rc = 0;

    CommonArgs build_args;
    auto* build = app.add_subcommand(
        "build-dataset", "Filter detections and assemble the concept dataset");
    add_common(build, build_args);
    build->callback([&] {
        finalize(build, build_args);
        rc = cli::cmd_build_dataset(build_args.cfg, {build_args.force});
    });

    CommonArgs cbl_args;
    auto* train_cbl = app.add_subcommand(
        "train-cbl", "Train the concept bottleneck on the assembled dataset");
    add_common(train_cbl, cbl_args);
    train_cbl->add_option("--lr", cbl_args.cfg.cbl.learning_rate,
                          "Adam learning rate");
    train_cbl->add_option("--epochs", cbl_args.cfg.cbl.epochs, "Epoch count");
    train_cbl->add_option("--cbl-seed", cbl_args.cfg.cbl.seed,
                          "Trainer shuffle/augmentation seed");
    train_cbl->callback([&] {
        auto tracked = cbl_args.cfg.cbl;  // flag-written values
        finalize(train_cbl, cbl_args);
        if (train_cbl->count("--lr")) cbl_args.cfg.cbl.learning_rate = tracked.learning_rate;
        if (train_cbl->count("--epochs")) cbl_args.cfg.cbl.epochs = tracked.epochs;
        if (train_cbl->count("--cbl-seed")) cbl_args.cfg.cbl.seed = tracked.seed;
        rc = cli::cmd_train_cbl(cbl_args.cfg, {cbl_args.force});
    });

    CommonArgs final_args;
    cli::TrainFinalOptions final_opts;
    auto* train_final = app.add_subcommand(
        "train-final", "Solve the sparse final-layer regularization path");
    add_common(train_final, final_args);
    train_final->add_option("--alpha", final_args.cfg.final.alpha_mix,
                            "Elastic-net l1 share");
    train_final->add_option("--path-points", final_args.cfg.final.path_points,
                            "Number of lambda grid points");
    train_final->add_option("--min-ratio", final_args.cfg.final.min_ratio,
                            "lambda_min / lambda_max");
    train_final->add_option("--target-nec", final_args.cfg.final.target_necs,
                            "NEC targets to bundle (repeatable)");
    train_final->add_flag("--emit-dense", final_opts.emit_dense,
                          "Also solve and bundle the lambda = 0 model");
    train_final->callback([&] {
        auto tracked = final_args.cfg.final;  // flag-written values
        finalize(train_final, final_args);
        if (train_final->count("--alpha")) final_args.cfg.final.alpha_mix = tracked.alpha_mix;
        if (train_final->count("--path-points")) final_args.cfg.final.path_points = tracked.path_points;
        if (train_final->count("--min-ratio")) final_args.cfg.final.min_ratio = tracked.min_ratio;
        if (train_final->count("--target-nec")) final_args.cfg.final.target_necs = tracked.target_necs;
        final_opts.force = final_args.force;
        rc = cli::cmd_train_final(final_args.cfg, final_opts);
    });

    CommonArgs eval_args;
    auto* eval = app.add_subcommand(
        "eval-anec", "Accuracy at fixed NEC levels from the solved path");
    add_common(eval, eval_args);
    eval->add_option("--levels", eval_args.cfg.eval_levels,
                     "NEC levels to evaluate");
    eval->callback([&] {
        auto tracked = eval_args.cfg.eval_levels;
        finalize(eval, eval_args);
        if (eval->count("--levels")) eval_args.cfg.eval_levels = tracked;
        rc = cli::cmd_eval_anec(eval_args.cfg, {eval_args.force});
    });

    CommonArgs explain_args;
    cli::ExplainOptions explain_opts;
    auto* explain = app.add_subcommand(
        "explain", "Top-contribution explanations for predictions");
    add_common(explain, explain_args);
    explain->add_option("--model", explain_opts.model,
                        "Model bundle inside the output directory");
    explain->add_option("--samples", explain_opts.samples,
                        "Sample ids to explain (default: all)");
    explain->add_option("--top-n", explain_opts.top_n,
                        "Entries per explanation");
    explain->callback([&] {
        finalize(explain, explain_args);
        explain_opts.force = explain_args.force;
        rc = cli::cmd_explain(explain_args.cfg, explain_opts);
    });

    CommonArgs audit_args;
    cli::AuditOptions audit_opts;
    auto* audit = app.add_subcommand(
        "audit-prune", "Prediction-change audit of top-5 pruning");
    add_common(audit, audit_args);
    audit->add_option("--model", audit_opts.model,
                      "Sparse model bundle to audit");
    audit->add_option("--reference", audit_opts.reference,
                      "Reference bundle (typically the dense model)");
    audit->callback([&] {
        finalize(audit, audit_args);
        audit_opts.force = audit_args.force;
        rc = cli::cmd_audit_prune(audit_args.cfg, audit_opts);
    });

    cli::TheoremOptions theorem_opts;
    auto* theorem = app.add_subcommand(
        "verify-theorem",
        "Monte Carlo check of the random-bottleneck approximation bound");
    theorem->add_option("--d", theorem_opts.d, "Embedding dimension");
    theorem->add_option("--trials", theorem_opts.trials,
                        "Bottleneck draws per width");
    theorem->add_option("--k", theorem_opts.k_grid,
                        "Bottleneck widths (default derived from d)");
    theorem->add_option("--seed", theorem_opts.seed, "RNG seed");
    theorem->add_option("--out", theorem_opts.out, "CSV report path");
    theorem->callback([&] { rc = cli::cmd_verify_theorem(theorem_opts); });

    auto* synth = app.add_subcommand("synth", "Planted-fixture generation");
    synth->require_subcommand(1);
    cli::SynthOptions synth_opts;
    auto* generate = synth->add_subcommand(
        "generate", "Write a complete planted fixture directory");
    generate->add_option("--d", synth_opts.d, "Embedding dimension");
    generate->add_option("--k", synth_opts.k, "Concept count");
    generate->add_option("--classes", synth_opts.classes, "Class count");
    generate->add_option("--sparsity", synth_opts.sparsity,
                         "True nonzeros per class row");
    generate->add_option("--n", synth_opts.n, "Sample count");
    generate->add_option("--noise", synth_opts.noise, "Concept bit flip rate");
    generate->add_option("--seed", synth_opts.seed, "RNG seed");
    generate->add_option("--out", synth_opts.out, "Fixture directory");
    generate->add_flag("--force", synth_opts.force,
                       "Regenerate even when up to date");
    generate->callback([&] { rc = cli::cmd_synth_generate(synth_opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    } catch (const vlgcbm::ConfigError& e) {
        std::fprintf(stderr, "config error (%s): %s\n", e.field.c_str(),
                     e.what());
        return 2;
    } catch (const vlgcbm::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const vlgcbm::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const vlgcbm::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
