#include "stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "vlgcbm/cbl.hpp"
#include "vlgcbm/dataset.hpp"
#include "vlgcbm/errors.hpp"
#include "vlgcbm/explain.hpp"
#include "vlgcbm/formats.hpp"
#include "vlgcbm/hash.hpp"
#include "vlgcbm/leakage.hpp"
#include "vlgcbm/metrics.hpp"
#include "vlgcbm/sparse_final.hpp"
#include "vlgcbm/synth.hpp"
#include "vlgcbm/version.hpp"

namespace vlgcbm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// stage manifests
// ---------------------------------------------------------------------------

/// Per-stage record of what was read and written. Every path is stored as
/// the string used to open it (so relative configs stay relative), every
/// file with its content hash, and nothing time-dependent, which is what
/// makes reruns comparable and skippable.
struct StageManifest {
    std::string stage;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;
    std::vector<std::pair<std::string, std::string>> outputs;
};

void add_file(std::vector<std::pair<std::string, std::string>>& list,
              const std::string& path) {
    list.emplace_back(path, hash_file(path));
}

void write_stage_manifest(const StageManifest& m, const fs::path& file) {
    json j;
    j["stage"] = m.stage;
    j["tool_version"] = kVersion;
    j["config_hash"] = m.config_hash;
    j["inputs"] = json::object();
    for (const auto& [p, h] : m.inputs) j["inputs"][p] = h;
    j["outputs"] = json::object();
    for (const auto& [p, h] : m.outputs) j["outputs"][p] = h;
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw FormatError(FormatError::Code::Io,
                          "cannot write stage manifest: " + file.string());
    }
    out << j.dump(2) << '\n';
}

/// True when the stage's manifest exists, matches the config hash, and all
/// recorded inputs and outputs still hash to the recorded values.
bool stage_up_to_date(const fs::path& manifest_file, const std::string& stage,
                      const std::string& cfg_hash) {
    std::ifstream in(manifest_file);
    if (!in) return false;
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception&) {
        return false;
    }
    if (j.value("stage", "") != stage) return false;
    if (j.value("tool_version", "") != kVersion) return false;
    if (j.value("config_hash", "") != cfg_hash) return false;
    for (const char* section : {"inputs", "outputs"}) {
        if (!j.contains(section) || !j[section].is_object()) return false;
        for (auto it = j[section].begin(); it != j[section].end(); ++it) {
            std::error_code ec;
            if (!fs::exists(it.key(), ec)) return false;
            try {
                if (hash_file(it.key()) != it.value().get<std::string>()) {
                    return false;
                }
            } catch (const Error&) {
                return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

void require_path(const std::string& value, const char* field) {
    if (value.empty()) {
        throw ConfigError(field, "required path not set");
    }
    std::error_code ec;
    if (!fs::exists(value, ec)) {
        throw ConfigError(field, "path does not exist: " + value);
    }
}

std::string out_file(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.paths.output_dir) / name).generic_string();
}

void require_artifact(const std::string& path, const char* producer) {
    std::error_code ec;
    if (!fs::exists(path, ec)) {
        throw DataError("missing " + path + "; run " + producer + " first");
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<float> to_f32(const Mat& m) {
    std::vector<float> out(m.v.size());
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        out[i] = static_cast<float>(m.v[i]);
    }
    return out;
}

std::vector<float> to_f32(std::span<const double> v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(v[i]);
    }
    return out;
}

ModelBundle cbl_bundle(const ConceptBottleneck& cb, const std::string& hash) {
    ModelBundle b;
    b.k = static_cast<int>(cb.k());
    b.d = static_cast<int>(cb.d());
    b.has_cbl = true;
    b.has_cbl_bias = cb.has_bias();
    b.has_norm = cb.has_norm();
    b.config_hash = hash;
    b.w_c = to_f32(cb.weights);
    if (cb.has_bias()) b.b_c = to_f32(cb.bias);
    if (cb.has_norm()) {
        b.norm_mean = to_f32(cb.norm_mean);
        b.norm_std = to_f32(cb.norm_std);
    }
    return b;
}

ConceptBottleneck cbl_from_bundle(const ModelBundle& b) {
    if (!b.has_cbl) throw DataError("model bundle has no bottleneck weights");
    if (!b.has_norm) throw DataError("model bundle has no normalization stats");
    ConceptBottleneck cb;
    cb.weights = Mat(b.k, b.d);
    for (std::size_t i = 0; i < cb.weights.v.size(); ++i) {
        cb.weights.v[i] = b.w_c[i];
    }
    if (b.has_cbl_bias) cb.bias.assign(b.b_c.begin(), b.b_c.end());
    cb.norm_mean.assign(b.norm_mean.begin(), b.norm_mean.end());
    cb.norm_std.assign(b.norm_std.begin(), b.norm_std.end());
    return cb;
}

SparseFinalLayer final_from_bundle(const ModelBundle& b) {
    if (!b.has_final) throw DataError("model bundle has no final layer");
    SparseFinalLayer layer;
    layer.weights = Mat(b.c, b.k);
    for (std::size_t i = 0; i < layer.weights.v.size(); ++i) {
        layer.weights.v[i] = b.w_f[i];
    }
    layer.bias.assign(b.b_f.begin(), b.b_f.end());
    if (b.lambda) layer.lambda = *b.lambda;
    if (b.alpha_mix) layer.alpha_mix = *b.alpha_mix;
    layer.nec = nec(layer.weights);
    return layer;
}

ModelBundle full_bundle(const ConceptBottleneck& cb,
                        const SparseFinalLayer& layer,
                        const std::string& hash) {
    ModelBundle b = cbl_bundle(cb, hash);
    b.c = static_cast<int>(layer.num_classes());
    b.has_final = true;
    b.lambda = layer.lambda;
    b.alpha_mix = layer.alpha_mix;
    b.nec = layer.nec;
    b.w_f = to_f32(layer.weights);
    b.b_f = to_f32(layer.bias);
    return b;
}

/// Class label per embedding row, resolved through the detection records.
std::vector<int> labels_for(const EmbeddingMatrix& emb,
                            std::span<const DetectionRecord> records) {
    std::unordered_map<std::string, int> by_id;
    for (const auto& r : records) by_id.emplace(r.image_id, r.class_label);
    std::vector<int> labels(emb.n);
    for (std::size_t i = 0; i < emb.n; ++i) {
        auto it = by_id.find(emb.ids[i]);
        if (it == by_id.end()) {
            throw DataError("no detection record for embedding id '" +
                            emb.ids[i] + "'");
        }
        labels[i] = it->second;
    }
    return labels;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError(FormatError::Code::Io, "cannot write: " + path);
    }
    return out;
}

std::string nec_name(double target) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "model_nec%g.vlgm", target);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

int cmd_build_dataset(const RunConfig& cfg, const StageOptions& opts) {
    validate(cfg);
    require_path(cfg.paths.embeddings, "paths.embeddings");
    require_path(cfg.paths.detections, "paths.detections");
    require_path(cfg.paths.vocabulary, "paths.vocabulary");
    if (!cfg.paths.crop_embeddings.empty()) {
        require_path(cfg.paths.crop_embeddings, "paths.crop_embeddings");
    }
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "build-dataset.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "build-dataset", hash)) {
        std::printf("build-dataset: up to date\n");
        return 0;
    }
    fs::create_directories(cfg.paths.output_dir);

    auto embeddings = read_embeddings(cfg.paths.embeddings);
    auto detections = read_detections(cfg.paths.detections);
    auto vocabulary = read_vocabulary(cfg.paths.vocabulary);

    auto ds = assemble(embeddings, detections, vocabulary, cfg.threshold);
    ds.augmentations = emit_augmentations(
        filter_detections(detections, cfg.threshold), ds.concept_set, cfg.seed);

    auto manifest = make_aux_manifest(ds, cfg.paths.output_dir,
                                      cfg.paths.embeddings,
                                      cfg.paths.crop_embeddings);
    const std::string manifest_path = out_file(cfg, "aux_manifest.json");
    write_aux_manifest(manifest, manifest_path);

    StageManifest sm{"build-dataset", hash, {}, {}};
    add_file(sm.inputs, cfg.paths.embeddings);
    add_file(sm.inputs, cfg.paths.detections);
    add_file(sm.inputs, cfg.paths.vocabulary);
    if (!cfg.paths.crop_embeddings.empty()) {
        add_file(sm.inputs, cfg.paths.crop_embeddings);
    }
    add_file(sm.outputs, manifest_path);
    write_stage_manifest(sm, stage_file);

    std::printf("build-dataset: %zu samples, %zu concepts -> %s\n", ds.size(),
                ds.num_concepts(), manifest_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train-cbl
// ---------------------------------------------------------------------------

int cmd_train_cbl(const RunConfig& cfg, const StageOptions& opts) {
    validate(cfg);
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "train-cbl.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "train-cbl", hash)) {
        std::printf("train-cbl: up to date\n");
        return 0;
    }
    const std::string manifest_path = out_file(cfg, "aux_manifest.json");
    require_artifact(manifest_path, "build-dataset");

    auto ds = load_aux_dataset(manifest_path);
    auto crops = load_crop_embeddings(manifest_path);
    auto trained = train_cbl(ds, crops, cfg.cbl);

    const std::string model_path = out_file(cfg, "cbl.vlgm");
    write_model_bundle(cbl_bundle(trained.model, hash), model_path);

    const std::string log_path = out_file(cfg, "cbl_train_log.csv");
    {
        auto out = open_out(log_path);
        out << "epoch,train_loss,val_loss,mean_val_auc\n";
        for (const auto& e : trained.log) {
            out << e.epoch << ',' << fmt(e.train_loss) << ','
                << fmt(e.val_loss) << ',' << fmt(e.mean_val_auc) << '\n';
        }
    }

    StageManifest sm{"train-cbl", hash, {}, {}};
    add_file(sm.inputs, manifest_path);
    add_file(sm.outputs, model_path);
    add_file(sm.outputs, log_path);
    write_stage_manifest(sm, stage_file);

    std::printf("train-cbl: %zu epochs, final train loss %.4f -> %s\n",
                trained.log.size(),
                trained.log.empty() ? 0.0 : trained.log.back().train_loss,
                model_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train-final
// ---------------------------------------------------------------------------

int cmd_train_final(const RunConfig& cfg, const TrainFinalOptions& opts) {
    validate(cfg);
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "train-final.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "train-final", hash)) {
        std::printf("train-final: up to date\n");
        return 0;
    }
    const std::string manifest_path = out_file(cfg, "aux_manifest.json");
    const std::string cbl_path = out_file(cfg, "cbl.vlgm");
    require_artifact(manifest_path, "build-dataset");
    require_artifact(cbl_path, "train-cbl");

    auto ds = load_aux_dataset(manifest_path);
    auto cb = cbl_from_bundle(read_model_bundle(cbl_path));
    Mat logits = concept_logit_matrix(cb, ds.embeddings);

    const std::size_t n = ds.size();
    const auto k = static_cast<std::size_t>(logits.cols);
    std::size_t c = 0;
    for (int y : ds.class_labels) {
        if (y < 0) throw DataError("negative class label in dataset");
        c = std::max(c, static_cast<std::size_t>(y) + 1);
    }
    auto n_val = static_cast<std::size_t>(
        std::llround(cfg.final.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    const std::size_t n_train = n - n_val;

    Mat x_train(n_train, k), x_val(n_val, k);
    std::vector<int> y_train, y_val;
    for (std::size_t i = 0; i < n; ++i) {
        auto src = logits.row(i);
        if (i < n_train) {
            std::copy(src.begin(), src.end(), x_train.row(i).begin());
            y_train.push_back(ds.class_labels[i]);
        } else {
            std::copy(src.begin(), src.end(), x_val.row(i - n_train).begin());
            y_val.push_back(ds.class_labels[i]);
        }
    }

    auto path = solve_path(x_train, y_train, x_val, y_val, c,
                           cfg.final.alpha_mix, cfg.final.path_points,
                           cfg.final.min_ratio);

    const std::string path_file = out_file(cfg, "path.vlgp");
    write_path(path, path_file);

    const std::string csv_path = out_file(cfg, "final_path.csv");
    {
        auto out = open_out(csv_path);
        out << "index,lambda,nec,val_accuracy\n";
        for (std::size_t i = 0; i < path.entries.size(); ++i) {
            const auto& e = path.entries[i];
            out << i << ',' << fmt(e.lambda) << ',' << fmt(e.nec) << ','
                << fmt(e.val_accuracy) << '\n';
        }
    }

    StageManifest sm{"train-final", hash, {}, {}};
    add_file(sm.inputs, manifest_path);
    add_file(sm.inputs, cbl_path);
    add_file(sm.outputs, path_file);
    add_file(sm.outputs, csv_path);

    for (double target : cfg.final.target_necs) {
        auto layer = select_for_nec(path, target);
        const std::string bundle_path = out_file(cfg, nec_name(target));
        write_model_bundle(full_bundle(cb, layer, hash), bundle_path);
        add_file(sm.outputs, bundle_path);
    }
    if (opts.emit_dense) {
        auto dense = solve_elastic_net(x_train, y_train, c, 0.0,
                                       cfg.final.alpha_mix,
                                       &path.entries.back().layer);
        const std::string dense_path = out_file(cfg, "model_dense.vlgm");
        write_model_bundle(full_bundle(cb, dense, hash), dense_path);
        add_file(sm.outputs, dense_path);
    }
    write_stage_manifest(sm, stage_file);

    std::printf("train-final: %zu path points, lambda_max %.6g -> %s\n",
                path.entries.size(), path.lambda_max, path_file.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval-anec
// ---------------------------------------------------------------------------

int cmd_eval_anec(const RunConfig& cfg, const StageOptions& opts) {
    validate(cfg);
    require_path(cfg.paths.embeddings, "paths.embeddings");
    require_path(cfg.paths.detections, "paths.detections");
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "eval-anec.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "eval-anec", hash)) {
        std::printf("eval-anec: up to date\n");
        return 0;
    }
    const std::string path_file = out_file(cfg, "path.vlgp");
    const std::string cbl_path = out_file(cfg, "cbl.vlgm");
    require_artifact(path_file, "train-final");
    require_artifact(cbl_path, "train-cbl");

    auto path = read_path(path_file);
    auto cb = cbl_from_bundle(read_model_bundle(cbl_path));
    auto embeddings = read_embeddings(cfg.paths.embeddings);
    auto detections = read_detections(cfg.paths.detections);
    auto labels = labels_for(embeddings, detections);

    auto report = anec(path, cb, embeddings, labels, cfg.eval_levels);

    const std::string csv_path = out_file(cfg, "anec_report.csv");
    {
        auto out = open_out(csv_path);
        out << "level,accuracy\n";
        for (int level : report.levels) {
            out << level << ',' << fmt(report.per_nec.at(level)) << '\n';
        }
        out << "avg," << fmt(report.anec_avg) << '\n';
    }

    StageManifest sm{"eval-anec", hash, {}, {}};
    add_file(sm.inputs, path_file);
    add_file(sm.inputs, cbl_path);
    add_file(sm.inputs, cfg.paths.embeddings);
    add_file(sm.inputs, cfg.paths.detections);
    add_file(sm.outputs, csv_path);
    write_stage_manifest(sm, stage_file);

    std::printf("eval-anec: ANEC-avg %.4f over %zu levels -> %s\n",
                report.anec_avg, report.levels.size(), csv_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

int cmd_explain(const RunConfig& cfg, const ExplainOptions& opts) {
    validate(cfg);
    if (opts.top_n < 1) throw ConfigError("top_n", "must be >= 1");
    require_path(cfg.paths.embeddings, "paths.embeddings");
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "explain.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "explain", hash)) {
        std::printf("explain: up to date\n");
        return 0;
    }
    const std::string manifest_path = out_file(cfg, "aux_manifest.json");
    const std::string model_path = out_file(cfg, opts.model);
    require_artifact(manifest_path, "build-dataset");
    require_artifact(model_path, "train-final");

    auto bundle = read_model_bundle(model_path);
    auto cb = cbl_from_bundle(bundle);
    auto layer = final_from_bundle(bundle);
    auto manifest = read_aux_manifest(manifest_path);
    auto embeddings = read_embeddings(cfg.paths.embeddings);

    std::vector<std::size_t> rows;
    if (opts.samples.empty()) {
        rows.resize(embeddings.n);
        for (std::size_t i = 0; i < embeddings.n; ++i) rows[i] = i;
    } else {
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < embeddings.n; ++i) {
            index.emplace(embeddings.ids[i], i);
        }
        for (const auto& id : opts.samples) {
            auto it = index.find(id);
            if (it == index.end()) {
                throw DataError("sample id '" + id + "' not in embeddings");
            }
            rows.push_back(it->second);
        }
    }

    std::vector<Explanation> explanations;
    explanations.reserve(rows.size());
    const std::string text_path = out_file(cfg, "explanations.txt");
    {
        auto out = open_out(text_path);
        for (std::size_t row : rows) {
            auto z = embeddings.row_as_double(row);
            auto e = top_contributions(cb, layer, z, embeddings.ids[row],
                                       manifest.concept_set, opts.top_n);
            out << render(e) << '\n';
            explanations.push_back(std::move(e));
        }
    }

    std::size_t entries = 0;
    for (const auto& e : explanations) entries += e.entries.size();
    const double rate = negative_reasoning_rate(explanations);

    const std::string csv_path = out_file(cfg, "explain_summary.csv");
    {
        auto out = open_out(csv_path);
        out << "explanations,entries,negative_reasoning_rate\n";
        out << explanations.size() << ',' << entries << ',' << fmt(rate)
            << '\n';
    }

    StageManifest sm{"explain", hash, {}, {}};
    add_file(sm.inputs, manifest_path);
    add_file(sm.inputs, model_path);
    add_file(sm.inputs, cfg.paths.embeddings);
    add_file(sm.outputs, text_path);
    add_file(sm.outputs, csv_path);
    write_stage_manifest(sm, stage_file);

    std::printf("explain: %zu samples, negative reasoning rate %.4f -> %s\n",
                explanations.size(), rate, text_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// audit-prune
// ---------------------------------------------------------------------------

int cmd_audit_prune(const RunConfig& cfg, const AuditOptions& opts) {
    validate(cfg);
    require_path(cfg.paths.embeddings, "paths.embeddings");
    const std::string hash = config_hash(cfg);
    const std::string stage_file = out_file(cfg, "audit-prune.stage.json");
    if (!opts.force && stage_up_to_date(stage_file, "audit-prune", hash)) {
        std::printf("audit-prune: up to date\n");
        return 0;
    }
    const std::string model_path = out_file(cfg, opts.model);
    const std::string ref_path = out_file(cfg, opts.reference);
    require_artifact(model_path, "train-final");
    require_artifact(ref_path, "train-final --emit-dense");

    auto embeddings = read_embeddings(cfg.paths.embeddings);

    const std::string csv_path = out_file(cfg, "audit_prune.csv");
    double model_change = 0.0, ref_change = 0.0;
    {
        auto out = open_out(csv_path);
        out << "model,nec,change_fraction\n";
        auto audit_one = [&](const std::string& name, const std::string& path,
                             double& dst) {
            auto bundle = read_model_bundle(path);
            auto cb = cbl_from_bundle(bundle);
            auto layer = final_from_bundle(bundle);
            dst = prediction_change_after_top5(layer, layer, cb, embeddings);
            out << name << ',' << fmt(layer.nec) << ',' << fmt(dst) << '\n';
        };
        audit_one(opts.model, model_path, model_change);
        audit_one(opts.reference, ref_path, ref_change);
    }

    StageManifest sm{"audit-prune", hash, {}, {}};
    add_file(sm.inputs, model_path);
    add_file(sm.inputs, ref_path);
    add_file(sm.inputs, cfg.paths.embeddings);
    add_file(sm.outputs, csv_path);
    write_stage_manifest(sm, stage_file);

    std::printf("audit-prune: change %.4f (%s) vs %.4f (%s) -> %s\n",
                model_change, opts.model.c_str(), ref_change,
                opts.reference.c_str(), csv_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// verify-theorem
// ---------------------------------------------------------------------------

int cmd_verify_theorem(const TheoremOptions& opts) {
    if (opts.d < 1) throw ConfigError("d", "must be >= 1");
    if (opts.trials < 1) throw ConfigError("trials", "must be >= 1");
    for (int k : opts.k_grid) {
        if (k < 1) throw ConfigError("k_grid", "entries must be >= 1");
    }

    LeakageSetup setup;
    setup.d = opts.d;
    setup.trials = opts.trials;
    setup.seed = opts.seed;
    setup.sigma = random_spd(opts.d, opts.seed);
    if (opts.k_grid.empty()) {
        // Sub-d widths plus two at-or-above-d exact-recovery probes.
        std::set<int> grid = {1,         opts.d / 8,     opts.d / 4,
                              opts.d / 2, 3 * opts.d / 4, opts.d - 1,
                              opts.d,     opts.d + 16};
        grid.erase(0);
        setup.k_grid.assign(grid.begin(), grid.end());
    } else {
        setup.k_grid = opts.k_grid;
        std::sort(setup.k_grid.begin(), setup.k_grid.end());
        setup.k_grid.erase(
            std::unique(setup.k_grid.begin(), setup.k_grid.end()),
            setup.k_grid.end());
    }
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    setup.w.resize(opts.d);
    for (auto& v : setup.w) v = normal(rng);
    setup.b = normal(rng);

    auto result = run_leakage_experiment(setup);

    {
        auto out = open_out(opts.out);
        out << "k,mean_error,std_error,bound\n";
        for (int k : setup.k_grid) {
            const auto& r = result.per_k.at(k);
            out << k << ',' << fmt(r.mean_error) << ',' << fmt(r.std_error)
                << ',' << fmt(r.bound) << '\n';
        }
    }

    // The bound is on the expectation over random bottlenecks; 2% slack
    // absorbs the Monte Carlo noise of the empirical mean. At k >= d
    // recovery is exact up to numerical rank detection.
    const double lmax = largest_eigenvalue(setup.sigma);
    double w_sq = 0.0;
    for (double v : setup.w) w_sq += v * v;
    bool pass = true;
    double prev = std::numeric_limits<double>::infinity();
    for (int k : setup.k_grid) {
        const auto& r = result.per_k.at(k);
        if (k < opts.d) {
            if (r.mean_error > 1.02 * r.bound) pass = false;
        } else if (r.mean_error > 1e-8 * lmax * w_sq) {
            pass = false;
        }
        if (r.mean_error >= prev) pass = false;
        prev = r.mean_error;
        std::printf("k=%d mean=%.6g bound=%.6g\n", k, r.mean_error, r.bound);
    }
    std::printf("%s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 5;
}

// ---------------------------------------------------------------------------
// synth generate
// ---------------------------------------------------------------------------

int cmd_synth_generate(const SynthOptions& opts) {
    if (opts.n < 1) throw ConfigError("n", "must be >= 1");

    json cfg_json;
    cfg_json["tool"] = kVersion;
    cfg_json["d"] = opts.d;
    cfg_json["k"] = opts.k;
    cfg_json["classes"] = opts.classes;
    cfg_json["sparsity"] = opts.sparsity;
    cfg_json["n"] = opts.n;
    cfg_json["noise"] = opts.noise;
    cfg_json["seed"] = opts.seed;
    cfg_json["out"] = opts.out;
    const std::string hash = fnv1a64_hex(fnv1a64(cfg_json.dump()));

    const fs::path dir(opts.out);
    const std::string stage_file = (dir / "synth.stage.json").generic_string();
    if (!opts.force && stage_up_to_date(stage_file, "synth", hash)) {
        std::printf("synth: up to date\n");
        return 0;
    }
    fs::create_directories(dir);

    auto pm = make_planted(opts.d, opts.k, opts.classes, opts.sparsity,
                           opts.noise, opts.seed);
    auto data = generate(pm, opts.n, opts.seed + 1);
    auto crops = synth_crop_embeddings(pm, data);

    const std::string emb_path = (dir / "embeddings.vlgc").generic_string();
    const std::string det_path = (dir / "detections.jsonl").generic_string();
    const std::string voc_path = (dir / "vocabulary.jsonl").generic_string();
    const std::string crop_path = (dir / "crops.vlgc").generic_string();
    const std::string truth_path = (dir / "truth.csv").generic_string();

    write_embeddings(data.embeddings, emb_path);
    write_detections(data.detections, det_path);
    write_vocabulary(planted_vocabulary(pm), voc_path);
    write_embeddings(crops, crop_path);
    {
        auto out = open_out(truth_path);
        out << "image_id,class,clean_bits,noisy_bits\n";
        for (std::size_t i = 0; i < data.embeddings.n; ++i) {
            out << data.embeddings.ids[i] << ',' << data.class_labels[i] << ',';
            for (auto b : data.clean_bits[i].bits) out << char('0' + b);
            out << ',';
            for (auto b : data.noisy_bits[i].bits) out << char('0' + b);
            out << '\n';
        }
    }

    StageManifest sm{"synth", hash, {}, {}};
    add_file(sm.outputs, emb_path);
    add_file(sm.outputs, det_path);
    add_file(sm.outputs, voc_path);
    add_file(sm.outputs, crop_path);
    add_file(sm.outputs, truth_path);
    write_stage_manifest(sm, stage_file);

    std::printf("synth: %d samples, %d concepts, %d classes -> %s\n", opts.n,
                opts.k, opts.classes, opts.out.c_str());
    return 0;
}

}  // namespace vlgcbm::cli
