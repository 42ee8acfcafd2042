#include "vlgcbm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vlgcbm/hash.hpp"

namespace vlgcbm {

using json = nlohmann::ordered_json;

std::vector<DetectionRecord> filter_detections(
    std::span<const DetectionRecord> records, double threshold) {
    std::vector<DetectionRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        DetectionRecord kept;
        kept.image_id = r.image_id;
        kept.class_label = r.class_label;
        for (const auto& b : r.boxes) {
            if (b.confidence > threshold) kept.boxes.push_back(b);
        }
        out.push_back(std::move(kept));
    }
    return out;
}

std::vector<std::string> build_concept_set(
    std::span<const DetectionRecord> filtered, const ConceptVocabulary& vocab) {
    auto index = vocab.make_index();
    std::vector<char> present(vocab.concepts.size(), 0);
    for (const auto& r : filtered) {
        for (const auto& b : r.boxes) {
            auto it = index.find(b.concept_name);
            if (it == index.end()) {
                throw DataError("box concept not in vocabulary: \"" +
                                b.concept_name + "\" (image " + r.image_id + ")");
            }
            present[it->second] = 1;
        }
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < vocab.concepts.size(); ++i) {
        if (present[i]) out.push_back(vocab.concepts[i]);
    }
    return out;
}

ConceptLabel encode_labels(const DetectionRecord& record,
                           std::span<const std::string> concept_set) {
    ConceptLabel label;
    label.bits.assign(concept_set.size(), 0);
    std::unordered_set<std::string_view> seen;
    for (const auto& b : record.boxes) seen.insert(b.concept_name);
    for (std::size_t j = 0; j < concept_set.size(); ++j) {
        if (seen.count(concept_set[j])) label.bits[j] = 1;
    }
    return label;
}

AuxiliaryDataset assemble(const EmbeddingMatrix& embeddings,
                          std::span<const DetectionRecord> records,
                          const ConceptVocabulary& vocab, double threshold) {
    auto filtered = filter_detections(records, threshold);
    AuxiliaryDataset ds;
    ds.concept_set = build_concept_set(filtered, vocab);

    auto row_of = embeddings.make_index();
    ds.embeddings.n = filtered.size();
    ds.embeddings.d = embeddings.d;
    ds.embeddings.values.reserve(filtered.size() * embeddings.d);
    for (const auto& r : filtered) {
        auto it = row_of.find(r.image_id);
        if (it == row_of.end()) {
            throw DataError("image_id has no embedding row: " + r.image_id);
        }
        auto row = embeddings.row(it->second);
        ds.embeddings.ids.push_back(r.image_id);
        ds.embeddings.values.insert(ds.embeddings.values.end(), row.begin(),
                                    row.end());
        ds.concept_labels.push_back(encode_labels(r, ds.concept_set));
        ds.class_labels.push_back(r.class_label);
    }
    return ds;
}

std::vector<AugmentationRecord> emit_augmentations(
    std::span<const DetectionRecord> filtered,
    std::span<const std::string> concept_set, std::uint64_t seed) {
    std::unordered_map<std::string_view, int> concept_index;
    for (std::size_t j = 0; j < concept_set.size(); ++j) {
        concept_index.emplace(concept_set[j], static_cast<int>(j));
    }
    std::mt19937_64 rng(seed);
    std::vector<AugmentationRecord> out;
    for (const auto& r : filtered) {
        if (r.boxes.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, r.boxes.size() - 1);
        std::size_t box = pick(rng);
        auto it = concept_index.find(r.boxes[box].concept_name);
        if (it == concept_index.end()) {
            throw DataError("box concept not in concept set: \"" +
                            r.boxes[box].concept_name + "\"");
        }
        AugmentationRecord rec;
        rec.image_id = r.image_id;
        rec.box_index = static_cast<int>(box);
        rec.concept_index = it->second;
        rec.crop_embedding_id = r.image_id + "#" + r.boxes[box].concept_name;
        out.push_back(std::move(rec));
    }
    return out;
}

PrecisionRecall annotation_precision_recall(
    std::span<const ConceptLabel> predicted, std::span<const ConceptLabel> truth) {
    if (predicted.size() != truth.size()) {
        throw DataError("predicted/truth length mismatch: " +
                        std::to_string(predicted.size()) + " vs " +
                        std::to_string(truth.size()));
    }
    const std::size_t n = predicted.size();
    const std::size_t k = n ? predicted[0].bits.size() : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (predicted[i].bits.size() != k || truth[i].bits.size() != k) {
            throw DataError("concept dimension mismatch at sample " +
                            std::to_string(i));
        }
    }
    PrecisionRecall pr;
    pr.precision.assign(k, std::numeric_limits<double>::quiet_NaN());
    pr.recall.assign(k, std::numeric_limits<double>::quiet_NaN());
    double psum = 0.0, rsum = 0.0;
    std::size_t pdef = 0, rdef = 0;
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            bool p = predicted[i].bits[j], t = truth[i].bits[j];
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        if (tp + fp > 0) {
            pr.precision[j] = static_cast<double>(tp) / (tp + fp);
            psum += pr.precision[j];
            ++pdef;
        } else {
            ++pr.precision_excluded;
        }
        if (tp + fn > 0) {
            pr.recall[j] = static_cast<double>(tp) / (tp + fn);
            rsum += pr.recall[j];
            ++rdef;
        } else {
            ++pr.recall_excluded;
        }
    }
    pr.mean_precision = pdef ? psum / pdef : std::numeric_limits<double>::quiet_NaN();
    pr.mean_recall = rdef ? rsum / rdef : std::numeric_limits<double>::quiet_NaN();
    return pr;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

AuxManifest make_aux_manifest(const AuxiliaryDataset& ds,
                              const std::filesystem::path& manifest_dir,
                              const std::filesystem::path& embeddings_path,
                              const std::filesystem::path& crop_embeddings_path) {
    AuxManifest m;
    m.embeddings_path =
        std::filesystem::relative(embeddings_path, manifest_dir).generic_string();
    m.embeddings_hash = hash_file(embeddings_path);
    if (!crop_embeddings_path.empty()) {
        m.crop_embeddings_path =
            std::filesystem::relative(crop_embeddings_path, manifest_dir)
                .generic_string();
        m.crop_embeddings_hash = hash_file(crop_embeddings_path);
    }
    m.concept_set = ds.concept_set;
    m.samples.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        AuxManifest::Sample s;
        s.image_id = ds.embeddings.ids[i];
        s.class_label = ds.class_labels[i];
        for (std::size_t j = 0; j < ds.concept_labels[i].bits.size(); ++j) {
            if (ds.concept_labels[i].bits[j]) s.positives.push_back(static_cast<int>(j));
        }
        m.samples.push_back(std::move(s));
    }
    m.augmentations = ds.augmentations;
    return m;
}

void write_aux_manifest(const AuxManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for writing: " + path.string());
    }
    {
        json j;
        j["kind"] = "header";
        j["embeddings"] = m.embeddings_path;
        j["embeddings_hash"] = m.embeddings_hash;
        if (!m.crop_embeddings_path.empty()) {
            j["crop_embeddings"] = m.crop_embeddings_path;
            j["crop_embeddings_hash"] = m.crop_embeddings_hash;
        }
        j["num_samples"] = m.samples.size();
        out << j.dump() << '\n';
    }
    for (std::size_t i = 0; i < m.concept_set.size(); ++i) {
        json j;
        j["kind"] = "concept";
        j["index"] = i;
        j["name"] = m.concept_set[i];
        out << j.dump() << '\n';
    }
    for (const auto& s : m.samples) {
        json j;
        j["kind"] = "sample";
        j["image_id"] = s.image_id;
        j["class_label"] = s.class_label;
        j["positives"] = s.positives;
        out << j.dump() << '\n';
    }
    for (const auto& a : m.augmentations) {
        json j;
        j["kind"] = "augmentation";
        j["image_id"] = a.image_id;
        j["box_index"] = a.box_index;
        j["concept_index"] = a.concept_index;
        j["crop_embedding_id"] = a.crop_embedding_id;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw FormatError(FormatError::Code::Io, "write failed: " + path.string());
    }
}

AuxManifest read_aux_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for reading: " + path.string());
    }
    AuxManifest m;
    bool have_header = false;
    std::size_t declared_samples = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw FormatError(FormatError::Code::MalformedRecord,
                              "line " + std::to_string(lineno) + ": invalid JSON",
                              lineno);
        }
        try {
            std::string kind = j.at("kind").get<std::string>();
            if (kind == "header") {
                have_header = true;
                m.embeddings_path = j.at("embeddings").get<std::string>();
                m.embeddings_hash = j.at("embeddings_hash").get<std::string>();
                m.crop_embeddings_path = j.value("crop_embeddings", std::string());
                m.crop_embeddings_hash =
                    j.value("crop_embeddings_hash", std::string());
                declared_samples = j.at("num_samples").get<std::size_t>();
            } else if (kind == "concept") {
                if (j.at("index").get<std::size_t>() != m.concept_set.size()) {
                    throw FormatError(FormatError::Code::MalformedRecord,
                                      "line " + std::to_string(lineno) +
                                          ": concept index out of order",
                                      lineno);
                }
                m.concept_set.push_back(j.at("name").get<std::string>());
            } else if (kind == "sample") {
                AuxManifest::Sample s;
                s.image_id = j.at("image_id").get<std::string>();
                s.class_label = j.at("class_label").get<int>();
                s.positives = j.at("positives").get<std::vector<int>>();
                for (int p : s.positives) {
                    if (p < 0 || static_cast<std::size_t>(p) >= m.concept_set.size()) {
                        throw FormatError(
                            FormatError::Code::InvariantViolation,
                            "line " + std::to_string(lineno) +
                                ": positive index out of range",
                            lineno);
                    }
                }
                m.samples.push_back(std::move(s));
            } else if (kind == "augmentation") {
                AugmentationRecord a;
                a.image_id = j.at("image_id").get<std::string>();
                a.box_index = j.at("box_index").get<int>();
                a.concept_index = j.at("concept_index").get<int>();
                a.crop_embedding_id = j.at("crop_embedding_id").get<std::string>();
                if (a.concept_index < 0 ||
                    static_cast<std::size_t>(a.concept_index) >= m.concept_set.size()) {
                    throw FormatError(FormatError::Code::InvariantViolation,
                                      "line " + std::to_string(lineno) +
                                          ": concept_index out of range",
                                      lineno);
                }
                m.augmentations.push_back(std::move(a));
            } else {
                throw FormatError(FormatError::Code::MalformedRecord,
                                  "line " + std::to_string(lineno) +
                                      ": unknown kind \"" + kind + "\"",
                                  lineno);
            }
        } catch (const json::exception& e) {
            throw FormatError(FormatError::Code::MalformedRecord,
                              "line " + std::to_string(lineno) + ": " + e.what(),
                              lineno);
        }
    }
    if (!have_header) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          "manifest has no header line: " + path.string());
    }
    if (m.samples.size() != declared_samples) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          "manifest declares " + std::to_string(declared_samples) +
                              " samples but has " + std::to_string(m.samples.size()));
    }
    return m;
}

namespace {

EmbeddingMatrix load_hashed_embeddings(const std::filesystem::path& manifest_path,
                                       const std::string& rel,
                                       const std::string& expected_hash) {
    auto path = manifest_path.parent_path() / rel;
    auto actual = hash_file(path);
    if (actual != expected_hash) {
        throw DataError("embedding file " + path.string() +
                        " does not match manifest hash (" + actual + " vs " +
                        expected_hash + ")");
    }
    return read_embeddings(path);
}

}  // namespace

AuxiliaryDataset load_aux_dataset(const std::filesystem::path& manifest_path) {
    AuxManifest m = read_aux_manifest(manifest_path);
    EmbeddingMatrix all = load_hashed_embeddings(manifest_path, m.embeddings_path,
                                                 m.embeddings_hash);
    auto row_of = all.make_index();

    AuxiliaryDataset ds;
    ds.concept_set = m.concept_set;
    ds.embeddings.n = m.samples.size();
    ds.embeddings.d = all.d;
    ds.embeddings.values.reserve(m.samples.size() * all.d);
    for (const auto& s : m.samples) {
        auto it = row_of.find(s.image_id);
        if (it == row_of.end()) {
            throw DataError("manifest sample has no embedding row: " + s.image_id);
        }
        auto row = all.row(it->second);
        ds.embeddings.ids.push_back(s.image_id);
        ds.embeddings.values.insert(ds.embeddings.values.end(), row.begin(),
                                    row.end());
        ConceptLabel label;
        label.bits.assign(m.concept_set.size(), 0);
        for (int p : s.positives) label.bits[p] = 1;
        ds.concept_labels.push_back(std::move(label));
        ds.class_labels.push_back(s.class_label);
    }
    ds.augmentations = m.augmentations;
    return ds;
}

EmbeddingMatrix load_crop_embeddings(const std::filesystem::path& manifest_path) {
    AuxManifest m = read_aux_manifest(manifest_path);
    if (m.crop_embeddings_path.empty()) return {};
    return load_hashed_embeddings(manifest_path, m.crop_embeddings_path,
                                  m.crop_embeddings_hash);
}

}  // namespace vlgcbm
