#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vlgcbm/formats.hpp"

namespace vlgcbm {

/// One-hot concept labels for a single image, over the final concept set.
struct ConceptLabel {
    std::vector<std::uint8_t> bits;  // entries in {0,1}

    bool operator==(const ConceptLabel& o) const = default;
};

/// One crop-to-concept augmentation choice: which box of which image was
/// selected, which concept it targets, and the external crop embedding to
/// substitute. Crop embeddings are produced outside this toolkit and keyed
/// "<image_id>#<concept>" so the id survives re-filtering.
struct AugmentationRecord {
    std::string image_id;
    int box_index = 0;      // index into the filtered record's boxes
    int concept_index = 0;  // index into the final concept set
    std::string crop_embedding_id;

    bool operator==(const AugmentationRecord& o) const = default;
};

/// The concept-labeled auxiliary dataset: embeddings aligned with concept
/// labels and class labels, plus the augmentation records for training.
struct AuxiliaryDataset {
    EmbeddingMatrix embeddings;  // row i belongs to sample i
    std::vector<ConceptLabel> concept_labels;
    std::vector<int> class_labels;
    std::vector<std::string> concept_set;  // vocabulary order restricted to survivors
    std::vector<AugmentationRecord> augmentations;

    std::size_t size() const { return class_labels.size(); }
    std::size_t num_concepts() const { return concept_set.size(); }
};

/// Drops every box with confidence <= threshold (survivors are strictly
/// above it). Records are kept even when all their boxes are removed.
std::vector<DetectionRecord> filter_detections(
    std::span<const DetectionRecord> records, double threshold);

/// Vocabulary concepts that occur in at least one surviving box, in
/// vocabulary order. A box concept missing from the vocabulary is an error.
std::vector<std::string> build_concept_set(
    std::span<const DetectionRecord> filtered, const ConceptVocabulary& vocab);

/// Bit j set iff concept_set[j] appears among the record's boxes.
ConceptLabel encode_labels(const DetectionRecord& record,
                           std::span<const std::string> concept_set);

/// filter -> concept set -> labels, with embeddings gathered per record in
/// record order. Does not fill `augmentations`; see emit_augmentations.
AuxiliaryDataset assemble(const EmbeddingMatrix& embeddings,
                          std::span<const DetectionRecord> records,
                          const ConceptVocabulary& vocab, double threshold);

/// For each image with at least one (filtered) box, selects one box
/// uniformly at random and emits its augmentation record. Deterministic
/// under `seed`.
std::vector<AugmentationRecord> emit_augmentations(
    std::span<const DetectionRecord> filtered,
    std::span<const std::string> concept_set, std::uint64_t seed);

struct PrecisionRecall {
    // Per concept; NaN where undefined (no predicted / no true positives).
    std::vector<double> precision;
    std::vector<double> recall;
    // Macro means over the concepts where the metric is defined.
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    std::size_t precision_excluded = 0;  // concepts never predicted
    std::size_t recall_excluded = 0;     // concepts with no true positives
};

/// Standard per-concept precision/recall of predicted labels against truth,
/// macro-averaged with undefined concepts excluded from the means.
PrecisionRecall annotation_precision_recall(
    std::span<const ConceptLabel> predicted, std::span<const ConceptLabel> truth);

// ---------------------------------------------------------------------------
// Auxiliary-dataset manifest (newline-delimited JSON)
// ---------------------------------------------------------------------------

/// Serializable view of an AuxiliaryDataset: embeddings are referenced by
/// relative path + content hash rather than inlined. Sample bits are stored
/// sparsely as the list of positive concept indices.
struct AuxManifest {
    std::string embeddings_path;  // relative to the manifest file
    std::string embeddings_hash;
    std::string crop_embeddings_path;  // empty when absent
    std::string crop_embeddings_hash;
    std::vector<std::string> concept_set;

    struct Sample {
        std::string image_id;
        int class_label = 0;
        std::vector<int> positives;

        bool operator==(const Sample& o) const = default;
    };
    std::vector<Sample> samples;
    std::vector<AugmentationRecord> augmentations;

    bool operator==(const AuxManifest& o) const = default;
};

AuxManifest read_aux_manifest(const std::filesystem::path& path);
void write_aux_manifest(const AuxManifest& m, const std::filesystem::path& path);

/// Builds the manifest for a dataset whose embeddings live at
/// `embeddings_path` (hashed here; path stored relative to `manifest_dir`).
AuxManifest make_aux_manifest(const AuxiliaryDataset& ds,
                              const std::filesystem::path& manifest_dir,
                              const std::filesystem::path& embeddings_path,
                              const std::filesystem::path& crop_embeddings_path = {});

/// Loads the manifest, re-reads the referenced embedding file (verifying its
/// content hash), and reassembles the dataset in sample order.
AuxiliaryDataset load_aux_dataset(const std::filesystem::path& manifest_path);

/// Crop-embedding file referenced by a manifest, or an empty matrix when the
/// manifest declares none.
EmbeddingMatrix load_crop_embeddings(const std::filesystem::path& manifest_path);

}  // namespace vlgcbm
