#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

// ---------------------------------------------------------------------------
// Embedding matrices
// ---------------------------------------------------------------------------

/// Dense matrix of backbone embeddings keyed by string ids. Values are kept
/// as the float32 payload that lives on disk; computation converts to double
/// at the point of use.
struct EmbeddingMatrix {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<std::string> ids;  // length n, unique
    std::vector<float> values;     // n*d row-major

    std::span<const float> row(std::size_t i) const {
        return {values.data() + i * d, d};
    }
    std::vector<double> row_as_double(std::size_t i) const {
        auto r = row(i);
        return std::vector<double>(r.begin(), r.end());
    }

    /// id -> row index. Built on demand; ids are unique by invariant.
    std::unordered_map<std::string, std::size_t> make_index() const;

    bool operator==(const EmbeddingMatrix& o) const = default;
};

/// Validates invariants (unique ids, matching lengths, finite values).
/// Throws FormatError on violation.
void validate(const EmbeddingMatrix& m);

/// Binary layout: magic "VLGC", one version byte (1), one ASCII header line
/// "n=<n> d=<d> ids=inline\n", then n id lines, then n*d little-endian
/// float32 values in row-major order. Nothing may follow the payload.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Grounded detections
// ---------------------------------------------------------------------------

struct BoundingBox {
    std::array<double, 4> coords{};  // x_min, y_min, x_max, y_max in pixels
    double confidence = 0.0;         // in [0,1]
    std::string concept_name;        // "concept" is a C++20 keyword

    bool operator==(const BoundingBox& o) const = default;
};

struct DetectionRecord {
    std::string image_id;
    int class_label = 0;
    std::vector<BoundingBox> boxes;

    bool operator==(const DetectionRecord& o) const = default;
};

void validate(const DetectionRecord& r, std::size_t line = 0);

/// Newline-delimited JSON, one image per line:
///   {"image_id":..., "class_label":..., "boxes":[{"box":[x0,y0,x1,y1],
///    "confidence":..., "concept":...}, ...]}
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
void write_detections(std::span<const DetectionRecord> records,
                      const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Concept vocabulary
// ---------------------------------------------------------------------------

struct ConceptVocabulary {
    std::vector<std::string> concepts;               // ordered, unique
    std::map<int, std::vector<int>> class_candidates;  // class -> concept indices

    /// Concept name -> index in `concepts`.
    std::unordered_map<std::string, int> make_index() const;

    bool operator==(const ConceptVocabulary& o) const = default;
};

void validate(const ConceptVocabulary& v);

/// Newline-delimited JSON. Concept lines first, in order, then class lines:
///   {"kind":"concept","index":i,"name":...}
///   {"kind":"class","class":c,"candidates":[...]}
ConceptVocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const ConceptVocabulary& v, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Model bundles
// ---------------------------------------------------------------------------

/// On-disk container for trained weights. Sections are float32 payloads; the
/// header is a single JSON line declaring dims and which sections follow, so
/// declared shapes can be checked against byte lengths exactly.
struct ModelBundle {
    int k = 0;  // number of concepts
    int d = 0;  // embedding dimension
    int c = 0;  // number of classes (0 when no final layer)

    bool has_cbl = false;       // w_c (k*d), optionally b_c (k)
    bool has_cbl_bias = false;
    bool has_norm = false;      // norm_mean (k), norm_std (k)
    bool has_final = false;     // w_f (c*k), b_f (c)

    std::optional<double> lambda;     // regularization strength of w_f
    std::optional<double> nec;        // NEC of w_f at save time
    std::optional<double> alpha_mix;  // elastic-net mixing of w_f
    std::string config_hash;

    std::vector<float> w_c;
    std::vector<float> b_c;
    std::vector<float> norm_mean;
    std::vector<float> norm_std;
    std::vector<float> w_f;
    std::vector<float> b_f;

    bool operator==(const ModelBundle& o) const = default;
};

void validate(const ModelBundle& b);

/// Binary layout: magic "VLGM", one version byte (1), one JSON header line,
/// then the declared sections as little-endian float32, in fixed order
/// w_c, b_c, norm_mean, norm_std, w_f, b_f. Nothing may follow the payload.
ModelBundle read_model_bundle(const std::filesystem::path& path);
void write_model_bundle(const ModelBundle& b, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Little-endian float helpers shared by binary formats
// ---------------------------------------------------------------------------

void write_f32_le(std::ostream& out, std::span<const float> values);
std::vector<float> read_f32_le(std::istream& in, std::size_t count,
                               const std::string& what);

}  // namespace vlgcbm
