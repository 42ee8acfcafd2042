#include "vlgcbm/formats.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vlgcbm/hash.hpp"

namespace vlgcbm {

using json = nlohmann::ordered_json;

namespace {

constexpr char kEmbeddingMagic[4] = {'V', 'L', 'G', 'C'};
constexpr char kModelMagic[4] = {'V', 'L', 'G', 'M'};
constexpr unsigned char kFormatVersion = 1;

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for reading: " + path.string());
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for writing: " + path.string());
    }
    return out;
}

void check_magic(std::istream& in, const char (&magic)[4],
                 const std::filesystem::path& path) {
    char got[4] = {};
    in.read(got, 4);
    if (in.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
        throw FormatError(FormatError::Code::BadMagic,
                          "bad magic in " + path.string() + ": expected " +
                              std::string(magic, 4));
    }
    int version = in.get();
    if (version == std::char_traits<char>::eof()) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          "file ends before version byte: " + path.string());
    }
    if (version != kFormatVersion) {
        throw FormatError(FormatError::Code::BadVersion,
                          "unsupported version " + std::to_string(version) +
                              " in " + path.string());
    }
}

std::string read_line_or_throw(std::istream& in, const std::filesystem::path& path,
                               const char* what) {
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          std::string("file ends before ") + what + ": " +
                              path.string());
    }
    return line;
}

void expect_eof(std::istream& in, const std::filesystem::path& path) {
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(FormatError::Code::TrailingBytes,
                          "unexpected bytes after payload: " + path.string());
    }
}

json parse_json_line(const std::string& line, std::size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(FormatError::Code::MalformedRecord,
                          "line " + std::to_string(lineno) + ": invalid JSON",
                          lineno);
    }
    return j;
}

std::string double_repr(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// hashing
// ---------------------------------------------------------------------------

std::string fnv1a64_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "fnv64:%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::uint64_t h = kFnvOffset;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return fnv1a64_hex(h);
}

// ---------------------------------------------------------------------------
// embeddings
// ---------------------------------------------------------------------------

std::unordered_map<std::string, std::size_t> EmbeddingMatrix::make_index() const {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(n);
    for (std::size_t i = 0; i < n; ++i) index.emplace(ids[i], i);
    return index;
}

void validate(const EmbeddingMatrix& m) {
    if (m.ids.size() != m.n) {
        throw FormatError(FormatError::Code::DimMismatch,
                          "embedding ids length " + std::to_string(m.ids.size()) +
                              " != n " + std::to_string(m.n));
    }
    if (m.values.size() != m.n * m.d) {
        throw FormatError(FormatError::Code::DimMismatch,
                          "embedding payload has " + std::to_string(m.values.size()) +
                              " values, expected " + std::to_string(m.n * m.d));
    }
    std::unordered_set<std::string> seen;
    seen.reserve(m.n);
    for (const auto& id : m.ids) {
        if (!seen.insert(id).second) {
            throw FormatError(FormatError::Code::DuplicateId,
                              "duplicate embedding id: " + id);
        }
    }
    for (float x : m.values) {
        if (!std::isfinite(x)) {
            throw FormatError(FormatError::Code::InvariantViolation,
                              "non-finite embedding value");
        }
    }
}

void write_f32_le(std::ostream& out, std::span<const float> values) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * 4));
    } else {
        for (float f : values) {
            auto u = std::bit_cast<std::uint32_t>(f);
            char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8),
                         static_cast<char>(u >> 16), static_cast<char>(u >> 24)};
            out.write(b, 4);
        }
    }
}

std::vector<float> read_f32_le(std::istream& in, std::size_t count,
                               const std::string& what) {
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(in.gcount()) != count * 4) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          "truncated payload while reading " + what + ": got " +
                              std::to_string(in.gcount()) + " of " +
                              std::to_string(count * 4) + " bytes");
    }
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : values) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = ((u & 0xff) << 24) | ((u & 0xff00) << 8) | ((u >> 8) & 0xff00) |
                (u >> 24);
            f = std::bit_cast<float>(u);
        }
    }
    return values;
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    check_magic(in, kEmbeddingMagic, path);

    std::string header = read_line_or_throw(in, path, "embedding header");
    EmbeddingMatrix m;
    {
        unsigned long long n = 0, d = 0;
        char tail[16] = {};
        if (std::sscanf(header.c_str(), "n=%llu d=%llu ids=%15s", &n, &d, tail) != 3 ||
            std::string(tail) != "inline") {
            throw FormatError(FormatError::Code::MalformedHeader,
                              "malformed embedding header: \"" + header + "\"");
        }
        m.n = n;
        m.d = d;
    }
    m.ids.reserve(m.n);
    for (std::size_t i = 0; i < m.n; ++i) {
        m.ids.push_back(read_line_or_throw(in, path, "id list"));
    }
    m.values = read_f32_le(in, m.n * m.d, "embedding rows");
    expect_eof(in, path);
    validate(m);
    return m;
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    validate(m);
    std::ofstream out = open_out(path);
    out.write(kEmbeddingMagic, 4);
    out.put(static_cast<char>(kFormatVersion));
    out << "n=" << m.n << " d=" << m.d << " ids=inline\n";
    for (const auto& id : m.ids) out << id << '\n';
    write_f32_le(out, m.values);
    if (!out) {
        throw FormatError(FormatError::Code::Io,
                          "write failed: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// detections
// ---------------------------------------------------------------------------

void validate(const DetectionRecord& r, std::size_t line) {
    auto fail = [&](const std::string& msg) {
        std::string at = line ? "line " + std::to_string(line) + ": " : "";
        throw FormatError(FormatError::Code::InvariantViolation,
                          at + "record \"" + r.image_id + "\": " + msg, line);
    };
    if (r.image_id.empty()) fail("empty image_id");
    if (r.class_label < 0) fail("negative class_label");
    for (const auto& b : r.boxes) {
        if (!(b.coords[0] < b.coords[2])) fail("x_min must be < x_max");
        if (!(b.coords[1] < b.coords[3])) fail("y_min must be < y_max");
        if (!(b.confidence >= 0.0 && b.confidence <= 1.0)) {
            fail("confidence " + double_repr(b.confidence) + " outside [0,1]");
        }
        if (b.concept_name.empty()) fail("empty concept");
    }
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::vector<DetectionRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_json_line(line, lineno);
        DetectionRecord r;
        try {
            r.image_id = j.at("image_id").get<std::string>();
            r.class_label = j.at("class_label").get<int>();
            for (const auto& jb : j.at("boxes")) {
                BoundingBox b;
                const auto& c = jb.at("box");
                if (c.size() != 4) throw json::out_of_range::create(403, "box size", nullptr);
                for (int i = 0; i < 4; ++i) b.coords[i] = c[i].get<double>();
                b.confidence = jb.at("confidence").get<double>();
                b.concept_name = jb.at("concept").get<std::string>();
                r.boxes.push_back(std::move(b));
            }
        } catch (const json::exception& e) {
            throw FormatError(FormatError::Code::MalformedRecord,
                              "line " + std::to_string(lineno) + ": " + e.what(),
                              lineno);
        }
        validate(r, lineno);
        records.push_back(std::move(r));
    }
    return records;
}

void write_detections(std::span<const DetectionRecord> records,
                      const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    for (const auto& r : records) {
        validate(r);
        json j;
        j["image_id"] = r.image_id;
        j["class_label"] = r.class_label;
        json boxes = json::array();
        for (const auto& b : r.boxes) {
            json jb;
            jb["box"] = {b.coords[0], b.coords[1], b.coords[2], b.coords[3]};
            jb["confidence"] = b.confidence;
            jb["concept"] = b.concept_name;
            boxes.push_back(std::move(jb));
        }
        j["boxes"] = std::move(boxes);
        out << j.dump() << '\n';
    }
    if (!out) {
        throw FormatError(FormatError::Code::Io, "write failed: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

std::unordered_map<std::string, int> ConceptVocabulary::make_index() const {
    std::unordered_map<std::string, int> index;
    index.reserve(concepts.size());
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        index.emplace(concepts[i], static_cast<int>(i));
    }
    return index;
}

void validate(const ConceptVocabulary& v) {
    std::unordered_set<std::string> seen;
    for (const auto& c : v.concepts) {
        if (c.empty()) {
            throw FormatError(FormatError::Code::InvariantViolation,
                              "empty concept name in vocabulary");
        }
        if (!seen.insert(c).second) {
            throw FormatError(FormatError::Code::DuplicateId,
                              "duplicate concept in vocabulary: " + c);
        }
    }
    for (const auto& [cls, cand] : v.class_candidates) {
        if (cls < 0) {
            throw FormatError(FormatError::Code::InvariantViolation,
                              "negative class in vocabulary");
        }
        for (int idx : cand) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= v.concepts.size()) {
                throw FormatError(FormatError::Code::InvariantViolation,
                                  "candidate index " + std::to_string(idx) +
                                      " out of range for class " +
                                      std::to_string(cls));
            }
        }
    }
}

ConceptVocabulary read_vocabulary(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    ConceptVocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_json_line(line, lineno);
        try {
            std::string kind = j.at("kind").get<std::string>();
            if (kind == "concept") {
                auto index = j.at("index").get<std::size_t>();
                if (index != v.concepts.size()) {
                    throw FormatError(FormatError::Code::MalformedRecord,
                                      "line " + std::to_string(lineno) +
                                          ": concept index out of order",
                                      lineno);
                }
                v.concepts.push_back(j.at("name").get<std::string>());
            } else if (kind == "class") {
                int cls = j.at("class").get<int>();
                v.class_candidates[cls] = j.at("candidates").get<std::vector<int>>();
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
    validate(v);
    return v;
}

void write_vocabulary(const ConceptVocabulary& v, const std::filesystem::path& path) {
    validate(v);
    std::ofstream out = open_out(path);
    for (std::size_t i = 0; i < v.concepts.size(); ++i) {
        json j;
        j["kind"] = "concept";
        j["index"] = i;
        j["name"] = v.concepts[i];
        out << j.dump() << '\n';
    }
    for (const auto& [cls, cand] : v.class_candidates) {
        json j;
        j["kind"] = "class";
        j["class"] = cls;
        j["candidates"] = cand;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw FormatError(FormatError::Code::Io, "write failed: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// model bundles
// ---------------------------------------------------------------------------

namespace {

struct Section {
    const char* name;
    bool present;
    std::size_t expected;
    std::vector<float> ModelBundle::* member;
};

std::vector<Section> bundle_sections(const ModelBundle& b) {
    auto k = static_cast<std::size_t>(b.k);
    auto d = static_cast<std::size_t>(b.d);
    auto c = static_cast<std::size_t>(b.c);
    return {
        {"w_c", b.has_cbl, k * d, &ModelBundle::w_c},
        {"b_c", b.has_cbl_bias, k, &ModelBundle::b_c},
        {"norm_mean", b.has_norm, k, &ModelBundle::norm_mean},
        {"norm_std", b.has_norm, k, &ModelBundle::norm_std},
        {"w_f", b.has_final, c * k, &ModelBundle::w_f},
        {"b_f", b.has_final, c, &ModelBundle::b_f},
    };
}

}  // namespace

void validate(const ModelBundle& b) {
    if (b.k < 0 || b.d < 0 || b.c < 0) {
        throw FormatError(FormatError::Code::InvariantViolation,
                          "negative dimension in model bundle");
    }
    if (b.has_cbl_bias && !b.has_cbl) {
        throw FormatError(FormatError::Code::InvariantViolation,
                          "bundle has a bottleneck bias but no bottleneck");
    }
    if (b.has_final && b.c == 0) {
        throw FormatError(FormatError::Code::InvariantViolation,
                          "bundle has a final layer but c == 0");
    }
    for (const auto& s : bundle_sections(b)) {
        std::size_t got = (b.*s.member).size();
        std::size_t want = s.present ? s.expected : 0;
        if (got != want) {
            throw FormatError(FormatError::Code::DimMismatch,
                              std::string("section ") + s.name + " has " +
                                  std::to_string(got) + " values, expected " +
                                  std::to_string(want));
        }
        for (float x : b.*s.member) {
            if (!std::isfinite(x)) {
                throw FormatError(FormatError::Code::InvariantViolation,
                                  std::string("non-finite value in section ") +
                                      s.name);
            }
        }
    }
    if (b.has_norm) {
        for (float s : b.norm_std) {
            if (!(s > 0.0f)) {
                throw FormatError(FormatError::Code::InvariantViolation,
                                  "norm_std must be strictly positive");
            }
        }
    }
}

ModelBundle read_model_bundle(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    check_magic(in, kModelMagic, path);
    std::string header = read_line_or_throw(in, path, "model header");
    json j = json::parse(header, nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          "model header is not valid JSON: " + path.string());
    }
    ModelBundle b;
    try {
        b.k = j.at("k").get<int>();
        b.d = j.at("d").get<int>();
        b.c = j.at("c").get<int>();
        b.has_cbl = j.at("has_cbl").get<bool>();
        b.has_cbl_bias = j.at("has_cbl_bias").get<bool>();
        b.has_norm = j.at("has_norm").get<bool>();
        b.has_final = j.at("has_final").get<bool>();
        if (j.contains("lambda")) b.lambda = j["lambda"].get<double>();
        if (j.contains("nec")) b.nec = j["nec"].get<double>();
        if (j.contains("alpha_mix")) b.alpha_mix = j["alpha_mix"].get<double>();
        b.config_hash = j.value("config_hash", std::string());
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          std::string("model header: ") + e.what());
    }
    if (b.k < 0 || b.d < 0 || b.c < 0) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          "negative dimension in model header");
    }
    for (const auto& s : bundle_sections(b)) {
        if (s.present) {
            b.*s.member = read_f32_le(in, s.expected, s.name);
        }
    }
    expect_eof(in, path);
    validate(b);
    return b;
}

void write_model_bundle(const ModelBundle& b, const std::filesystem::path& path) {
    validate(b);
    std::ofstream out = open_out(path);
    out.write(kModelMagic, 4);
    out.put(static_cast<char>(kFormatVersion));
    json j;
    j["k"] = b.k;
    j["d"] = b.d;
    j["c"] = b.c;
    j["has_cbl"] = b.has_cbl;
    j["has_cbl_bias"] = b.has_cbl_bias;
    j["has_norm"] = b.has_norm;
    j["has_final"] = b.has_final;
    if (b.lambda) j["lambda"] = *b.lambda;
    if (b.nec) j["nec"] = *b.nec;
    if (b.alpha_mix) j["alpha_mix"] = *b.alpha_mix;
    if (!b.config_hash.empty()) j["config_hash"] = b.config_hash;
    out << j.dump() << '\n';
    for (const auto& s : bundle_sections(b)) {
        if (s.present) write_f32_le(out, b.*s.member);
    }
    if (!out) {
        throw FormatError(FormatError::Code::Io, "write failed: " + path.string());
    }
}

}  // namespace vlgcbm
