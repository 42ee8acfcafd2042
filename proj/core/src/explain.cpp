#include "vlgcbm/explain.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "vlgcbm/errors.hpp"
#include "vlgcbm/metrics.hpp"

namespace vlgcbm {

std::vector<double> contributions(const ConceptBottleneck& cb,
                                  const SparseFinalLayer& layer,
                                  std::span<const double> z, int class_j,
                                  bool raw_logits) {
    if (class_j < 0 ||
        static_cast<std::size_t>(class_j) >= layer.weights.rows) {
        throw DataError("class " + std::to_string(class_j) + " out of range");
    }
    std::vector<double> logits = predict_concepts(cb, z, !raw_logits);
    if (logits.size() != layer.weights.cols) {
        throw DataError("bottleneck width != final-layer width");
    }
    auto row = layer.weights.row(static_cast<std::size_t>(class_j));
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] *= row[i];
    return logits;
}

Explanation top_contributions(const ConceptBottleneck& cb,
                              const SparseFinalLayer& layer,
                              std::span<const double> z,
                              const std::string& sample_id,
                              std::span<const std::string> concept_names,
                              int top_n, bool raw_logits) {
    if (top_n < 1) throw ConfigError("top_n", "must be >= 1");
    std::vector<double> logits = predict_concepts(cb, z, !raw_logits);
    if (logits.size() != layer.weights.cols) {
        throw DataError("bottleneck width != final-layer width");
    }

    Explanation e;
    e.sample_id = sample_id;
    e.predicted_class = predict_class(layer, logits);
    auto row = layer.weights.row(static_cast<std::size_t>(e.predicted_class));
    e.bias = layer.bias[static_cast<std::size_t>(e.predicted_class)];
    e.class_logit = e.bias + dot(row, logits);

    std::vector<std::size_t> used;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] != 0.0) used.push_back(i);
    }
    std::vector<double> contrib(row.size(), 0.0);
    for (std::size_t i : used) contrib[i] = logits[i] * row[i];

    // Descending contribution; stable keeps lower concept index first on ties.
    std::stable_sort(used.begin(), used.end(), [&](std::size_t a, std::size_t b) {
        return contrib[a] > contrib[b];
    });
    const std::size_t take = std::min<std::size_t>(used.size(),
                                                   static_cast<std::size_t>(top_n));
    for (std::size_t r = 0; r < take; ++r) {
        std::size_t i = used[r];
        Explanation::Entry entry;
        entry.concept_index = static_cast<int>(i);
        entry.negative = logits[i] < 0.0;
        std::string name = i < concept_names.size()
                               ? concept_names[i]
                               : "#" + std::to_string(i);
        entry.label = entry.negative ? "NOT " + name : name;
        entry.contribution = contrib[i];
        e.entries.push_back(std::move(entry));
    }
    e.remainder = 0.0;
    for (std::size_t r = take; r < used.size(); ++r) e.remainder += contrib[used[r]];
    return e;
}

double negative_reasoning_rate(std::span<const Explanation> explanations) {
    std::size_t total = 0, negative = 0;
    for (const auto& e : explanations) {
        total += e.entries.size();
        for (const auto& entry : e.entries) negative += entry.negative;
    }
    return total ? static_cast<double>(negative) / static_cast<double>(total) : 0.0;
}

std::string render(const Explanation& e) {
    std::string out = "sample " + e.sample_id + "\npredicted class " +
                      std::to_string(e.predicted_class) + "\n";
    char buf[64];
    for (const auto& entry : e.entries) {
        std::snprintf(buf, sizeof buf, "%+.6f", entry.contribution);
        out += "  " + std::string(buf) + "  " + entry.label + "\n";
    }
    std::snprintf(buf, sizeof buf, "%+.6f", e.remainder);
    out += "  " + std::string(buf) + "  Sum of other features\n";
    std::snprintf(buf, sizeof buf, "%+.6f", e.bias);
    out += "  " + std::string(buf) + "  bias\n";
    std::snprintf(buf, sizeof buf, "%.6f", e.class_logit);
    out += "  class logit " + std::string(buf) + "\n";
    return out;
}

}  // namespace vlgcbm
