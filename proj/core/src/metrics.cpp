#include "vlgcbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

int predict_class(const SparseFinalLayer& layer, std::span<const double> x) {
    if (x.size() != layer.weights.cols) {
        throw DataError("concept vector has " + std::to_string(x.size()) +
                        " entries, layer expects " +
                        std::to_string(layer.weights.cols));
    }
    int best = 0;
    double best_u = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < layer.weights.rows; ++c) {
        double u = layer.bias[c] + dot(layer.weights.row(c), x);
        if (u > best_u) {
            best_u = u;
            best = static_cast<int>(c);
        }
    }
    return best;
}

double accuracy_on_logits(const SparseFinalLayer& layer, const Mat& x,
                          std::span<const int> labels) {
    if (x.rows != labels.size()) {
        throw DataError("logit rows != label count");
    }
    if (x.rows == 0) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        correct += predict_class(layer, x.row(i)) == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows);
}

double accuracy(const SparseFinalLayer& layer, const ConceptBottleneck& cb,
                const EmbeddingMatrix& embeddings, std::span<const int> labels) {
    if (embeddings.n != labels.size()) {
        throw DataError("embedding rows != label count");
    }
    Mat logits = concept_logit_matrix(cb, embeddings);
    return accuracy_on_logits(layer, logits, labels);
}

AnecReport anec(const RegularizationPath& path, const ConceptBottleneck& cb,
                const EmbeddingMatrix& test_embeddings,
                std::span<const int> test_labels, std::span<const int> levels) {
    AnecReport report;
    report.levels.assign(levels.begin(), levels.end());
    Mat logits = concept_logit_matrix(cb, test_embeddings);
    double sum = 0.0;
    for (int level : levels) {
        SparseFinalLayer layer = select_for_nec(path, level);
        double acc = accuracy_on_logits(layer, logits, test_labels);
        report.per_nec[level] = acc;
        sum += acc;
    }
    report.anec5 = report.per_nec.count(5) ? report.per_nec[5]
                                           : std::numeric_limits<double>::quiet_NaN();
    report.anec_avg =
        levels.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : sum / static_cast<double>(levels.size());
    return report;
}

SparseFinalLayer prune_top_n_per_row(const SparseFinalLayer& layer,
                                     std::size_t top_n) {
    SparseFinalLayer out = layer;
    const std::size_t k = layer.weights.cols;
    std::vector<std::size_t> idx(k);
    for (std::size_t c = 0; c < layer.weights.rows; ++c) {
        auto row = layer.weights.row(c);
        std::iota(idx.begin(), idx.end(), 0);
        // Descending |w|, lower column first on ties.
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(row[a]) > std::abs(row[b]);
        });
        auto out_row = out.weights.row(c);
        for (std::size_t r = top_n; r < k; ++r) out_row[idx[r]] = 0.0;
        // Zeros beyond top_n were already zero; nothing else changes.
    }
    out.nec = nec(out.weights);
    return out;
}

double prediction_change_after_top5(const SparseFinalLayer& layer,
                                    const SparseFinalLayer& reference,
                                    const ConceptBottleneck& cb,
                                    const EmbeddingMatrix& test_embeddings) {
    if (test_embeddings.n == 0) return 0.0;
    SparseFinalLayer pruned = prune_top_n_per_row(layer, 5);
    Mat logits = concept_logit_matrix(cb, test_embeddings);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        changed += predict_class(pruned, logits.row(i)) !=
                   predict_class(reference, logits.row(i));
    }
    return static_cast<double>(changed) / static_cast<double>(test_embeddings.n);
}

NonzeroDistribution nonzero_distribution(const SparseFinalLayer& layer) {
    NonzeroDistribution dist;
    dist.per_class.reserve(layer.weights.rows);
    std::size_t total = 0;
    for (std::size_t c = 0; c < layer.weights.rows; ++c) {
        std::size_t count = 0;
        for (double v : layer.weights.row(c)) count += v != 0.0;
        dist.per_class.push_back(count);
        ++dist.histogram[count];
        total += count;
    }
    dist.mean = layer.weights.rows
                    ? static_cast<double>(total) /
                          static_cast<double>(layer.weights.rows)
                    : 0.0;
    return dist;
}

}  // namespace vlgcbm
