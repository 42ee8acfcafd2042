#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "vlgcbm/cbl.hpp"
#include "vlgcbm/formats.hpp"
#include "vlgcbm/sparse_final.hpp"

namespace vlgcbm {

/// Accuracy at a fixed set of NEC levels plus the two headline aggregates.
struct AnecReport {
    std::vector<int> levels;
    std::map<int, double> per_nec;
    double anec5 = 0.0;   // per_nec[5]
    double anec_avg = 0.0;  // mean over levels
};

/// argmax class of x under the layer, lowest index on ties.
int predict_class(const SparseFinalLayer& layer, std::span<const double> x);

/// Fraction of argmax-correct predictions on precomputed concept logits.
double accuracy_on_logits(const SparseFinalLayer& layer, const Mat& x,
                          std::span<const int> labels);

/// Same, from raw embeddings through the normalized bottleneck.
double accuracy(const SparseFinalLayer& layer, const ConceptBottleneck& cb,
                const EmbeddingMatrix& embeddings, std::span<const int> labels);

inline constexpr int kDefaultAnecLevelsArr[] = {5, 10, 15, 20, 25, 30};
inline constexpr std::span<const int> kDefaultAnecLevels{kDefaultAnecLevelsArr};

/// For each level: select_for_nec on the path, then test accuracy. The path
/// must have been solved on train/val data only; this function is the only
/// place test labels are consumed.
AnecReport anec(const RegularizationPath& path, const ConceptBottleneck& cb,
                const EmbeddingMatrix& test_embeddings,
                std::span<const int> test_labels,
                std::span<const int> levels = kDefaultAnecLevels);

/// Keeps only the top_n largest-|w| entries of each row (ties kept by lower
/// column index). Rows with <= top_n nonzeros are untouched.
SparseFinalLayer prune_top_n_per_row(const SparseFinalLayer& layer, std::size_t top_n);

/// Applies per-row top-5 pruning to `layer` and returns the fraction of test
/// samples whose argmax under the pruned layer differs from `reference`'s
/// argmax. Pass the same layer twice to audit one model against itself.
double prediction_change_after_top5(const SparseFinalLayer& layer,
                                    const SparseFinalLayer& reference,
                                    const ConceptBottleneck& cb,
                                    const EmbeddingMatrix& test_embeddings);

struct NonzeroDistribution {
    std::vector<std::size_t> per_class;        // nonzero count per row
    std::map<std::size_t, std::size_t> histogram;  // count -> #classes
    double mean = 0.0;                         // == nec(layer)
};

NonzeroDistribution nonzero_distribution(const SparseFinalLayer& layer);

}  // namespace vlgcbm
