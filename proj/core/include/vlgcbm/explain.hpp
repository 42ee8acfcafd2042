#pragma once

#include <span>
#include <string>
#include <vector>

#include "vlgcbm/cbl.hpp"
#include "vlgcbm/sparse_final.hpp"

namespace vlgcbm {

/// Decision explanation for one sample: the top contributions to the
/// predicted class logit, the lumped remainder, and the bias term. Entries
/// whose concept logit is negative are evidence-by-absence and carry a
/// "NOT " label prefix.
struct Explanation {
    struct Entry {
        int concept_index = 0;
        std::string label;  // concept name, or "NOT {name}"
        double contribution = 0.0;
        bool negative = false;  // concept logit < 0

        bool operator==(const Entry& o) const = default;
    };

    std::string sample_id;
    int predicted_class = 0;
    std::vector<Entry> entries;  // sorted by descending contribution
    double remainder = 0.0;      // sum of contributions outside entries
    double bias = 0.0;
    double class_logit = 0.0;  // == sum(entries) + remainder + bias
};

/// Per-concept contribution to class_j's logit: the elementwise product of
/// the concept logits (normalized unless raw_logits) with row j of the
/// final weights.
std::vector<double> contributions(const ConceptBottleneck& cb,
                                  const SparseFinalLayer& layer,
                                  std::span<const double> z, int class_j,
                                  bool raw_logits = false);

/// Explanation of the argmax class: the top_n contributions by value among
/// concepts the class row actually uses (nonzero weight; ties by concept
/// index), the lumped remainder, and the bias. Entries plus remainder plus
/// bias reconstruct the class logit. concept_names may be empty, in which
/// case entries are labeled "#<index>".
Explanation top_contributions(const ConceptBottleneck& cb,
                              const SparseFinalLayer& layer,
                              std::span<const double> z,
                              const std::string& sample_id,
                              std::span<const std::string> concept_names,
                              int top_n = 5, bool raw_logits = false);

/// Fraction of explanation entries that reason through a negative concept
/// logit, over all entries of all explanations.
double negative_reasoning_rate(std::span<const Explanation> explanations);

/// Plain-text rendering, one line per entry plus remainder and bias.
std::string render(const Explanation& e);

}  // namespace vlgcbm
