#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vlgcbm/dataset.hpp"
#include "vlgcbm/mat.hpp"

namespace vlgcbm {

/// Linear concept head g(z) = W z (+ bias), with per-concept normalization
/// statistics fitted on the training logits.
struct ConceptBottleneck {
    Mat weights;               // k x d
    std::vector<double> bias;  // k, empty when the head is bias-free
    std::vector<double> norm_mean;  // k, zero until fit_normalization
    std::vector<double> norm_std;   // k, strictly positive once fitted

    std::size_t k() const { return weights.rows; }
    std::size_t d() const { return weights.cols; }
    bool has_bias() const { return !bias.empty(); }
    bool has_norm() const { return !norm_std.empty(); }
};

struct CblTrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int epochs = 40;
    int batch_size = 128;
    // Multiplier on the positive BCE terms. 0 means derive from the label
    // balance: median over concepts of (#neg / #pos), clamped to [1, 100].
    double pos_loss_scale = 0.0;
    double augmentation_prob = 0.2;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// The data-derived default for pos_loss_scale (see CblTrainConfig).
double default_pos_scale(std::span<const ConceptLabel> labels);

/// Mean over batch and concepts of the scaled binary cross entropy
///   pos_scale * o * -log sigmoid(l) + (1 - o) * -log(1 - sigmoid(l)),
/// evaluated in softplus form so large logits cannot overflow.
double bce_multilabel_loss(const Mat& logits, std::span<const ConceptLabel> targets,
                           double pos_scale);

/// d(loss)/d(logits), same shape as logits. Shares the loss's scaling.
Mat bce_multilabel_grad(const Mat& logits, std::span<const ConceptLabel> targets,
                        double pos_scale);

struct EpochStat {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double mean_val_auc = 0.0;  // NaN when no validation split
};

struct CblTrainResult {
    ConceptBottleneck model;  // normalization already fitted
    std::vector<EpochStat> log;
};

/// Minimizes the scaled BCE over the dataset with Adam (decoupled from
/// nothing: weight decay is added to the gradient, matching the usual Adam +
/// L2 formulation). Each epoch reshuffles; with probability
/// augmentation_prob a sample that has an augmentation record is replaced by
/// its crop embedding and a one-hot target at the crop's concept.
/// Deterministic for a fixed config and dataset.
CblTrainResult train_cbl(const AuxiliaryDataset& dataset,
                         const EmbeddingMatrix& crop_embeddings,
                         const CblTrainConfig& cfg);

/// Recomputes norm_mean / norm_std as the per-concept mean and population
/// standard deviation of the raw logits over the dataset embeddings, with
/// the std floored at 1e-6.
ConceptBottleneck fit_normalization(const ConceptBottleneck& cb,
                                    const AuxiliaryDataset& dataset);

/// Raw logits W z (+ bias); normalized applies (raw - mean) / std.
std::vector<double> predict_concepts(const ConceptBottleneck& cb,
                                     std::span<const double> z, bool normalized);

/// Normalized concept logits for every embedding row, n x k. Requires
/// fitted normalization stats.
Mat concept_logit_matrix(const ConceptBottleneck& cb, const EmbeddingMatrix& m);

/// Rank-based (Mann-Whitney) AUC of scores against binary labels, midranks
/// for ties. NaN when either class is empty.
double binary_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace vlgcbm
