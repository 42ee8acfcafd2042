#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vlgcbm/dataset.hpp"
#include "vlgcbm/formats.hpp"
#include "vlgcbm/mat.hpp"
#include "vlgcbm/sparse_final.hpp"

namespace vlgcbm {

/// Ground-truth generator for planted fixtures: embeddings z ~ N(0, sigma),
/// concept bits 1[directions.z > thresholds] (flipped at noise_rate), class
/// labels from a sparse linear readout of the clean bits.
struct PlantedModel {
    int d = 64;
    int k = 24;
    int c = 6;
    int s = 5;  // nonzeros per row of true_final
    Mat sigma;               // d x d SPD
    Mat concept_directions;  // k x d, unit rows
    std::vector<double> concept_thresholds;  // k
    Mat true_final;          // c x k, exactly s nonzeros per row
    double noise_rate = 0.05;
    std::vector<std::string> concept_names;  // k
};

PlantedModel make_planted(int d, int k, int c, int s, double noise_rate,
                          std::uint64_t seed);

/// One generated corpus. Detections carry a box per positive (noisy) bit at
/// confidence U(0.5, 1) plus injected false boxes at U(0, 0.3), so the
/// confidence filter has work to do. clean_bits are the unflipped planted
/// labels, kept for scoring learned concepts against the truth.
struct PlantedData {
    EmbeddingMatrix embeddings;
    std::vector<ConceptLabel> clean_bits;
    std::vector<ConceptLabel> noisy_bits;
    std::vector<int> class_labels;
    std::vector<DetectionRecord> detections;
};

PlantedData generate(const PlantedModel& planted, int n, std::uint64_t seed);

/// Vocabulary over the planted concept names; every class lists every
/// concept as a candidate.
ConceptVocabulary planted_vocabulary(const PlantedModel& planted);

/// Embedding of the crop for (image, concept): the image embedding pulled
/// toward the concept direction. Ids are "<image_id>#<concept>". One row
/// per (image, distinct box concept) pair of `detections`.
EmbeddingMatrix synth_crop_embeddings(const PlantedModel& planted,
                                      const PlantedData& data);

/// Independent elastic-net solver for cross-checking: cyclic exact 1-D
/// coordinate minimization (derivative bisection; zero when the subgradient
/// interval covers 0) until the objective improves by less than 1e-10.
/// Intended for small instances only.
SparseFinalLayer coordinate_descent_oracle(const Mat& x, std::span<const int> labels,
                                           std::size_t c, double lambda,
                                           double alpha_mix, int max_sweeps = 2000);

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

/// Monte-Carlo estimate of E_z[(f(z) - f~(W_c z))^2] with z ~ N(mu, sigma),
/// for cross-checking the closed-form error. samples >= 1e4.
McEstimate mc_error_oracle(const Mat& w_c, const Mat& sigma,
                           std::span<const double> mu, std::span<const double> w,
                           double b, std::span<const double> w_tilde,
                           double b_tilde, int samples, std::uint64_t seed);

/// z ~ N(mu, sigma) via Cholesky; the workhorse behind generate and the MC
/// oracle, exposed for tests.
Mat sample_gaussian(const Mat& sigma, std::span<const double> mu, int n,
                    std::uint64_t seed);

}  // namespace vlgcbm
