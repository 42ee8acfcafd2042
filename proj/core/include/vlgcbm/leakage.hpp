#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "vlgcbm/cbl.hpp"
#include "vlgcbm/formats.hpp"
#include "vlgcbm/mat.hpp"
#include "vlgcbm/sparse_final.hpp"

namespace vlgcbm {

/// Configuration of one random-bottleneck approximation experiment: the
/// representation z ~ N(mu, sigma), the linear target f(z) = w.z + b, and
/// the grid of bottleneck widths to sample.
struct LeakageSetup {
    int d = 64;
    Mat sigma;               // d x d, symmetric positive definite
    std::vector<double> mu;  // empty means zero mean
    std::vector<double> w;
    double b = 0.0;
    std::vector<int> k_grid;
    int trials = 1000;
    std::uint64_t seed = 0;
};

struct LeakageResult {
    struct PerK {
        double mean_error = 0.0;
        double std_error = 0.0;  // std of the per-trial errors
        double bound = 0.0;
    };
    std::map<int, PerK> per_k;
    // Largest observed error among grid points with k >= d (exact recovery).
    double exact_recovery_max_error = 0.0;
};

struct Approximator {
    std::vector<double> w_tilde;  // k entries
    double b_tilde = 0.0;
    double error = 0.0;  // E_z[(f(z) - f~(g(z)))^2], computed through sigma
};

/// Largest eigenvalue of a symmetric matrix.
double largest_eigenvalue(const Mat& sigma);

/// Random SPD matrix A^T A + 0.1 I with standard-Gaussian A.
Mat random_spd(int d, std::uint64_t seed);

/// Best linear readout of f(z) = w.z + b from the bottleneck output W_c z.
/// With sigma = L L^T the minimum-norm w~ solves the whitened least squares
/// min ||(W_c L)^T w~ - L^T w|| via SVD (rank cutoff 1e-12 * largest
/// singular value); b~ = (w - W_c^T w~).mu + b. The expected square error
/// r^T sigma r with r = w - W_c^T w~ is exact, not sampled.
Approximator optimal_approximator(const Mat& w_c, const Mat& sigma,
                                  std::span<const double> mu,
                                  std::span<const double> w, double b);

/// lambda_max * (1 - k/d) * ||w||^2 for k < d, else 0.
double theorem_bound(int k, int d, double lambda_max, std::span<const double> w);

/// Sum of theorem_bound over the rows of w (the per-row form; the uniform
/// variant below scales the worst row by the number of rows).
double multiclass_bound(int k, int d, double lambda_max, const Mat& w_rows);
double multiclass_bound_uniform(int k, int d, double lambda_max, const Mat& w_rows);

/// For each k in the grid, draws `trials` standard-Gaussian bottlenecks
/// W_c (k x d), computes the optimal-approximator error, and records the
/// mean/std alongside the bound. Deterministic under seed.
LeakageResult run_leakage_experiment(const LeakageSetup& setup);

/// Gaussian bias-free bottleneck of width k with normalization fitted on the
/// training set, plus the regularization path of its final layer. Feeds the
/// same evaluation as a trained bottleneck for side-by-side comparison.
struct RandomBaseline {
    ConceptBottleneck cb;
    RegularizationPath path;
};

RandomBaseline random_cbl_baseline(const EmbeddingMatrix& train_embeddings,
                                   std::span<const int> train_labels,
                                   const EmbeddingMatrix& val_embeddings,
                                   std::span<const int> val_labels,
                                   std::size_t num_classes, int k,
                                   double alpha_mix, std::uint64_t seed,
                                   const SolveOptions& opts = {});

}  // namespace vlgcbm
