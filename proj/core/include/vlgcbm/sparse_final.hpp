#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "vlgcbm/mat.hpp"

namespace vlgcbm {

/// Final classification layer over normalized concept logits, trained with
/// cross entropy plus an elastic-net penalty on the weights (never the bias).
struct SparseFinalLayer {
    Mat weights;               // C x k, exact zeros where pruned/thresholded
    std::vector<double> bias;  // C
    double lambda = 0.0;
    double alpha_mix = 1.0;  // l1 share of the penalty, in (0,1]
    double nec = 0.0;        // mean per-class nonzero count at creation time

    std::size_t num_classes() const { return weights.rows; }
    std::size_t num_concepts() const { return weights.cols; }
};

struct RegularizationPath {
    struct Entry {
        double lambda = 0.0;
        SparseFinalLayer layer;
        double nec = 0.0;
        double val_accuracy = 0.0;
    };
    std::vector<Entry> entries;  // lambdas strictly decreasing from lambda_max
    double lambda_max = 0.0;
    double lambda_min = 0.0;
    int num_points = 0;
    double decay = 0.0;  // ratio between consecutive lambdas
};

/// Mean multinomial cross entropy of logits = W x + b against labels,
/// computed with a stable log-softmax.
double cross_entropy(const Mat& w, std::span<const double> b, const Mat& x,
                     std::span<const int> labels);

/// Gradients of cross_entropy; grad_w is C x k, grad_b has C entries.
void cross_entropy_grad(const Mat& w, std::span<const double> b, const Mat& x,
                        std::span<const int> labels, Mat& grad_w,
                        std::vector<double>& grad_b);

/// cross_entropy + lambda * ((1-alpha)/2 * ||W||_F^2 + alpha * ||W||_1).
double objective(const SparseFinalLayer& layer, const Mat& x,
                 std::span<const int> labels, double lambda, double alpha_mix);

/// Bias vector whose softmax reproduces the empirical class frequencies:
/// log(count_c / n), with empty classes floored at log(1/(n*C)).
std::vector<double> class_prior_bias(std::span<const int> labels, std::size_t c);

/// Smallest lambda at which the penalized solution is exactly W = 0:
/// max |dCE/dW| at (W=0, b=class_prior_bias), divided by alpha_mix.
double compute_lambda_max(const Mat& x, std::span<const int> labels,
                          std::size_t c, double alpha_mix);

/// Max KKT violation of (W,b) for the elastic-net objective. Zero entries
/// contribute max(0, |dCE| - lambda*alpha); nonzero entries contribute
/// |dCE + lambda*(1-alpha)*w + lambda*alpha*sign(w)|; bias |dCE/db|.
double kkt_residual(const SparseFinalLayer& layer, const Mat& x,
                    std::span<const int> labels, double lambda, double alpha_mix);

struct SolveOptions {
    double tol = 1e-7;    // KKT residual target
    int max_iter = 50000;  // proximal gradient iterations
};

/// Accelerated proximal gradient with backtracking. The soft-threshold step
/// writes literal 0.0, so zero weights are exact. Throws NumericalError if
/// the KKT residual is still above tol after max_iter, except at lambda = 0
/// where separable data has no finite minimizer and the last iterate is
/// returned once the objective stalls.
SparseFinalLayer solve_elastic_net(const Mat& x, std::span<const int> labels,
                                   std::size_t c, double lambda, double alpha_mix,
                                   const SparseFinalLayer* warm_start = nullptr,
                                   const SolveOptions& opts = {});

/// Solves num_points lambdas log-evenly spaced from lambda_max down to
/// lambda_max * min_ratio, each warm-started from the previous solution.
/// Entry t records nec and accuracy on the validation split.
RegularizationPath solve_path(const Mat& x_train, std::span<const int> y_train,
                              const Mat& x_val, std::span<const int> y_val,
                              std::size_t c, double alpha_mix,
                              int num_points = 50, double min_ratio = 1.0 / 500.0,
                              const SolveOptions& opts = {});

/// Mean per-class count of exactly-zero-free entries: (1/C) * #{w_ij != 0}.
double nec(const Mat& w);

/// Removes the globally smallest-magnitude nonzeros until round(target * C)
/// remain. Ties broken by (row, column) order. Requires nec(layer) >= target.
SparseFinalLayer prune_to_nec(const SparseFinalLayer& layer, double target_nec);

/// Picks the path entry with NEC closest to target among those with
/// NEC >= target (closest overall if none reach it), then prunes to target
/// when above it.
SparseFinalLayer select_for_nec(const RegularizationPath& path, double target_nec);

/// Binary path container: magic "VLGP", version byte, JSON header line with
/// the lambda grid and per-entry metadata, then each entry's weights and
/// bias as little-endian float64. Round-trips bit-exactly.
void write_path(const RegularizationPath& path, const std::filesystem::path& file);
RegularizationPath read_path(const std::filesystem::path& file);

}  // namespace vlgcbm
