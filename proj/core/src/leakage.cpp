#include "vlgcbm/leakage.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMajor>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;

MapMat as_eigen(const Mat& m) {
    return MapMat(m.v.data(), static_cast<Eigen::Index>(m.rows),
                  static_cast<Eigen::Index>(m.cols));
}

void check_spd(const Mat& sigma) {
    if (sigma.rows != sigma.cols) {
        throw DataError("covariance must be square");
    }
    double scale = 0.0;
    for (double v : sigma.v) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < sigma.rows; ++i) {
        for (std::size_t j = i + 1; j < sigma.cols; ++j) {
            if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-9 * (1.0 + scale)) {
                throw DataError("covariance is not symmetric");
            }
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(as_eigen(sigma),
                                                      Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
        throw DataError("covariance is not positive definite");
    }
}

}  // namespace

double largest_eigenvalue(const Mat& sigma) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(as_eigen(sigma),
                                                      Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition failed");
    }
    return es.eigenvalues().maxCoeff();
}

Mat random_spd(int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat a(d, d);
    for (double& v : a.v) v = normal(rng);
    Mat sigma(d, d);
    auto ae = as_eigen(a);
    RowMajor s = ae.transpose() * ae;
    for (int i = 0; i < d; ++i) s(i, i) += 0.1;
    std::copy(s.data(), s.data() + s.size(), sigma.v.begin());
    return sigma;
}

Approximator optimal_approximator(const Mat& w_c, const Mat& sigma,
                                  std::span<const double> mu,
                                  std::span<const double> w, double b) {
    const std::size_t d = sigma.rows;
    if (sigma.cols != d || w.size() != d) {
        throw DataError("covariance / target dimension mismatch");
    }
    if (w_c.rows > 0 && w_c.cols != d) {
        throw DataError("bottleneck width mismatch");
    }
    if (!mu.empty() && mu.size() != d) {
        throw DataError("mean dimension mismatch");
    }

    auto se = as_eigen(sigma);
    MapVec we(w.data(), static_cast<Eigen::Index>(w.size()));

    // Whiten with sigma = L L^T and solve min ||B^T w~ - L^T w|| over w~,
    // B = W_c L. This is the same generalized least squares as
    // pinv(W_c sigma W_c^T) W_c sigma w but at the square root of its
    // condition number, which keeps k >= d recovery exact for near-singular
    // bottleneck draws. The whitened residual norm is r^T sigma r exactly.
    Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(se)};
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance is not positive definite");
    }
    Eigen::MatrixXd lt = Eigen::MatrixXd(llt.matrixL()).transpose();
    Eigen::VectorXd y = lt * we;

    Approximator out;
    Eigen::VectorXd r;
    Eigen::VectorXd ry;
    if (w_c.rows == 0) {
        out.w_tilde.clear();
        r = we;
        ry = y;
    } else {
        auto wce = as_eigen(w_c);
        Eigen::MatrixXd bt = lt * wce.transpose();  // d x k
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            bt, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        const double cutoff = sv.size() > 0 ? 1e-12 * sv(0) : 0.0;
        Eigen::VectorXd uy = svd.matrixU().transpose() * y;
        for (Eigen::Index i = 0; i < uy.size(); ++i) {
            uy(i) = sv(i) > cutoff ? uy(i) / sv(i) : 0.0;
        }
        Eigen::VectorXd wt = svd.matrixV() * uy;
        out.w_tilde.assign(wt.data(), wt.data() + wt.size());
        r = we - wce.transpose() * wt;
        ry = y - bt * wt;
    }
    out.error = ry.squaredNorm();
    double mu_term = 0.0;
    if (!mu.empty()) {
        MapVec mue(mu.data(), static_cast<Eigen::Index>(mu.size()));
        mu_term = r.dot(mue);
    }
    out.b_tilde = mu_term + b;
    return out;
}

double theorem_bound(int k, int d, double lambda_max, std::span<const double> w) {
    if (d < 1) throw DataError("d must be >= 1");
    if (k < 0) throw DataError("k must be >= 0");
    if (k >= d) return 0.0;
    double frac = 1.0 - static_cast<double>(k) / static_cast<double>(d);
    return lambda_max * frac * squared_norm(w);
}

double multiclass_bound(int k, int d, double lambda_max, const Mat& w_rows) {
    double sum = 0.0;
    for (std::size_t i = 0; i < w_rows.rows; ++i) {
        sum += theorem_bound(k, d, lambda_max, w_rows.row(i));
    }
    return sum;
}

double multiclass_bound_uniform(int k, int d, double lambda_max,
                                const Mat& w_rows) {
    double worst = 0.0;
    for (std::size_t i = 0; i < w_rows.rows; ++i) {
        worst = std::max(worst, theorem_bound(k, d, lambda_max, w_rows.row(i)));
    }
    return static_cast<double>(w_rows.rows) * worst;
}

LeakageResult run_leakage_experiment(const LeakageSetup& setup) {
    if (setup.trials < 1) throw ConfigError("trials", "must be >= 1");
    if (setup.d < 1) throw ConfigError("d", "must be >= 1");
    if (setup.sigma.rows != static_cast<std::size_t>(setup.d)) {
        throw DataError("sigma size != d");
    }
    if (setup.w.size() != static_cast<std::size_t>(setup.d)) {
        throw DataError("w size != d");
    }
    check_spd(setup.sigma);
    const double lmax = largest_eigenvalue(setup.sigma);

    LeakageResult result;
    for (int k : setup.k_grid) {
        if (k < 0) throw ConfigError("k_grid", "entries must be >= 0");
        double sum = 0.0, sumsq = 0.0, worst = 0.0;
        for (int trial = 0; trial < setup.trials; ++trial) {
            // Per-trial generator, so trials are order-independent.
            std::seed_seq seq{setup.seed, static_cast<std::uint64_t>(k),
                             static_cast<std::uint64_t>(trial)};
            std::mt19937_64 rng(seq);
            std::normal_distribution<double> normal(0.0, 1.0);
            Mat w_c(k, setup.d);
            for (double& v : w_c.v) v = normal(rng);
            Approximator a = optimal_approximator(w_c, setup.sigma, setup.mu,
                                                  setup.w, setup.b);
            sum += a.error;
            sumsq += a.error * a.error;
            worst = std::max(worst, a.error);
        }
        double mean = sum / setup.trials;
        double var = std::max(0.0, sumsq / setup.trials - mean * mean);
        LeakageResult::PerK per;
        per.mean_error = mean;
        per.std_error = std::sqrt(var);
        per.bound = theorem_bound(k, setup.d, lmax, setup.w);
        result.per_k[k] = per;
        if (k >= setup.d) {
            result.exact_recovery_max_error =
                std::max(result.exact_recovery_max_error, worst);
        }
    }
    return result;
}

RandomBaseline random_cbl_baseline(const EmbeddingMatrix& train_embeddings,
                                   std::span<const int> train_labels,
                                   const EmbeddingMatrix& val_embeddings,
                                   std::span<const int> val_labels,
                                   std::size_t num_classes, int k,
                                   double alpha_mix, std::uint64_t seed,
                                   const SolveOptions& opts) {
    if (k < 1) throw ConfigError("k", "must be >= 1");
    const std::size_t d = train_embeddings.d;
    if (val_embeddings.n > 0 && val_embeddings.d != d) {
        throw DataError("train/val embedding dims differ");
    }

    RandomBaseline out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    out.cb.weights = Mat(k, d);
    for (double& v : out.cb.weights.v) v = normal(rng);

    // Normalization from the raw training logits, same floor as the trained
    // bottleneck path.
    const std::size_t n = train_embeddings.n;
    if (n == 0) throw DataError("empty training embeddings");
    Mat logits(n, static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        auto z = train_embeddings.row_as_double(i);
        auto raw = matvec(out.cb.weights, z);
        std::copy(raw.begin(), raw.end(), logits.row(i).begin());
    }
    out.cb.norm_mean.assign(k, 0.0);
    out.cb.norm_std.assign(k, 1.0);
    for (int j = 0; j < k; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += logits(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double c = logits(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        out.cb.norm_mean[j] = mean;
        out.cb.norm_std[j] = std::max(std::sqrt(var), 1e-6);
    }

    Mat x_train = concept_logit_matrix(out.cb, train_embeddings);
    Mat x_val = concept_logit_matrix(out.cb, val_embeddings);
    out.path = solve_path(x_train, train_labels, x_val, val_labels, num_classes,
                          alpha_mix, 50, 1.0 / 500.0, opts);
    return out;
}

}  // namespace vlgcbm
