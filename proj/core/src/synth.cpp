#include "vlgcbm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Standard deviation of the planted embedding distribution orthogonal to
// the class axes (the axes themselves have unit variance).
constexpr double kPerpSd = 0.3;

std::string concept_name(int j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "concept_%02d", j);
    return buf;
}

}  // namespace

PlantedModel make_planted(int d, int k, int c, int s, double noise_rate,
                          std::uint64_t seed) {
    if (d < 1 || k < 1 || c < 2 || s < 1 || s > k) {
        throw ConfigError("planted", "need d,k >= 1, c >= 2, 1 <= s <= k");
    }
    if (noise_rate < 0.0 || noise_rate >= 0.5) {
        throw ConfigError("noise_rate", "must be in [0, 0.5)");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    PlantedModel pm;
    pm.d = d;
    pm.k = k;
    pm.c = c;
    pm.s = s;
    pm.noise_rate = noise_rate;

    // Concept directions cluster around one axis per owning class
    // (concept j belongs to class j mod c). Concepts sharing an axis act
    // as rungs of one ladder: their thresholds are spread evenly across
    // the bulk of the axis projection, so each class score is a staircase
    // that tracks a single projection of z almost linearly. That keeps
    // the planted argmax recoverable by a linear readout of the concept
    // logits, which is all a linear bottleneck pipeline can express.
    Mat axes(c, d);
    for (int cc = 0; cc < c; ++cc) {
        auto row = axes.row(cc);
        for (int t = 0; t < d; ++t) row[t] = normal(rng);
        for (int prev = 0; prev < cc && prev < d; ++prev) {
            double proj = dot(axes.row(prev), axes.row(cc));
            for (int t = 0; t < d; ++t) row[t] -= proj * axes.row(prev)[t];
        }
        double norm = std::sqrt(dot(axes.row(cc), axes.row(cc)));
        for (int t = 0; t < d; ++t) row[t] /= norm;
    }
    pm.concept_directions = Mat(k, d);
    for (int j = 0; j < k; ++j) {
        auto axis = axes.row(j % c);
        auto row = pm.concept_directions.row(j);
        double norm = 0.0;
        for (int t = 0; t < d; ++t) {
            row[t] = axis[t] + 0.06 * normal(rng) / std::sqrt(double(d));
            norm += row[t] * row[t];
        }
        norm = std::sqrt(norm);
        for (int t = 0; t < d; ++t) row[t] /= norm;
    }

    // Unit variance along every class axis, kPerpSd^2 in all orthogonal
    // directions. Real embedding spaces carry their class signal in a
    // low-variance-elsewhere subspace the same way; without it no small
    // random bottleneck could ever recover the planted structure.
    pm.sigma = Mat(d, d);
    for (int i = 0; i < d; ++i) pm.sigma(i, i) = kPerpSd * kPerpSd;
    for (int cc = 0; cc < c; ++cc) {
        auto axis = axes.row(cc);
        for (int i = 0; i < d; ++i) {
            for (int t = 0; t < d; ++t) {
                // axis[i] * axis[t] first, so the matrix is exactly symmetric
                pm.sigma(i, t) += (1.0 - kPerpSd * kPerpSd) * (axis[i] * axis[t]);
            }
        }
    }

    // Rung j/c of cluster j%c; the cluster's rungs cover [-1.1, 1.1]
    // evenly (unit directions, unit covariance: the logit is standard
    // normal, so that range spans the central ~73% of its mass).
    pm.concept_thresholds.resize(k);
    for (int j = 0; j < k; ++j) {
        int rung = j / c;
        int rungs = (k - (j % c) - 1) / c + 1;
        double center = 1.1 * (2.0 * (rung + 0.5) / rungs - 1.0);
        pm.concept_thresholds[j] = center + 0.05 * (unit(rng) - 0.5);
    }

    // Row r reads its own ladder with heavy weights; when the ladder has
    // fewer than s rungs it borrows lowest-index leftovers at the light
    // end of the range, keeping foreign steps from distorting the score.
    pm.true_final = Mat(c, k);
    for (int cc = 0; cc < c; ++cc) {
        std::vector<int> own, borrowed;
        for (int j = cc; j < k && static_cast<int>(own.size()) < s; j += c) {
            own.push_back(j);
        }
        for (int j = 0;
             j < k && static_cast<int>(own.size() + borrowed.size()) < s; ++j) {
            if (j % c != cc) borrowed.push_back(j);
        }
        for (int j : own) pm.true_final(cc, j) = 1.2 + 0.25 * unit(rng);
        for (int j : borrowed) pm.true_final(cc, j) = 0.5 + 0.05 * unit(rng);
    }

    pm.concept_names.reserve(k);
    for (int j = 0; j < k; ++j) pm.concept_names.push_back(concept_name(j));
    return pm;
}

Mat sample_gaussian(const Mat& sigma, std::span<const double> mu, int n,
                    std::uint64_t seed) {
    const auto d = static_cast<Eigen::Index>(sigma.rows);
    if (sigma.cols != sigma.rows) throw DataError("covariance must be square");
    if (!mu.empty() && mu.size() != sigma.rows) {
        throw DataError("mean dimension mismatch");
    }
    Eigen::Map<const RowMajor> se(sigma.v.data(), d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(se);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance is not positive definite (Cholesky failed)");
    }
    Eigen::MatrixXd l = llt.matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat out(n, sigma.rows);
    Eigen::VectorXd g(d);
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index t = 0; t < d; ++t) g[t] = normal(rng);
        Eigen::VectorXd z = l * g;
        auto row = out.row(i);
        for (Eigen::Index t = 0; t < d; ++t) {
            row[t] = z[t] + (mu.empty() ? 0.0 : mu[t]);
        }
    }
    return out;
}

PlantedData generate(const PlantedModel& planted, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("n", "must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    PlantedData data;
    Mat z = sample_gaussian(planted.sigma, {}, n, rng());

    data.embeddings.n = n;
    data.embeddings.d = planted.d;
    data.embeddings.values.resize(static_cast<std::size_t>(n) * planted.d);
    for (int i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "img_%05d", i);
        data.embeddings.ids.emplace_back(buf);
        auto row = z.row(i);
        for (int t = 0; t < planted.d; ++t) {
            data.embeddings.values[static_cast<std::size_t>(i) * planted.d + t] =
                static_cast<float>(row[t]);
        }
    }

    data.clean_bits.resize(n);
    data.noisy_bits.resize(n);
    data.class_labels.resize(n);
    for (int i = 0; i < n; ++i) {
        // Bits come from the float32-rounded embedding, the value consumers
        // actually see, so a threshold recheck reproduces them exactly.
        std::vector<double> zi = data.embeddings.row_as_double(i);
        auto& clean = data.clean_bits[i].bits;
        auto& noisy = data.noisy_bits[i].bits;
        clean.resize(planted.k);
        noisy.resize(planted.k);
        for (int j = 0; j < planted.k; ++j) {
            double logit = dot(planted.concept_directions.row(j), zi);
            clean[j] = logit > planted.concept_thresholds[j];
            bool flip = unit(rng) < planted.noise_rate;
            noisy[j] = clean[j] ^ flip;
        }
        // Class from the clean bits: flips model annotation noise, not a
        // different ground truth.
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int cc = 0; cc < planted.c; ++cc) {
            double score = 0.01 * normal(rng);
            auto row = planted.true_final.row(cc);
            for (int j = 0; j < planted.k; ++j) {
                if (clean[j]) score += row[j];
            }
            if (score > best_score) {
                best_score = score;
                best = cc;
            }
        }
        data.class_labels[i] = best;
    }

    // Boxes: one per noisy-positive concept at high confidence, plus
    // injected false boxes at low confidence on other concepts.
    const double false_rate = 0.08;
    for (int i = 0; i < n; ++i) {
        DetectionRecord rec;
        rec.image_id = data.embeddings.ids[i];
        rec.class_label = data.class_labels[i];
        for (int j = 0; j < planted.k; ++j) {
            bool true_box = data.noisy_bits[i].bits[j];
            bool false_box = !true_box && unit(rng) < false_rate;
            if (!true_box && !false_box) continue;
            BoundingBox box;
            double x0 = unit(rng) * 500.0;
            double y0 = unit(rng) * 350.0;
            box.coords = {x0, y0, x0 + 20.0 + unit(rng) * 100.0,
                          y0 + 20.0 + unit(rng) * 100.0};
            box.confidence = true_box ? 0.5 + 0.5 * unit(rng) : 0.3 * unit(rng);
            box.concept_name = planted.concept_names[j];
            rec.boxes.push_back(std::move(box));
        }
        data.detections.push_back(std::move(rec));
    }
    return data;
}

ConceptVocabulary planted_vocabulary(const PlantedModel& planted) {
    ConceptVocabulary v;
    v.concepts = planted.concept_names;
    std::vector<int> all(planted.k);
    std::iota(all.begin(), all.end(), 0);
    for (int cc = 0; cc < planted.c; ++cc) v.class_candidates[cc] = all;
    return v;
}

EmbeddingMatrix synth_crop_embeddings(const PlantedModel& planted,
                                      const PlantedData& data) {
    EmbeddingMatrix crops;
    crops.d = planted.d;
    auto row_of = data.embeddings.make_index();
    for (const auto& rec : data.detections) {
        std::vector<int> seen;
        for (const auto& box : rec.boxes) {
            auto it = std::find(planted.concept_names.begin(),
                                planted.concept_names.end(), box.concept_name);
            if (it == planted.concept_names.end()) {
                throw DataError("box concept is not a planted concept: " +
                                box.concept_name);
            }
            int j = static_cast<int>(it - planted.concept_names.begin());
            if (std::find(seen.begin(), seen.end(), j) != seen.end()) continue;
            seen.push_back(j);
            auto zi = data.embeddings.row(row_of.at(rec.image_id));
            auto u = planted.concept_directions.row(j);
            crops.ids.push_back(rec.image_id + "#" + box.concept_name);
            // A crop keeps a shadow of the image but expresses its concept
            // far above threshold.
            double shift = planted.concept_thresholds[j] + 1.5;
            for (int t = 0; t < planted.d; ++t) {
                crops.values.push_back(
                    static_cast<float>(0.3 * zi[t] + shift * u[t]));
            }
            ++crops.n;
        }
    }
    return crops;
}

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

namespace {

/// Maintained softmax state for the coordinate oracle: logits u = W x^T + b
/// refreshed each sweep, probed without mutation during 1-D searches.
struct CdState {
    const Mat& x;
    std::span<const int> labels;
    Mat u;  // n x c

    CdState(const Mat& x, std::span<const int> labels, std::size_t c)
        : x(x), labels(labels), u(x.rows, c) {}

    void refresh(const Mat& w, std::span<const double> b) {
        for (std::size_t i = 0; i < x.rows; ++i) {
            auto xi = x.row(i);
            for (std::size_t cc = 0; cc < u.cols; ++cc) {
                u(i, cc) = b[cc] + dot(w.row(cc), xi);
            }
        }
    }

    /// dCE/dv where v perturbs class cc: logit_i,cc += (v - cur) * scale_i.
    /// scale_i = x_ij for a weight coordinate, 1 for a bias coordinate.
    double ce_derivative(std::size_t cc, double cur, double v, int j) const {
        double g = 0.0;
        const double inv_n = 1.0 / static_cast<double>(x.rows);
        for (std::size_t i = 0; i < x.rows; ++i) {
            double scale = j >= 0 ? x(i, static_cast<std::size_t>(j)) : 1.0;
            double shifted = u(i, cc) + (v - cur) * scale;
            double umax = shifted;
            for (std::size_t c2 = 0; c2 < u.cols; ++c2) {
                if (c2 != cc) umax = std::max(umax, u(i, c2));
            }
            double z = std::exp(shifted - umax);
            for (std::size_t c2 = 0; c2 < u.cols; ++c2) {
                if (c2 != cc) z += std::exp(u(i, c2) - umax);
            }
            double p = std::exp(shifted - umax) / z;
            double y = static_cast<std::size_t>(labels[i]) == cc ? 1.0 : 0.0;
            g += (p - y) * scale;
        }
        return g * inv_n;
    }

    void commit(std::size_t cc, double cur, double v, int j) {
        for (std::size_t i = 0; i < x.rows; ++i) {
            double scale = j >= 0 ? x(i, static_cast<std::size_t>(j)) : 1.0;
            u(i, cc) += (v - cur) * scale;
        }
    }
};

/// Root of the increasing function h on the given side of zero, by bracket
/// expansion then bisection.
double bisect_root(const std::function<double(double)>& h, double lo, double hi) {
    for (int it = 0; it < 200 && h(lo) > 0.0; ++it) {
        hi = lo;
        lo *= 2.0;
        if (lo < -1e12) throw NumericalError("oracle bracket expansion failed");
    }
    for (int it = 0; it < 200 && h(hi) < 0.0; ++it) {
        lo = hi;
        hi = hi == 0.0 ? 1.0 : hi * 2.0;
        if (hi > 1e12) throw NumericalError("oracle bracket expansion failed");
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (h(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double cd_objective(const Mat& w, std::span<const double> b, const Mat& x,
                    std::span<const int> labels, double lambda, double alpha) {
    SparseFinalLayer tmp;
    tmp.weights = w;
    tmp.bias.assign(b.begin(), b.end());
    return objective(tmp, x, labels, lambda, alpha);
}

}  // namespace

SparseFinalLayer coordinate_descent_oracle(const Mat& x, std::span<const int> labels,
                                           std::size_t c, double lambda,
                                           double alpha_mix, int max_sweeps) {
    if (x.rows != labels.size() || x.rows == 0) {
        throw DataError("bad oracle instance");
    }
    const std::size_t k = x.cols;
    const double l1 = lambda * alpha_mix;
    const double ridge = lambda * (1.0 - alpha_mix);

    SparseFinalLayer out;
    out.lambda = lambda;
    out.alpha_mix = alpha_mix;
    out.weights = Mat(c, k);
    out.bias = class_prior_bias(labels, c);

    CdState state(x, labels, c);
    double prev = cd_objective(out.weights, out.bias, x, labels, lambda, alpha_mix);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        state.refresh(out.weights, out.bias);
        for (std::size_t cc = 0; cc < c; ++cc) {
            for (std::size_t j = 0; j < k; ++j) {
                double cur = out.weights(cc, j);
                double g0 = state.ce_derivative(cc, cur, 0.0, static_cast<int>(j));
                double next;
                if (std::abs(g0) <= l1) {
                    next = 0.0;
                } else {
                    double sign = g0 > l1 ? -1.0 : 1.0;
                    auto h = [&](double v) {
                        return state.ce_derivative(cc, cur, v,
                                                   static_cast<int>(j)) +
                               ridge * v + l1 * sign;
                    };
                    next = sign < 0 ? bisect_root(h, -1.0, 0.0)
                                    : bisect_root(h, 0.0, 1.0);
                }
                state.commit(cc, cur, next, static_cast<int>(j));
                out.weights(cc, j) = next;
            }
            double cur = out.bias[cc];
            auto h = [&](double v) { return state.ce_derivative(cc, cur, v, -1); };
            double next = bisect_root(h, cur - 1.0, cur + 1.0);
            state.commit(cc, cur, next, -1);
            out.bias[cc] = next;
        }
        double obj = cd_objective(out.weights, out.bias, x, labels, lambda,
                                  alpha_mix);
        if (prev - obj < 1e-10) {
            out.nec = nec(out.weights);
            return out;
        }
        prev = obj;
    }
    throw NumericalError("coordinate-descent oracle did not converge in " +
                         std::to_string(max_sweeps) + " sweeps");
}

McEstimate mc_error_oracle(const Mat& w_c, const Mat& sigma,
                           std::span<const double> mu, std::span<const double> w,
                           double b, std::span<const double> w_tilde,
                           double b_tilde, int samples, std::uint64_t seed) {
    if (samples < 10000) throw ConfigError("samples", "need at least 1e4");
    std::mt19937_64 rng(seed);
    double sum = 0.0, sumsq = 0.0;
    const int chunk = 8192;
    int done = 0;
    while (done < samples) {
        int m = std::min(chunk, samples - done);
        Mat z = sample_gaussian(sigma, mu, m, rng());
        for (int i = 0; i < m; ++i) {
            auto zi = z.row(i);
            double f = b + dot(w, zi);
            double ft = b_tilde;
            for (std::size_t r = 0; r < w_c.rows; ++r) {
                ft += w_tilde[r] * dot(w_c.row(r), zi);
            }
            double e = (f - ft) * (f - ft);
            sum += e;
            sumsq += e * e;
        }
        done += m;
    }
    McEstimate est;
    est.estimate = sum / samples;
    double var = std::max(0.0, sumsq / samples - est.estimate * est.estimate);
    est.std_error = std::sqrt(var / samples);
    return est;
}

}  // namespace vlgcbm
