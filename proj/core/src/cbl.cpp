#include "vlgcbm/cbl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

namespace {

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

void check_shapes(const Mat& logits, std::span<const ConceptLabel> targets) {
    if (logits.rows != targets.size()) {
        throw DataError("logit batch size " + std::to_string(logits.rows) +
                        " != target batch size " + std::to_string(targets.size()));
    }
    for (const auto& t : targets) {
        if (t.bits.size() != logits.cols) {
            throw DataError("target has " + std::to_string(t.bits.size()) +
                            " concepts, logits have " + std::to_string(logits.cols));
        }
    }
}

}  // namespace

double default_pos_scale(std::span<const ConceptLabel> labels) {
    if (labels.empty()) return 1.0;
    const std::size_t k = labels[0].bits.size();
    std::vector<double> ratios;
    ratios.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t pos = 0;
        for (const auto& l : labels) pos += l.bits[j];
        std::size_t neg = labels.size() - pos;
        if (pos == 0) continue;  // by construction every concept has a positive
        ratios.push_back(static_cast<double>(neg) / static_cast<double>(pos));
    }
    if (ratios.empty()) return 1.0;
    std::sort(ratios.begin(), ratios.end());
    double median = ratios[ratios.size() / 2];
    if (ratios.size() % 2 == 0) {
        median = 0.5 * (median + ratios[ratios.size() / 2 - 1]);
    }
    return std::clamp(median, 1.0, 100.0);
}

double bce_multilabel_loss(const Mat& logits, std::span<const ConceptLabel> targets,
                           double pos_scale) {
    check_shapes(logits, targets);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto row = logits.row(i);
        for (std::size_t j = 0; j < logits.cols; ++j) {
            double l = row[j];
            if (std::isnan(l)) throw NumericalError("NaN logit in BCE loss");
            sum += targets[i].bits[j] ? pos_scale * softplus(-l) : softplus(l);
        }
    }
    return logits.size() ? sum / static_cast<double>(logits.size()) : 0.0;
}

Mat bce_multilabel_grad(const Mat& logits, std::span<const ConceptLabel> targets,
                        double pos_scale) {
    check_shapes(logits, targets);
    Mat g(logits.rows, logits.cols);
    const double inv = logits.size() ? 1.0 / static_cast<double>(logits.size()) : 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto row = logits.row(i);
        for (std::size_t j = 0; j < logits.cols; ++j) {
            double l = row[j];
            if (std::isnan(l)) throw NumericalError("NaN logit in BCE gradient");
            double dl = targets[i].bits[j] ? -pos_scale * sigmoid(-l) : sigmoid(l);
            g(i, j) = dl * inv;
        }
    }
    return g;
}

namespace {

struct Adam {
    double lr, wd;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    long step = 0;

    explicit Adam(std::size_t size, double lr, double wd)
        : lr(lr), wd(wd), m(size, 0.0), v(size, 0.0) {}

    // grad is consumed with the L2 term folded in, the usual coupled form.
    void update(std::span<double> params, std::span<const double> grad) {
        ++step;
        double bc1 = 1.0 - std::pow(beta1, step);
        double bc2 = 1.0 - std::pow(beta2, step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            double g = grad[i] + wd * params[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

}  // namespace

CblTrainResult train_cbl(const AuxiliaryDataset& dataset,
                         const EmbeddingMatrix& crop_embeddings,
                         const CblTrainConfig& cfg) {
    const std::size_t n = dataset.size();
    const std::size_t k = dataset.num_concepts();
    const std::size_t d = dataset.embeddings.d;
    if (k == 0) throw DataError("cannot train a bottleneck with 0 concepts");
    if (n == 0) throw DataError("cannot train a bottleneck on 0 samples");
    if (cfg.learning_rate <= 0) throw ConfigError("learning_rate", "must be > 0");
    if (cfg.epochs <= 0) throw ConfigError("epochs", "must be > 0");
    if (cfg.batch_size <= 0) throw ConfigError("batch_size", "must be > 0");
    if (cfg.augmentation_prob < 0 || cfg.augmentation_prob > 1) {
        throw ConfigError("augmentation_prob", "must be in [0,1]");
    }

    double pos_scale = cfg.pos_loss_scale;
    if (pos_scale == 0.0) pos_scale = default_pos_scale(dataset.concept_labels);
    if (pos_scale <= 0.0) throw ConfigError("pos_loss_scale", "must be > 0");

    // Resolve augmentation records up front so id problems surface before
    // training starts.
    std::unordered_map<std::string, std::pair<std::size_t, int>> aug_by_image;
    if (!dataset.augmentations.empty()) {
        if (crop_embeddings.d != d) {
            throw DataError("crop embedding dim " + std::to_string(crop_embeddings.d) +
                            " != dataset dim " + std::to_string(d));
        }
        auto crop_row = crop_embeddings.make_index();
        for (const auto& a : dataset.augmentations) {
            auto it = crop_row.find(a.crop_embedding_id);
            if (it == crop_row.end()) {
                throw DataError("augmentation crop id not found: " +
                                a.crop_embedding_id);
            }
            aug_by_image[a.image_id] = {it->second, a.concept_index};
        }
    }

    std::mt19937_64 rng(cfg.seed);

    // Unstratified validation split for the epoch log.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(
        std::floor(cfg.val_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = n - 1;
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

    Mat w(k, d);
    std::vector<double> b(k, 0.0);
    Adam opt_w(w.size(), cfg.learning_rate, cfg.weight_decay);
    Adam opt_b(b.size(), cfg.learning_rate, cfg.weight_decay);

    auto logits_for = [&](std::span<const std::size_t> idx,
                          std::span<const std::pair<std::size_t, bool>> source) {
        Mat logits(idx.size(), k);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto [row, is_crop] = source.empty()
                                      ? std::pair<std::size_t, bool>{idx[r], false}
                                      : source[r];
            auto z = is_crop ? crop_embeddings.row(row) : dataset.embeddings.row(row);
            for (std::size_t j = 0; j < k; ++j) {
                double s = b[j];
                auto wr = w.row(j);
                for (std::size_t t = 0; t < d; ++t) s += wr[t] * z[t];
                logits(r, j) = s;
            }
        }
        return logits;
    };

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    CblTrainResult result;
    std::vector<std::size_t> epoch_order = train_idx;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(epoch_order.begin(), epoch_order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < epoch_order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t stop = std::min(
                start + static_cast<std::size_t>(cfg.batch_size), epoch_order.size());
            std::span<const std::size_t> batch{epoch_order.data() + start,
                                               stop - start};

            // Per-sample augmentation coin; applied when a crop exists.
            std::vector<std::pair<std::size_t, bool>> source(batch.size());
            std::vector<ConceptLabel> targets(batch.size());
            for (std::size_t r = 0; r < batch.size(); ++r) {
                std::size_t i = batch[r];
                bool flip = unit(rng) < cfg.augmentation_prob;
                auto it = aug_by_image.end();
                if (flip) it = aug_by_image.find(dataset.embeddings.ids[i]);
                if (it != aug_by_image.end()) {
                    source[r] = {it->second.first, true};
                    targets[r].bits.assign(k, 0);
                    targets[r].bits[it->second.second] = 1;
                } else {
                    source[r] = {i, false};
                    targets[r] = dataset.concept_labels[i];
                }
            }

            Mat logits = logits_for(batch, source);
            double loss = bce_multilabel_loss(logits, targets, pos_scale);
            if (!std::isfinite(loss)) {
                throw NumericalError("non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(start / cfg.batch_size));
            }
            loss_sum += loss * static_cast<double>(batch.size());

            Mat gl = bce_multilabel_grad(logits, targets, pos_scale);
            Mat gw(k, d);
            std::vector<double> gb(k, 0.0);
            for (std::size_t r = 0; r < batch.size(); ++r) {
                auto [row, is_crop] = source[r];
                auto z = is_crop ? crop_embeddings.row(row)
                                 : dataset.embeddings.row(row);
                for (std::size_t j = 0; j < k; ++j) {
                    double g = gl(r, j);
                    gb[j] += g;
                    auto gwr = gw.row(j);
                    for (std::size_t t = 0; t < d; ++t) gwr[t] += g * z[t];
                }
            }
            opt_w.update(std::span<double>(w.v), gw.v);
            opt_b.update(std::span<double>(b), gb);
        }

        EpochStat stat;
        stat.epoch = epoch;
        stat.train_loss = epoch_order.empty()
                              ? 0.0
                              : loss_sum / static_cast<double>(epoch_order.size());
        if (!val_idx.empty()) {
            Mat vl = logits_for(val_idx, {});
            std::vector<ConceptLabel> vt;
            vt.reserve(val_idx.size());
            for (std::size_t i : val_idx) vt.push_back(dataset.concept_labels[i]);
            stat.val_loss = bce_multilabel_loss(vl, vt, pos_scale);
            double auc_sum = 0.0;
            std::size_t auc_n = 0;
            std::vector<double> scores(val_idx.size());
            std::vector<std::uint8_t> labels(val_idx.size());
            for (std::size_t j = 0; j < k; ++j) {
                for (std::size_t r = 0; r < val_idx.size(); ++r) {
                    scores[r] = vl(r, j);
                    labels[r] = vt[r].bits[j];
                }
                double a = binary_auc(scores, labels);
                if (!std::isnan(a)) {
                    auc_sum += a;
                    ++auc_n;
                }
            }
            stat.mean_val_auc = auc_n ? auc_sum / static_cast<double>(auc_n)
                                      : std::numeric_limits<double>::quiet_NaN();
        } else {
            stat.val_loss = std::numeric_limits<double>::quiet_NaN();
            stat.mean_val_auc = std::numeric_limits<double>::quiet_NaN();
        }
        result.log.push_back(stat);
    }

    result.model.weights = std::move(w);
    result.model.bias = std::move(b);
    result.model = fit_normalization(result.model, dataset);
    return result;
}

ConceptBottleneck fit_normalization(const ConceptBottleneck& cb,
                                    const AuxiliaryDataset& dataset) {
    const std::size_t n = dataset.size();
    const std::size_t k = cb.k();
    if (dataset.embeddings.d != cb.d()) {
        throw DataError("embedding dim " + std::to_string(dataset.embeddings.d) +
                        " != bottleneck dim " + std::to_string(cb.d()));
    }
    ConceptBottleneck out = cb;
    out.norm_mean.assign(k, 0.0);
    out.norm_std.assign(k, 1.0);
    if (n == 0) return out;

    Mat logits(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        auto z = dataset.embeddings.row_as_double(i);
        auto raw = predict_concepts(cb, z, false);
        for (std::size_t j = 0; j < k; ++j) logits(i, j) = raw[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += logits(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double c = logits(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        out.norm_mean[j] = mean;
        out.norm_std[j] = std::max(std::sqrt(var), 1e-6);
    }
    return out;
}

std::vector<double> predict_concepts(const ConceptBottleneck& cb,
                                     std::span<const double> z, bool normalized) {
    if (z.size() != cb.d()) {
        throw DataError("embedding has " + std::to_string(z.size()) +
                        " dims, bottleneck expects " + std::to_string(cb.d()));
    }
    std::vector<double> out = matvec(cb.weights, z);
    if (cb.has_bias()) {
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += cb.bias[j];
    }
    if (normalized) {
        if (!cb.has_norm()) {
            throw DataError("normalization stats not fitted");
        }
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] = (out[j] - cb.norm_mean[j]) / cb.norm_std[j];
        }
    }
    return out;
}

Mat concept_logit_matrix(const ConceptBottleneck& cb, const EmbeddingMatrix& m) {
    Mat out(m.n, cb.k());
    for (std::size_t i = 0; i < m.n; ++i) {
        auto logits = predict_concepts(cb, m.row_as_double(i), true);
        std::copy(logits.begin(), logits.end(), out.row(i).begin());
    }
    return out;
}

double binary_auc(std::span<const double> scores,
                  std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw DataError("AUC scores/labels length mismatch");
    }
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (auto l : labels) n_pos += l != 0;
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Midranks over tied scores, then the Mann-Whitney statistic.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (std::size_t t = i; t < j; ++t) {
            if (labels[idx[t]]) rank_sum_pos += midrank;
        }
        i = j;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                  static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace vlgcbm
