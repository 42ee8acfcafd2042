#include "vlgcbm/sparse_final.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <tuple>

#include <nlohmann/json.hpp>

#include "vlgcbm/errors.hpp"

namespace vlgcbm {

using json = nlohmann::ordered_json;

namespace {

void check_instance(const Mat& x, std::span<const int> labels, std::size_t c) {
    if (x.rows != labels.size()) {
        throw DataError("logit rows " + std::to_string(x.rows) +
                        " != label count " + std::to_string(labels.size()));
    }
    if (x.rows == 0) throw DataError("empty training instance");
    if (c == 0) throw DataError("need at least one class");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DataError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(c) + ")");
        }
    }
}

/// Mean CE and, when grad_w is non-null, its gradients. One fused pass.
double ce_pass(const Mat& w, std::span<const double> b, const Mat& x,
               std::span<const int> labels, Mat* grad_w,
               std::vector<double>* grad_b) {
    const std::size_t n = x.rows, k = x.cols, c = w.rows;
    const double inv_n = 1.0 / static_cast<double>(n);
    if (grad_w) {
        *grad_w = Mat(c, k);
        grad_b->assign(c, 0.0);
    }
    double ce = 0.0;
    std::vector<double> u(c);
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row(i);
        double umax = -std::numeric_limits<double>::infinity();
        for (std::size_t cc = 0; cc < c; ++cc) {
            u[cc] = b[cc] + dot(w.row(cc), xi);
            umax = std::max(umax, u[cc]);
        }
        double z = 0.0;
        for (std::size_t cc = 0; cc < c; ++cc) z += std::exp(u[cc] - umax);
        double lse = umax + std::log(z);
        ce += lse - u[labels[i]];
        if (grad_w) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                double p = std::exp(u[cc] - lse);
                double g = (p - (static_cast<std::size_t>(labels[i]) == cc)) * inv_n;
                (*grad_b)[cc] += g;
                auto gr = grad_w->row(cc);
                for (std::size_t j = 0; j < k; ++j) gr[j] += g * xi[j];
            }
        }
    }
    return ce * inv_n;
}

double l1_norm(const Mat& w) {
    double s = 0.0;
    for (double v : w.v) s += std::abs(v);
    return s;
}

void require_populated_classes(std::span<const int> labels, std::size_t c) {
    std::vector<char> seen(c, 0);
    for (int y : labels) seen[y] = 1;
    for (std::size_t cc = 0; cc < c; ++cc) {
        if (!seen[cc]) {
            throw DataError("class " + std::to_string(cc) +
                            " has no training samples");
        }
    }
}

int local_argmax(const SparseFinalLayer& layer, std::span<const double> xi) {
    int best = 0;
    double best_u = -std::numeric_limits<double>::infinity();
    for (std::size_t cc = 0; cc < layer.weights.rows; ++cc) {
        double u = layer.bias[cc] + dot(layer.weights.row(cc), xi);
        if (u > best_u) {
            best_u = u;
            best = static_cast<int>(cc);
        }
    }
    return best;
}

}  // namespace

double cross_entropy(const Mat& w, std::span<const double> b, const Mat& x,
                     std::span<const int> labels) {
    check_instance(x, labels, w.rows);
    if (w.cols != x.cols || b.size() != w.rows) {
        throw DataError("final-layer shape mismatch");
    }
    return ce_pass(w, b, x, labels, nullptr, nullptr);
}

void cross_entropy_grad(const Mat& w, std::span<const double> b, const Mat& x,
                        std::span<const int> labels, Mat& grad_w,
                        std::vector<double>& grad_b) {
    check_instance(x, labels, w.rows);
    if (w.cols != x.cols || b.size() != w.rows) {
        throw DataError("final-layer shape mismatch");
    }
    ce_pass(w, b, x, labels, &grad_w, &grad_b);
}

double objective(const SparseFinalLayer& layer, const Mat& x,
                 std::span<const int> labels, double lambda, double alpha_mix) {
    double ce = cross_entropy(layer.weights, layer.bias, x, labels);
    double penalty = lambda * ((1.0 - alpha_mix) * 0.5 * squared_norm(layer.weights) +
                               alpha_mix * l1_norm(layer.weights));
    double val = ce + penalty;
    if (std::isnan(val)) throw NumericalError("NaN objective");
    return val;
}

std::vector<double> class_prior_bias(std::span<const int> labels, std::size_t c) {
    std::vector<std::size_t> counts(c, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DataError("label outside [0, " + std::to_string(c) + ")");
        }
        ++counts[y];
    }
    const double n = static_cast<double>(labels.size());
    std::vector<double> b(c);
    for (std::size_t cc = 0; cc < c; ++cc) {
        b[cc] = counts[cc] ? std::log(static_cast<double>(counts[cc]) / n)
                           : std::log(1.0 / (n * static_cast<double>(c)));
    }
    return b;
}

double compute_lambda_max(const Mat& x, std::span<const int> labels,
                          std::size_t c, double alpha_mix) {
    if (!(alpha_mix > 0.0)) {
        throw ConfigError("alpha_mix",
                          "must be > 0: the pure-ridge penalty has no critical "
                          "value that zeroes the weights");
    }
    check_instance(x, labels, c);
    Mat w0(c, x.cols);
    std::vector<double> b = class_prior_bias(labels, c);
    Mat gw;
    std::vector<double> gb;
    ce_pass(w0, b, x, labels, &gw, &gb);
    double gmax = 0.0;
    for (double g : gw.v) gmax = std::max(gmax, std::abs(g));
    return gmax / alpha_mix;
}

double kkt_residual(const SparseFinalLayer& layer, const Mat& x,
                    std::span<const int> labels, double lambda, double alpha_mix) {
    Mat gw;
    std::vector<double> gb;
    cross_entropy_grad(layer.weights, layer.bias, x, labels, gw, gb);
    const double l1 = lambda * alpha_mix;
    const double ridge = lambda * (1.0 - alpha_mix);
    double r = 0.0;
    for (std::size_t i = 0; i < gw.size(); ++i) {
        double wv = layer.weights.v[i];
        double g = gw.v[i];
        if (wv != 0.0) {
            r = std::max(r, std::abs(g + ridge * wv + l1 * (wv > 0 ? 1.0 : -1.0)));
        } else {
            r = std::max(r, std::max(0.0, std::abs(g) - l1));
        }
    }
    for (double g : gb) r = std::max(r, std::abs(g));
    return r;
}

SparseFinalLayer solve_elastic_net(const Mat& x, std::span<const int> labels,
                                   std::size_t c, double lambda, double alpha_mix,
                                   const SparseFinalLayer* warm_start,
                                   const SolveOptions& opts) {
    check_instance(x, labels, c);
    require_populated_classes(labels, c);
    if (lambda < 0.0) throw ConfigError("lambda", "must be >= 0");
    if (alpha_mix < 0.0 || alpha_mix > 1.0) {
        throw ConfigError("alpha_mix", "must be in [0,1]");
    }
    if (!(opts.tol > 0.0)) throw ConfigError("tol", "must be > 0");

    const std::size_t k = x.cols;
    const double l1 = lambda * alpha_mix;
    const double ridge = lambda * (1.0 - alpha_mix);

    SparseFinalLayer out;
    out.lambda = lambda;
    out.alpha_mix = alpha_mix;
    if (warm_start) {
        if (warm_start->weights.rows != c || warm_start->weights.cols != k) {
            throw DataError("warm start has wrong shape");
        }
        out.weights = warm_start->weights;
        out.bias = warm_start->bias;
    } else {
        out.weights = Mat(c, k);
        out.bias = class_prior_bias(labels, c);
    }

    auto smooth = [&](const Mat& w, std::span<const double> b, Mat* gw,
                      std::vector<double>* gb) {
        double f = ce_pass(w, b, x, labels, gw, gb);
        if (ridge != 0.0) {
            f += 0.5 * ridge * squared_norm(w);
            if (gw) {
                for (std::size_t i = 0; i < gw->size(); ++i) {
                    gw->v[i] += ridge * w.v[i];
                }
            }
        }
        return f;
    };

    Mat xw = out.weights;
    std::vector<double> xb = out.bias;
    Mat yw = xw;
    std::vector<double> yb = xb;
    Mat xw_prev, gw;
    std::vector<double> xb_prev, gb;
    double t = 1.0;
    double lips = 1.0;
    double f_last = smooth(xw, xb, nullptr, nullptr) + l1 * l1_norm(xw);
    double f_at_check = f_last;

    out.weights = xw;
    out.bias = xb;
    double residual = kkt_residual(out, x, labels, lambda, alpha_mix);
    bool converged = residual <= opts.tol;

    for (int iter = 0; iter < opts.max_iter && !converged; ++iter) {
        double fy = smooth(yw, yb, &gw, &gb);

        Mat cand_w(c, k);
        std::vector<double> cand_b(c);
        double f_cand = 0.0;
        lips = std::max(lips * 0.9, 1e-12);
        while (true) {
            const double step = 1.0 / lips;
            const double thresh = l1 * step;
            for (std::size_t i = 0; i < cand_w.size(); ++i) {
                double v = yw.v[i] - step * gw.v[i];
                if (v > thresh) {
                    cand_w.v[i] = v - thresh;
                } else if (v < -thresh) {
                    cand_w.v[i] = v + thresh;
                } else {
                    cand_w.v[i] = 0.0;
                }
            }
            for (std::size_t i = 0; i < c; ++i) cand_b[i] = yb[i] - step * gb[i];

            double lin = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < cand_w.size(); ++i) {
                double dw = cand_w.v[i] - yw.v[i];
                lin += gw.v[i] * dw;
                sq += dw * dw;
            }
            for (std::size_t i = 0; i < c; ++i) {
                double db = cand_b[i] - yb[i];
                lin += gb[i] * db;
                sq += db * db;
            }
            double quad = fy + lin + 0.5 * lips * sq;
            f_cand = smooth(cand_w, cand_b, nullptr, nullptr);
            if (f_cand <= quad + 1e-12 * std::abs(quad)) break;
            lips *= 2.0;
            if (lips > 1e15) {
                throw NumericalError("line search failed: Lipschitz estimate " +
                                     std::to_string(lips));
            }
        }

        xw_prev = std::move(xw);
        xb_prev = std::move(xb);
        xw = std::move(cand_w);
        xb = std::move(cand_b);
        double f_now = f_cand + l1 * l1_norm(xw);

        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (f_now > f_last) {
            // Momentum restart keeps the method monotone in practice.
            t_next = 1.0;
            yw = xw;
            yb = xb;
        } else {
            double mom = (t - 1.0) / t_next;
            yw = xw;
            yb = xb;
            for (std::size_t i = 0; i < yw.size(); ++i) {
                yw.v[i] += mom * (xw.v[i] - xw_prev.v[i]);
            }
            for (std::size_t i = 0; i < c; ++i) {
                yb[i] += mom * (xb[i] - xb_prev[i]);
            }
        }
        t = t_next;
        f_last = f_now;

        if ((iter + 1) % 10 == 0 || iter + 1 == opts.max_iter) {
            out.weights = xw;
            out.bias = xb;
            residual = kkt_residual(out, x, labels, lambda, alpha_mix);
            if (residual <= opts.tol) {
                converged = true;
            } else if (lambda == 0.0 &&
                       std::abs(f_at_check - f_now) <=
                           1e-12 * std::max(1.0, std::abs(f_now))) {
                // Separable data at lambda = 0 has no finite minimizer; a
                // stalled objective is as converged as it gets.
                converged = true;
            }
            f_at_check = f_now;
        }
    }

    if (!converged && lambda > 0.0) {
        throw NumericalError("elastic-net solver stalled at KKT residual " +
                             std::to_string(residual) + " (tol " +
                             std::to_string(opts.tol) + ", lambda " +
                             std::to_string(lambda) + ")");
    }
    out.weights = std::move(xw);
    out.bias = std::move(xb);
    out.nec = nec(out.weights);
    return out;
}

RegularizationPath solve_path(const Mat& x_train, std::span<const int> y_train,
                              const Mat& x_val, std::span<const int> y_val,
                              std::size_t c, double alpha_mix, int num_points,
                              double min_ratio, const SolveOptions& opts) {
    if (num_points < 2) throw ConfigError("num_points", "need at least 2");
    if (!(min_ratio > 0.0 && min_ratio < 1.0)) {
        throw ConfigError("min_ratio", "must be in (0,1)");
    }
    RegularizationPath path;
    path.lambda_max = compute_lambda_max(x_train, y_train, c, alpha_mix);
    path.lambda_min = path.lambda_max * min_ratio;
    path.num_points = num_points;
    path.decay = std::pow(min_ratio, 1.0 / static_cast<double>(num_points - 1));

    const SparseFinalLayer* warm = nullptr;
    for (int tpt = 0; tpt < num_points; ++tpt) {
        double lambda = path.lambda_max *
                        std::pow(min_ratio,
                                 static_cast<double>(tpt) /
                                     static_cast<double>(num_points - 1));
        RegularizationPath::Entry e;
        e.lambda = lambda;
        e.layer = solve_elastic_net(x_train, y_train, c, lambda, alpha_mix, warm,
                                    opts);
        e.nec = e.layer.nec;
        if (x_val.rows > 0) {
            std::size_t correct = 0;
            for (std::size_t i = 0; i < x_val.rows; ++i) {
                correct += local_argmax(e.layer, x_val.row(i)) == y_val[i];
            }
            e.val_accuracy =
                static_cast<double>(correct) / static_cast<double>(x_val.rows);
        } else {
            e.val_accuracy = std::numeric_limits<double>::quiet_NaN();
        }
        path.entries.push_back(std::move(e));
        warm = &path.entries.back().layer;
    }
    return path;
}

double nec(const Mat& w) {
    if (w.rows == 0) return 0.0;
    std::size_t nonzero = 0;
    for (double v : w.v) nonzero += v != 0.0;
    return static_cast<double>(nonzero) / static_cast<double>(w.rows);
}

SparseFinalLayer prune_to_nec(const SparseFinalLayer& layer, double target_nec) {
    const std::size_t c = layer.weights.rows;
    const auto keep = static_cast<std::size_t>(
        std::llround(target_nec * static_cast<double>(c)));
    std::vector<std::tuple<double, std::size_t, std::size_t>> nonzeros;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < layer.weights.cols; ++j) {
            double v = layer.weights(i, j);
            if (v != 0.0) nonzeros.emplace_back(std::abs(v), i, j);
        }
    }
    if (nonzeros.size() < keep) {
        throw DataError("cannot prune upward: layer has " +
                        std::to_string(nonzeros.size()) + " nonzeros, target " +
                        std::to_string(keep));
    }
    std::sort(nonzeros.begin(), nonzeros.end());
    SparseFinalLayer out = layer;
    for (std::size_t r = 0; r < nonzeros.size() - keep; ++r) {
        out.weights(std::get<1>(nonzeros[r]), std::get<2>(nonzeros[r])) = 0.0;
    }
    out.nec = nec(out.weights);
    return out;
}

SparseFinalLayer select_for_nec(const RegularizationPath& path, double target_nec) {
    if (path.entries.empty()) throw DataError("empty regularization path");
    const RegularizationPath::Entry* best = nullptr;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& e : path.entries) {
        if (e.nec < target_nec) continue;
        double dist = e.nec - target_nec;
        if (dist < best_dist) {
            best_dist = dist;
            best = &e;
        }
    }
    if (!best) {
        for (const auto& e : path.entries) {
            double dist = std::abs(e.nec - target_nec);
            if (dist < best_dist) {
                best_dist = dist;
                best = &e;
            }
        }
    }
    if (best->nec > target_nec) return prune_to_nec(best->layer, target_nec);
    return best->layer;
}

// ---------------------------------------------------------------------------
// path file
// ---------------------------------------------------------------------------

namespace {

constexpr char kPathMagic[4] = {'V', 'L', 'G', 'P'};

void write_f64_le(std::ostream& out, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * 8));
    } else {
        for (double d : values) {
            auto u = std::bit_cast<std::uint64_t>(d);
            char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(u >> (8 * i));
            out.write(b, 8);
        }
    }
}

std::vector<double> read_f64_le(std::istream& in, std::size_t count,
                                const std::string& what) {
    std::vector<double> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * 8));
    if (static_cast<std::size_t>(in.gcount()) != count * 8) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          "truncated payload while reading " + what);
    }
    if constexpr (std::endian::native != std::endian::little) {
        for (double& d : values) {
            auto u = std::bit_cast<std::uint64_t>(d);
            std::uint64_t r = 0;
            for (int i = 0; i < 8; ++i) r |= ((u >> (8 * i)) & 0xff) << (8 * (7 - i));
            d = std::bit_cast<double>(r);
        }
    }
    return values;
}

}  // namespace

void write_path(const RegularizationPath& path, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for writing: " + file.string());
    }
    std::size_t c = path.entries.empty() ? 0 : path.entries[0].layer.weights.rows;
    std::size_t k = path.entries.empty() ? 0 : path.entries[0].layer.weights.cols;
    for (const auto& e : path.entries) {
        if (e.layer.weights.rows != c || e.layer.weights.cols != k ||
            e.layer.bias.size() != c) {
            throw FormatError(FormatError::Code::DimMismatch,
                              "path entries have inconsistent shapes");
        }
    }
    out.write(kPathMagic, 4);
    out.put(1);
    json j;
    j["c"] = c;
    j["k"] = k;
    j["lambda_max"] = path.lambda_max;
    j["lambda_min"] = path.lambda_min;
    j["num_points"] = path.num_points;
    j["decay"] = path.decay;
    json entries = json::array();
    for (const auto& e : path.entries) {
        json je;
        je["lambda"] = e.lambda;
        je["nec"] = e.nec;
        if (std::isnan(e.val_accuracy)) {
            je["val_accuracy"] = nullptr;
        } else {
            je["val_accuracy"] = e.val_accuracy;
        }
        je["alpha_mix"] = e.layer.alpha_mix;
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    out << j.dump() << '\n';
    for (const auto& e : path.entries) {
        write_f64_le(out, e.layer.weights.v);
        write_f64_le(out, e.layer.bias);
    }
    if (!out) {
        throw FormatError(FormatError::Code::Io, "write failed: " + file.string());
    }
}

RegularizationPath read_path(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw FormatError(FormatError::Code::Io,
                          "cannot open for reading: " + file.string());
    }
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kPathMagic, 4) != 0) {
        throw FormatError(FormatError::Code::BadMagic,
                          "bad magic in " + file.string());
    }
    int version = in.get();
    if (version != 1) {
        throw FormatError(FormatError::Code::BadVersion,
                          "unsupported path version " + std::to_string(version));
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw FormatError(FormatError::Code::TruncatedPayload,
                          "file ends before path header");
    }
    json j = json::parse(header, nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          "path header is not valid JSON");
    }
    RegularizationPath path;
    std::size_t c = 0, k = 0;
    try {
        c = j.at("c").get<std::size_t>();
        k = j.at("k").get<std::size_t>();
        path.lambda_max = j.at("lambda_max").get<double>();
        path.lambda_min = j.at("lambda_min").get<double>();
        path.num_points = j.at("num_points").get<int>();
        path.decay = j.at("decay").get<double>();
        for (const auto& je : j.at("entries")) {
            RegularizationPath::Entry e;
            e.lambda = je.at("lambda").get<double>();
            e.nec = je.at("nec").get<double>();
            const auto& va = je.at("val_accuracy");
            e.val_accuracy = va.is_null()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : va.get<double>();
            e.layer.lambda = e.lambda;
            e.layer.nec = e.nec;
            e.layer.alpha_mix = je.at("alpha_mix").get<double>();
            path.entries.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        throw FormatError(FormatError::Code::MalformedHeader,
                          std::string("path header: ") + ex.what());
    }
    for (auto& e : path.entries) {
        e.layer.weights = Mat(c, k);
        auto wv = read_f64_le(in, c * k, "path weights");
        e.layer.weights.v = std::move(wv);
        e.layer.bias = read_f64_le(in, c, "path bias");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(FormatError::Code::TrailingBytes,
                          "unexpected bytes after payload: " + file.string());
    }
    return path;
}

}  // namespace vlgcbm
