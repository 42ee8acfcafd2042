#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "vlgcbm/sparse_final.hpp"
#include "vlgcbm/synth.hpp"

using namespace vlgcbm;
using testutil::TempDir;

namespace {

struct Instance {
    Mat x;
    std::vector<int> labels;
    std::size_t c;
};

Instance random_instance(int n, int k, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Instance inst;
    inst.x = testutil::random_mat(n, k, rng);
    inst.c = c;
    inst.labels.resize(n);
    for (auto& y : inst.labels) y = static_cast<int>(rng() % c);
    // Guarantee every class appears.
    for (int j = 0; j < c; ++j) inst.labels[j] = j;
    return inst;
}

// Clustered instance that a linear model separates at lambda = 0.
Instance separable_instance(int n, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    Instance inst;
    inst.c = c;
    inst.x = Mat::zeros(n, c);
    inst.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        int y = i % c;
        inst.labels[i] = y;
        for (int j = 0; j < c; ++j) inst.x(i, j) = (j == y ? 2.0 : 0.0) + noise(rng);
    }
    return inst;
}

double naive_ce(const Mat& w, const std::vector<double>& b, const Mat& x,
                const std::vector<int>& labels) {
    double sum = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        std::vector<double> l(w.rows);
        for (std::size_t j = 0; j < w.rows; ++j) {
            l[j] = b[j] + dot(w.row(j), x.row(i));
        }
        double z = 0.0;
        for (double v : l) z += std::exp(v);
        sum += std::log(z) - l[labels[i]];
    }
    return sum / x.rows;
}

double manual_kkt(const SparseFinalLayer& layer, const Mat& x,
                  const std::vector<int>& labels, double lambda, double alpha) {
    Mat gw;
    std::vector<double> gb;
    cross_entropy_grad(layer.weights, layer.bias, x, labels, gw, gb);
    double worst = 0.0;
    for (std::size_t i = 0; i < gw.v.size(); ++i) {
        double w = layer.weights.v[i], g = gw.v[i];
        double r = w != 0.0
                       ? std::abs(g + lambda * (1 - alpha) * w +
                                  lambda * alpha * (w > 0 ? 1.0 : -1.0))
                       : std::max(0.0, std::abs(g) - lambda * alpha);
        worst = std::max(worst, r);
    }
    for (double g : gb) worst = std::max(worst, std::abs(g));
    return worst;
}

std::set<std::size_t> support(const Mat& w) {
    std::set<std::size_t> s;
    for (std::size_t i = 0; i < w.v.size(); ++i) {
        if (w.v[i] != 0.0) s.insert(i);
    }
    return s;
}

}  // namespace

TEST_SUITE("sparse_final") {

TEST_CASE("cross entropy of the zero model is log C") {
    auto inst = random_instance(40, 5, 3, 2);
    Mat w = Mat::zeros(3, 5);
    std::vector<double> b(3, 0.0);
    CHECK(cross_entropy(w, b, inst.x, inst.labels) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy matches a direct softmax evaluation") {
    auto inst = random_instance(25, 4, 3, 3);
    std::mt19937_64 rng(4);
    Mat w = testutil::random_mat(3, 4, rng);
    std::vector<double> b = {0.3, -0.1, 0.7};
    CHECK(cross_entropy(w, b, inst.x, inst.labels) ==
          doctest::Approx(naive_ce(w, b, inst.x, inst.labels)).epsilon(1e-12));
}

TEST_CASE("cross entropy gradients match central differences") {
    auto inst = random_instance(12, 3, 3, 5);
    std::mt19937_64 rng(6);
    Mat w = testutil::random_mat(3, 3, rng, 0.7);
    std::vector<double> b = {0.1, 0.0, -0.2};
    Mat gw;
    std::vector<double> gb;
    cross_entropy_grad(w, b, inst.x, inst.labels, gw, gb);
    const double h = 1e-6;
    for (std::size_t i = 0; i < w.v.size(); ++i) {
        Mat wp = w, wm = w;
        wp.v[i] += h;
        wm.v[i] -= h;
        double fd = (cross_entropy(wp, b, inst.x, inst.labels) -
                     cross_entropy(wm, b, inst.x, inst.labels)) / (2 * h);
        CHECK(gw.v[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        auto bp = b, bm = b;
        bp[j] += h;
        bm[j] -= h;
        double fd = (cross_entropy(w, bp, inst.x, inst.labels) -
                     cross_entropy(w, bm, inst.x, inst.labels)) / (2 * h);
        CHECK(gb[j] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("objective adds the elastic-net penalty to the cross entropy") {
    auto inst = random_instance(15, 4, 2, 7);
    std::mt19937_64 rng(8);
    SparseFinalLayer layer;
    layer.weights = testutil::random_mat(2, 4, rng);
    layer.bias = {0.2, -0.2};
    double lambda = 0.3, alpha = 0.8;
    double l1 = 0.0, sq = 0.0;
    for (double w : layer.weights.v) {
        l1 += std::abs(w);
        sq += w * w;
    }
    double want = naive_ce(layer.weights, layer.bias, inst.x, inst.labels) +
                  lambda * ((1 - alpha) * 0.5 * sq + alpha * l1);
    CHECK(objective(layer, inst.x, inst.labels, lambda, alpha) ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("class prior bias reproduces empirical frequencies") {
    std::vector<int> labels = {0, 0, 1, 2};
    auto b = class_prior_bias(labels, 3);
    CHECK(b[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));
    CHECK(b[1] == doctest::Approx(std::log(0.25)).epsilon(1e-14));
    CHECK(b[2] == doctest::Approx(std::log(0.25)).epsilon(1e-14));

    auto b4 = class_prior_bias(labels, 4);  // class 3 unseen
    CHECK(b4[3] == doctest::Approx(std::log(1.0 / 16.0)).epsilon(1e-14));
}

TEST_CASE("lambda_max is the exact threshold for the all-zero solution") {
    auto inst = random_instance(60, 6, 3, 9);
    double lmax = compute_lambda_max(inst.x, inst.labels, inst.c, 1.0);
    REQUIRE(lmax > 0.0);

    auto at_max = solve_elastic_net(inst.x, inst.labels, inst.c, lmax, 1.0);
    for (double w : at_max.weights.v) CHECK(w == 0.0);
    CHECK(at_max.bias == class_prior_bias(inst.labels, inst.c));

    auto above = solve_elastic_net(inst.x, inst.labels, inst.c, 1.7 * lmax, 1.0);
    for (double w : above.weights.v) CHECK(w == 0.0);

    auto below = solve_elastic_net(inst.x, inst.labels, inst.c, 0.98 * lmax, 1.0);
    CHECK(!support(below.weights).empty());
}

TEST_CASE("lambda_max bracket under a grid scan") {
    auto inst = random_instance(50, 5, 3, 10);
    double lmax = compute_lambda_max(inst.x, inst.labels, inst.c, 0.9);
    double lam = 1.2 * lmax;
    double first_nonzero = -1.0;
    for (int step = 0; step < 12; ++step, lam *= 0.95) {
        auto sol = solve_elastic_net(inst.x, inst.labels, inst.c, lam, 0.9);
        bool zero = support(sol.weights).empty();
        if (lam >= lmax) {
            CHECK(zero);
        } else if (!zero && first_nonzero < 0.0) {
            first_nonzero = lam;
        }
    }
    // The very first grid point below lambda_max is already nonzero.
    REQUIRE(first_nonzero > 0.0);
    CHECK(first_nonzero / lmax > 0.95);
    CHECK(first_nonzero < lmax);
}

TEST_CASE("lambda_max scales linearly with the features") {
    auto inst = random_instance(40, 4, 3, 11);
    double l1 = compute_lambda_max(inst.x, inst.labels, inst.c, 1.0);
    Mat scaled = inst.x;
    for (auto& v : scaled.v) v *= 10.0;
    double l10 = compute_lambda_max(scaled, inst.labels, inst.c, 1.0);
    CHECK(l10 == doctest::Approx(10.0 * l1).epsilon(1e-12));

    // Dividing by alpha: halving alpha doubles lambda_max.
    double lhalf = compute_lambda_max(inst.x, inst.labels, inst.c, 0.5);
    CHECK(lhalf == doctest::Approx(2.0 * l1).epsilon(1e-12));
}

TEST_CASE("solver satisfies the optimality conditions it reports") {
    for (std::uint64_t seed : {21, 22, 23}) {
        auto inst = random_instance(80, 7, 4, seed);
        double lmax = compute_lambda_max(inst.x, inst.labels, inst.c, 0.95);
        for (double frac : {0.5, 0.1, 0.02}) {
            double lambda = frac * lmax;
            auto sol = solve_elastic_net(inst.x, inst.labels, inst.c, lambda, 0.95);
            double reported = kkt_residual(sol, inst.x, inst.labels, lambda, 0.95);
            double manual = manual_kkt(sol, inst.x, inst.labels, lambda, 0.95);
            CHECK(reported == doctest::Approx(manual).epsilon(1e-10));
            CHECK(reported <= 1e-7);
        }
    }
}

TEST_CASE("solver agrees with a coordinate-descent oracle") {
    // Same objective, different algorithm: objectives match to 1e-6
    // relative and the supports are identical.
    for (std::uint64_t seed : {31, 32, 33, 34, 35, 36}) {
        auto inst = random_instance(50, 5, 3, seed);
        double alpha = seed % 2 ? 1.0 : 0.9;
        double lmax = compute_lambda_max(inst.x, inst.labels, inst.c, alpha);
        double lambda = 0.15 * lmax;
        auto fast = solve_elastic_net(inst.x, inst.labels, inst.c, lambda, alpha);
        auto slow = coordinate_descent_oracle(inst.x, inst.labels, inst.c,
                                              lambda, alpha);
        double fo = objective(fast, inst.x, inst.labels, lambda, alpha);
        double so = objective(slow, inst.x, inst.labels, lambda, alpha);
        CHECK(std::abs(fo - so) <= 1e-6 * std::max(1.0, std::abs(so)));
        CHECK(support(fast.weights) == support(slow.weights));
    }
}

TEST_CASE("unpenalized separable fit reaches full training accuracy") {
    auto inst = separable_instance(60, 3, 41);
    auto sol = solve_elastic_net(inst.x, inst.labels, inst.c, 0.0, 1.0);
    int correct = 0;
    for (std::size_t i = 0; i < inst.x.rows; ++i) {
        int best = 0;
        double best_v = -1e300;
        for (std::size_t j = 0; j < inst.c; ++j) {
            double v = sol.bias[j] + dot(sol.weights.row(j), inst.x.row(i));
            if (v > best_v) {
                best_v = v;
                best = static_cast<int>(j);
            }
        }
        correct += best == inst.labels[i];
    }
    CHECK(correct == 60);
}

TEST_CASE("a class with no training samples is rejected") {
    auto inst = random_instance(30, 4, 3, 43);
    for (auto& y : inst.labels) y = y % 2;  // class 2 vanishes
    CHECK_THROWS_AS(solve_elastic_net(inst.x, inst.labels, 3, 0.01, 1.0),
                    DataError);
}

TEST_CASE("nec counts nonzeros per class") {
    Mat w = Mat::zeros(2, 3);
    CHECK(nec(w) == 0.0);
    w(0, 0) = 1.0;
    w(0, 2) = -2.0;
    w(1, 1) = 0.5;
    w(1, 2) = 1e-300;  // tiny but not zero
    CHECK(nec(w) == 2.0);
}

TEST_CASE("nec matches a scan oracle on random sparse matrices") {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        int c = 1 + static_cast<int>(rng() % 6);
        int k = 1 + static_cast<int>(rng() % 12);
        Mat w = Mat::zeros(c, k);
        for (auto& v : w.v) {
            if (rng() % 3 == 0) v = u(rng);
        }
        std::size_t nz = 0;
        for (double v : w.v) nz += v != 0.0;
        CHECK(nec(w) == doctest::Approx(double(nz) / c).epsilon(1e-15));
    }
}

TEST_CASE("pruning keeps the largest magnitudes") {
    SparseFinalLayer layer;
    layer.weights = Mat::zeros(2, 3);
    layer.weights(0, 0) = 3.0;
    layer.weights(0, 1) = -0.1;
    layer.weights(0, 2) = 2.0;
    layer.weights(1, 0) = -4.0;
    layer.weights(1, 1) = 0.2;
    layer.weights(1, 2) = 1.0;
    layer.bias = {0.0, 0.0};
    auto pruned = prune_to_nec(layer, 2.0);  // 6 nonzeros -> 4
    CHECK(nec(pruned.weights) == 2.0);
    CHECK(pruned.weights(0, 0) == 3.0);
    CHECK(pruned.weights(0, 1) == 0.0);
    CHECK(pruned.weights(0, 2) == 2.0);
    CHECK(pruned.weights(1, 0) == -4.0);
    CHECK(pruned.weights(1, 1) == 0.0);
    CHECK(pruned.weights(1, 2) == 1.0);
    CHECK(pruned.nec == 2.0);
}

TEST_CASE("pruning ties resolve by row then column") {
    SparseFinalLayer layer;
    layer.weights = Mat::zeros(2, 2);
    layer.weights(0, 0) = 0.5;
    layer.weights(0, 1) = -0.5;
    layer.weights(1, 0) = 0.5;
    layer.weights(1, 1) = 0.3;
    layer.bias = {0.0, 0.0};
    // Keep 2: drop 0.3 first, then the tied 0.5 at (0,0).
    auto pruned = prune_to_nec(layer, 1.0);
    CHECK(pruned.weights(0, 0) == 0.0);
    CHECK(pruned.weights(0, 1) == -0.5);
    CHECK(pruned.weights(1, 0) == 0.5);
    CHECK(pruned.weights(1, 1) == 0.0);
}

TEST_CASE("pruning matches a sort oracle and never prunes upward") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int rep = 0; rep < 50; ++rep) {
        int c = 2 + static_cast<int>(rng() % 4);
        int k = 4 + static_cast<int>(rng() % 8);
        SparseFinalLayer layer;
        layer.weights = Mat::zeros(c, k);
        layer.bias.assign(c, 0.0);
        for (auto& v : layer.weights.v) {
            if (rng() % 2) v = u(rng);
        }
        double cur = nec(layer.weights);
        if (cur < 1.0) continue;
        double target = 0.5 * cur;
        auto pruned = prune_to_nec(layer, target);
        auto keep = static_cast<std::size_t>(std::llround(target * c));
        std::size_t nz = 0;
        for (double v : pruned.weights.v) nz += v != 0.0;
        CHECK(nz == std::min(keep, support(layer.weights).size()));
        // Survivors dominate the removed magnitudes.
        double min_kept = 1e300, max_cut = 0.0;
        for (std::size_t i = 0; i < layer.weights.v.size(); ++i) {
            double before = std::abs(layer.weights.v[i]);
            if (before == 0.0) continue;
            if (pruned.weights.v[i] != 0.0) min_kept = std::min(min_kept, before);
            else max_cut = std::max(max_cut, before);
        }
        CHECK(max_cut <= min_kept);

        CHECK_THROWS_AS(prune_to_nec(pruned, cur + 1.0), DataError);
    }
}

TEST_CASE("path selection honors the target from above") {
    auto make_entry = [](double lambda, std::initializer_list<double> w) {
        RegularizationPath::Entry e;
        e.lambda = lambda;
        e.layer.weights = Mat::zeros(1, 8);
        std::size_t i = 0;
        for (double v : w) e.layer.weights.v[i++] = v;
        e.layer.bias = {0.0};
        e.layer.lambda = lambda;
        e.nec = e.layer.nec = nec(e.layer.weights);
        return e;
    };
    RegularizationPath path;
    path.entries.push_back(make_entry(1.0, {}));
    path.entries.push_back(make_entry(0.5, {3.0, 2.0, 1.0}));
    path.entries.push_back(make_entry(0.25, {3.0, 2.0, 1.0, 0.5, 0.4, 0.3, 0.2}));
    path.entries.push_back(make_entry(0.1, {3, 2, 1, .5, .4, .3, .2, .1}));

    auto five = select_for_nec(path, 5.0);
    CHECK(nec(five.weights) == 5.0);  // the 7-nonzero entry pruned down
    CHECK(five.weights.v[0] == 3.0);
    CHECK(five.weights.v[5] == 0.0);

    auto exact = select_for_nec(path, 3.0);
    CHECK(nec(exact.weights) == 3.0);
    CHECK(exact.lambda == 0.5);

    auto unreachable = select_for_nec(path, 30.0);
    CHECK(nec(unreachable.weights) == 8.0);  // closest overall, unpruned

    auto zero = select_for_nec(path, 0.0);
    CHECK(support(zero.weights).empty());
}

TEST_CASE("path grid is log-even and warm starts stay optimal") {
    auto inst = random_instance(90, 6, 3, 61);
    auto val = random_instance(30, 6, 3, 62);
    auto path = solve_path(inst.x, inst.labels, val.x, val.labels, 3, 1.0, 12,
                           1.0 / 100.0);
    REQUIRE(path.entries.size() == 12);
    CHECK(path.num_points == 12);
    CHECK(path.lambda_max == compute_lambda_max(inst.x, inst.labels, 3, 1.0));
    for (int t = 0; t < 12; ++t) {
        double want = path.lambda_max * std::pow(1.0 / 100.0, t / 11.0);
        CHECK(path.entries[t].lambda == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(path.decay == doctest::Approx(std::pow(0.01, 1.0 / 11.0)).epsilon(1e-12));
    CHECK(path.entries[0].nec == 0.0);
    CHECK(path.entries.back().nec >= path.entries[0].nec);
    for (const auto& e : path.entries) {
        CHECK(kkt_residual(e.layer, inst.x, inst.labels, e.lambda, 1.0) <= 1e-7);
        CHECK(e.val_accuracy >= 0.0);
        CHECK(e.val_accuracy <= 1.0);
    }
}

TEST_CASE("path solve is deterministic") {
    auto inst = random_instance(70, 5, 3, 71);
    auto val = random_instance(20, 5, 3, 72);
    auto a = solve_path(inst.x, inst.labels, val.x, val.labels, 3, 0.99, 8, 0.05);
    auto b = solve_path(inst.x, inst.labels, val.x, val.labels, 3, 0.99, 8, 0.05);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t t = 0; t < a.entries.size(); ++t) {
        CHECK(a.entries[t].layer.weights.v == b.entries[t].layer.weights.v);
        CHECK(a.entries[t].layer.bias == b.entries[t].layer.bias);
    }
}

TEST_CASE("path file round trips bit exactly") {
    TempDir tmp;
    auto inst = random_instance(40, 4, 3, 81);
    auto val = random_instance(12, 4, 3, 82);
    auto path = solve_path(inst.x, inst.labels, val.x, val.labels, 3, 1.0, 6, 0.1);
    write_path(path, tmp.file("p.vlgp"));
    auto back = read_path(tmp.file("p.vlgp"));
    CHECK(back.lambda_max == path.lambda_max);
    CHECK(back.lambda_min == path.lambda_min);
    CHECK(back.num_points == path.num_points);
    CHECK(back.decay == path.decay);
    REQUIRE(back.entries.size() == path.entries.size());
    for (std::size_t t = 0; t < path.entries.size(); ++t) {
        CHECK(back.entries[t].lambda == path.entries[t].lambda);
        CHECK(back.entries[t].nec == path.entries[t].nec);
        CHECK(back.entries[t].layer.weights.v == path.entries[t].layer.weights.v);
        CHECK(back.entries[t].layer.bias == path.entries[t].layer.bias);
        CHECK(back.entries[t].layer.alpha_mix == path.entries[t].layer.alpha_mix);
    }

    write_path(back, tmp.file("p2.vlgp"));
    CHECK(testutil::read_all_bytes(tmp.file("p.vlgp")) ==
          testutil::read_all_bytes(tmp.file("p2.vlgp")));

    testutil::truncate_file(tmp.file("p.vlgp"), 3);
    CHECK_THROWS_AS(read_path(tmp.file("p.vlgp")), FormatError);
}

}  // TEST_SUITE
