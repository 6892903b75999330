#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "slamkit/error.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/rng.hpp"

using namespace slamkit;

TEST_CASE("AUC hand cases") {
    CHECK(auc(std::vector<int>{0, 1}, std::vector<double>{0.1, 0.9}) == 1.0);
    CHECK(auc(std::vector<int>{0, 1}, std::vector<double>{0.5, 0.5}) == 0.5);
    CHECK(auc(std::vector<int>{1, 0}, std::vector<double>{0.1, 0.9}) == 0.0);
    CHECK_THROWS_AS(auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.9}), UndefinedMetric);
}

TEST_CASE("AUC equals the pairwise count, ties included") {
    Rng rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 2 + rng.below(60);
        std::vector<int> y(n);
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
            s[i] = static_cast<double>(rng.below(6)) / 5.0;  // heavy ties
        }
        y[0] = 1;
        y[1] = 0;
        CHECK(auc(y, s) == oracle::pairwise_auc(y, s));
    }
}

TEST_CASE("F1 hand cases") {
    CHECK(f1(std::vector<int>{1, 0, 1}, std::vector<double>{0.9, 0.1, 0.8}) == 1.0);
    CHECK(f1(std::vector<int>{1, 1, 0}, std::vector<double>{0.1, 0.2, 0.3}) == 0.0);
    CHECK(f1(std::vector<int>{1, 1, 0}, std::vector<double>{0.9, 0.4, 0.6}) == 0.5);
    CHECK(f1(std::vector<int>{0, 0}, std::vector<double>{0.1, 0.2}) == 0.0);
    const auto t = best_f1_threshold(std::vector<int>{1, 1, 0}, std::vector<double>{0.9, 0.4, 0.6});
    CHECK(t.f1 == doctest::Approx(0.8));
    CHECK(t.threshold == 0.4);
}

TEST_CASE("log loss hand cases") {
    CHECK(log_loss(std::vector<int>{1}, std::vector<double>{1.0}) == doctest::Approx(1e-15).epsilon(1e-3));
    CHECK(std::fabs(log_loss(std::vector<int>{1, 0}, std::vector<double>{0.5, 0.5}) - std::log(2.0)) <= 1e-12);
    CHECK(std::fabs(log_loss(std::vector<int>{1, 0}, std::vector<double>{0.8, 0.4}) -
                    (-std::log(0.8) - std::log(0.6)) / 2.0) <= 1e-12);
    CHECK(log_loss(std::vector<int>{0}, std::vector<double>{1.0}) == doctest::Approx(-std::log(1e-15)).epsilon(1e-4));
    CHECK_THROWS_AS(log_loss(std::vector<int>{}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("Pearson correlation") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<double> b(a.size()), c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        b[i] = 1.0 - a[i];
        c[i] = std::sin(a[i]);
    }
    CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pearson(a, b) == doctest::Approx(-1.0).epsilon(1e-15));
    double ma = 0, mc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / 10.0;
        mc += c[i] / 10.0;
    }
    double sab = 0, saa = 0, scc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (c[i] - mc);
        saa += (a[i] - ma) * (a[i] - ma);
        scc += (c[i] - mc) * (c[i] - mc);
    }
    CHECK(std::fabs(pearson(a, c) - sab / std::sqrt(saa * scc)) <= 1e-12);
    const std::vector<double> flat(10, 2.0);
    CHECK_THROWS_AS(pearson(a, flat), UndefinedMetric);
}

TEST_CASE("report for a single-class slice notes the missing AUC") {
    LabeledScores ls{{1, 1}, {0.2, 0.7}};
    const auto r = evaluate(ls);
    CHECK_FALSE(r.auc.has_value());
    CHECK_FALSE(r.auc_note.empty());
    CHECK(r.n == 2);
    CHECK(to_json(r).find("\"auc\": null") != std::string::npos);
}
