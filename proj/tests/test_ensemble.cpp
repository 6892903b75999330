#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "slamkit/ensemble.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/rng.hpp"

using namespace slamkit;

namespace {

struct Set {
    PredictionSet a, b;
    std::unordered_map<std::string, int> labels;
};

Set noisy_pair(std::uint64_t seed, double noise_a, double noise_b) {
    Rng rng(seed);
    Set s;
    for (int i = 0; i < 300; ++i) {
        const std::string id = "i" + std::to_string(i);
        const double z = rng.normal();
        s.labels[id] = rng.bernoulli(1.0 / (1.0 + std::exp(-2.0 * z))) ? 1 : 0;
        auto squash = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        s.a.add(id, squash(z + noise_a * rng.normal()));
        s.b.add(id, squash(z + noise_b * rng.normal()));
    }
    return s;
}

double auc_of(const PredictionSet& p, const std::unordered_map<std::string, int>& labels) {
    std::vector<int> y;
    std::vector<double> s;
    for (const auto& e : p.entries()) {
        y.push_back(labels.at(e.id));
        s.push_back(e.p);
    }
    return auc(y, s);
}

}  // namespace

TEST_CASE("blend endpoints are exact") {
    const auto s = noisy_pair(1, 0.5, 0.5);
    const auto one = blend(s.a, s.b, 1.0);
    const auto zero = blend(s.a, s.b, 0.0);
    for (const auto& e : s.a.entries()) CHECK(one.at(e.id) == e.p);
    for (const auto& e : s.b.entries()) CHECK(zero.at(e.id) == e.p);

    PredictionSet a, b;
    a.add("x", 0.2);
    b.add("x", 0.6);
    CHECK(blend(a, b, 0.5).at("x") == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(blend(a, b, 1.5), std::invalid_argument);
    PredictionSet c;
    c.add("y", 0.1);
    CHECK_THROWS_AS(blend(a, c, 0.5), std::invalid_argument);
}

TEST_CASE("weight grid includes both endpoints and dominates") {
    for (std::uint64_t seed = 2; seed < 12; ++seed) {
        const auto s = noisy_pair(seed, 0.6, 0.9);
        const auto r = search_weight(s.a, s.b, s.labels, 0.01);
        REQUIRE(r.grid.size() == 101);
        CHECK(r.grid.front().first == 0.0);
        CHECK(r.grid.back().first == 1.0);
        CHECK(r.grid.front().second == auc_of(s.b, s.labels));
        CHECK(r.grid.back().second == auc_of(s.a, s.labels));
        CHECK(r.best_auc >= std::max(r.grid.front().second, r.grid.back().second));
        CHECK(auc_of(blend(s.a, s.b, r.best_w), s.labels) == r.best_auc);
    }
}

TEST_CASE("identical inputs pick the middle weight") {
    const auto s = noisy_pair(3, 0.5, 0.5);
    const auto r = search_weight(s.a, s.a, s.labels, 0.05);
    CHECK(r.best_w == 0.5);
    for (const auto& [w, a] : r.grid) CHECK(a == r.best_auc);
}

TEST_CASE("pure noise partner gets no weight") {
    auto s = noisy_pair(4, 0.0, 0.0);
    Rng rng(99);
    PredictionSet noise;
    for (const auto& e : s.b.entries()) noise.add(e.id, rng.uniform());
    const auto r = search_weight(s.a, noise, s.labels, 0.01);
    CHECK(r.best_w == 1.0);
    const auto csv = weight_grid_csv(r);
    CHECK(csv.rfind("w,auc\n", 0) == 0);
}
