#include <doctest.h>

#include <cmath>
#include <sstream>

#include "slamkit/analysis.hpp"
#include "slamkit/error.hpp"

using namespace slamkit;

TEST_CASE("decay grid") {
    const auto f = default_fractions(4);
    CHECK(f == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    CHECK(default_fractions().size() == 20);
}

TEST_CASE("decay curve boundary and constant cases") {
    auto old = set_warning_sink([](const std::string&) {});
    const std::vector<int> y{1};
    const std::vector<double> s{0.8}, t{1.0}, fr{0.5, 1.0};
    const auto c = decay_curve(y, s, t, fr);
    set_warning_sink(old);
    CHECK(c.skipped == std::vector<double>{0.5});
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].n == 1);
    CHECK(c.points[0].log_loss == doctest::Approx(-std::log(0.8)));

    const std::vector<int> y2{1, 0, 1, 0};
    const std::vector<double> half(4, 0.5), t2{0.1, 0.3, 0.6, 0.9};
    const auto flat = decay_curve(y2, half, t2, default_fractions(10));
    for (const auto& p : flat.points) CHECK(p.log_loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    const std::vector<double> s3{0.9, 0.1, 0.2, 0.5};
    const auto cum = decay_curve(y2, s3, t2, std::vector<double>{0.5, 1.0});
    REQUIRE(cum.points.size() == 2);
    CHECK(cum.points[0].n == 2);
    CHECK(cum.points[0].log_loss == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK(cum.points[1].log_loss ==
          doctest::Approx((-2 * std::log(0.9) - std::log(0.2) - std::log(0.5)) / 4).epsilon(1e-12));
    CHECK_THROWS_AS(decay_curve(y2, s3, t2, std::vector<double>{1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("horizon-relative time") {
    std::vector<FeatureRow> rows(5);
    const double days[] = {1.0, 3.0, 5.0, 7.0, 4.0};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].days = days[i];
        rows[i].user_index = i < 4 ? 0 : 1;
    }
    rows[0].partition = Partition::train;
    rows[0].label = Label::correct;
    rows[1].partition = Partition::train;
    rows[1].label = Label::mistake;
    rows[2].partition = Partition::dev;
    rows[3].partition = Partition::dev;
    rows[4].partition = Partition::dev;  // user without history
    const auto t = horizon_time_norm(rows, Partition::dev);
    REQUIRE(t.size() == 3);
    CHECK(t[0] == doctest::Approx(0.5));
    CHECK(t[1] == 1.0);
    CHECK(t[2] == 1.0);
}

TEST_CASE("rarity order and shares") {
    const std::vector<std::int64_t> freq{0, 5, 1, 5, 2};
    CHECK(rarity_order(freq) == std::vector<std::int32_t>{0, 2, 4, 1, 3});

    // equal frequencies and uniform predictions: shares coincide
    const std::vector<std::int64_t> even{0, 3, 3, 3};
    std::vector<int> y;
    std::vector<double> s;
    std::vector<std::int32_t> tok;
    for (int id = 1; id <= 3; ++id)
        for (int k = 0; k < 3; ++k) {
            tok.push_back(id);
            y.push_back(k % 2);
            s.push_back(0.5);
        }
    const auto c = rarity_curve(y, s, tok, even);
    REQUIRE(c.points.size() == 4);
    for (const auto& p : c.points) CHECK(p.loss_share == doctest::Approx(p.instance_share).epsilon(1e-14));
    CHECK(c.points.back().loss_share == doctest::Approx(1.0));
    CHECK(c.points.back().instance_share == 1.0);
    CHECK(c.points[0].n == 0);
    CHECK(c.points[1].instance_share == doctest::Approx(1.0 / 3.0));

    const auto at = rarity_at_instance_share(c, 0.5);
    CHECK(at.x == 3);
}

TEST_CASE("rare tokens with worse predictions carry more loss") {
    const std::vector<std::int64_t> freq{0, 10, 1};
    const std::vector<int> y{1, 1, 1, 1};
    const std::vector<double> s{0.9, 0.9, 0.9, 0.3};
    const std::vector<std::int32_t> tok{1, 1, 1, 2};
    const std::vector<std::size_t> cuts{2};
    const auto c = rarity_curve(y, s, tok, freq, cuts);
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].instance_share == 0.25);
    CHECK(c.points[0].loss_share ==
          doctest::Approx(-std::log(0.3) / (-3 * std::log(0.9) - std::log(0.3))).epsilon(1e-12));
    CHECK(c.points[0].loss_share > c.points[0].instance_share);
}

TEST_CASE("importance report") {
    gbdt::Forest f;
    f.columns = {{"token", ColumnKind::categorical}, {"user", ColumnKind::categorical}, {"days", ColumnKind::numeric}};
    gbdt::Tree t;
    gbdt::Node a, b;
    a.feature = 0;
    a.gain = 3.0;
    a.left = 1;
    a.right = 2;
    b.feature = 1;
    b.gain = 1.0;
    b.left = 3;
    b.right = 4;
    t.nodes = {a, b, gbdt::Node{}, gbdt::Node{}, gbdt::Node{}};
    f.trees.push_back(t);
    f.gain_by_feature = {3.0, 1.0, 0.0};
    const auto all = importance_report(f, 10);
    REQUIRE(all.size() == 2);
    CHECK(all[0].feature == "token");
    CHECK(all[0].share == 0.75);
    CHECK(all[1].share == 0.25);
    CHECK(importance_report(f, 1).size() == 1);
    std::ostringstream out;
    write_importance_text(all, out);
    CHECK(out.str().find("token") != std::string::npos);
    CHECK(importance_json(all).find("\"user\"") != std::string::npos);
}
