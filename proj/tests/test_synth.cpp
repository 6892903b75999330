#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "slamkit/dataset.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/synth.hpp"

using namespace slamkit;

namespace {

SynthConfig small(std::uint64_t seed) {
    SynthConfig c;
    c.n_users = 20;
    c.exercises_per_user = 15;
    c.vocab_size = 60;
    c.nonstationarity_drift = 1.0;
    c.seed = seed;
    return c;
}

std::string text_of(const Dataset& d) {
    std::ostringstream out;
    write_dataset(d, out);
    return out.str();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("same seed, same files; different seed, different files") {
    const auto a = generate(small(3));
    const auto b = generate(small(3));
    const auto c = generate(small(4));
    CHECK(text_of(a.dataset) == text_of(b.dataset));
    CHECK(text_of(a.dataset) != text_of(c.dataset));
    std::ostringstream la, lb;
    write_latent(a.latent, small(3), la);
    write_latent(b.latent, small(3), lb);
    CHECK(la.str() == lb.str());
}

TEST_CASE("generated files parse and validate cleanly") {
    const auto out = generate(small(9));
    std::istringstream in(text_of(out.dataset));
    const auto back = parse_dataset(in);
    CHECK(back.num_tokens() == out.dataset.num_tokens());
    CHECK_NOTHROW(validate(back));
    CHECK_NOTHROW(validate(split_by_user_time(back, 0.1, 0.1)));
}

TEST_CASE("symmetric single user gives coin flips") {
    SynthConfig c;
    c.n_users = 1;
    c.exercises_per_user = 1;
    c.user_skill_sd = 0.0;
    c.token_difficulty_sd = 0.0;
    c.token_difficulty_mean = 0.0;
    c.learning_rate_mean = 0.0;
    c.seed = 77;
    const auto out = generate(c);
    for (const auto& e : oracle_predictions(out.dataset, out.latent).entries()) CHECK(e.p == 0.5);
    CHECK(text_of(generate(c).dataset) == text_of(out.dataset));
}

TEST_CASE("oracle evaluates the logistic model") {
    std::istringstream in(
        "# user:u countries:US days:0 client:web session:lesson format:listen time:2\n"
        "i1 easy NOUN _ ROOT 0 0\n"
        "i2 hard NOUN _ ROOT 0 1\n");
    const auto d = parse_dataset(in);
    LatentState s;
    s.users.push_back({"u", 0.0, 0.0});
    s.tokens.push_back({"easy", 1.0});
    s.tokens.push_back({"hard", -1.0});
    const auto p = oracle_predictions(d, s);
    CHECK(p.at("i1") == doctest::Approx(0.7310585786).epsilon(1e-9));
    CHECK(p.at("i2") == doctest::Approx(0.2689414214).epsilon(1e-9));

    s.users[0].user = "v";
    CHECK_THROWS_AS(oracle_predictions(d, s), std::invalid_argument);
}

TEST_CASE("oracle counts earlier exposures and drift") {
    std::istringstream in(
        "# user:u countries:US days:0 client:web session:lesson format:listen time:2\n"
        "i1 word NOUN _ ROOT 0 0\n\n"
        "# user:u countries:US days:15 client:web session:lesson format:listen time:2\n"
        "i2 word NOUN _ ROOT 0 1\n");
    const auto d = parse_dataset(in);
    LatentState s;
    s.users.push_back({"u", 0.2, 0.5});
    s.tokens.push_back({"word", 0.3});
    s.drift = 2.0;
    s.n_days = 30.0;
    const auto p = oracle_predictions(d, s);
    CHECK(p.at("i1") == doctest::Approx(sigmoid(0.3 - 0.2)).epsilon(1e-12));
    CHECK(p.at("i2") == doctest::Approx(sigmoid(0.3 - 0.2 - 0.5 * std::log(2.0) + 2.0 * 0.5)).epsilon(1e-12));
}

TEST_CASE("latent sidecar round trip") {
    const auto out = generate(small(5));
    std::ostringstream a;
    write_latent(out.latent, small(5), a);
    std::istringstream in(a.str());
    const auto back = read_latent(in);
    std::ostringstream b;
    write_latent(back, small(5), b);
    CHECK(a.str() == b.str());
    const auto p1 = oracle_predictions(out.dataset, out.latent);
    const auto p2 = oracle_predictions(out.dataset, back);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1.entries()[i].p == p2.entries()[i].p);
}

TEST_CASE("labels follow the oracle probabilities") {
    auto c = small(11);
    c.n_users = 200;
    const auto out = generate(c);
    const auto p = oracle_predictions(out.dataset, out.latent);
    const auto ls = align_labels(p, out.dataset);
    double mean_p = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < ls.labels.size(); ++i) {
        mean_p += ls.scores[i];
        mean_y += ls.labels[i];
    }
    const double n = static_cast<double>(ls.labels.size());
    mean_p /= n;
    mean_y /= n;
    // binomial standard error is below 0.004 here
    CHECK(std::fabs(mean_p - mean_y) < 0.015);
    CHECK(auc(ls.labels, ls.scores) > 0.65);
}

TEST_CASE("practice lowers the mistake rate") {
    SynthConfig c;
    c.n_users = 1000;
    c.exercises_per_user = 12;
    c.vocab_size = 5;
    c.learning_rate_mean = 0.5;
    c.nonstationarity_drift = 0.0;
    c.seed = 21;
    const auto out = generate(c);
    std::array<double, 2> mistakes{}, seen{};
    for (const auto& u : out.dataset.users) {
        std::map<std::string, int> exposures;
        for (const auto& e : u.exercises)
            for (const auto& t : e.tokens) {
                const int k = exposures[lowercase(t.token)]++;
                const int slot = k == 0 ? 0 : k == 9 ? 1 : -1;
                if (slot < 0) continue;
                seen[slot] += 1.0;
                mistakes[slot] += t.label == Label::mistake;
            }
    }
    REQUIRE(seen[1] > 1000.0);
    CHECK(mistakes[1] / seen[1] <= mistakes[0] / seen[0]);
}

TEST_CASE("drift raises late mistake rates") {
    SynthConfig c;
    c.n_users = 1000;
    c.exercises_per_user = 20;
    c.learning_rate_mean = 0.0;
    c.nonstationarity_drift = 2.0;
    c.seed = 22;
    const auto out = generate(c);
    std::array<double, 2> mistakes{}, seen{};
    for (const auto& u : out.dataset.users)
        for (const auto& e : u.exercises) {
            const int slot = e.meta.days < 0.1 * c.n_days ? 0 : e.meta.days >= 0.9 * c.n_days ? 1 : -1;
            if (slot < 0) continue;
            for (const auto& t : e.tokens) {
                seen[slot] += 1.0;
                mistakes[slot] += t.label == Label::mistake;
            }
        }
    REQUIRE(seen[0] > 500.0);
    REQUIRE(seen[1] > 500.0);
    CHECK(mistakes[1] / seen[1] > mistakes[0] / seen[0]);
}

TEST_CASE("invalid configurations are refused") {
    auto c = small(1);
    c.n_users = 0;
    CHECK_THROWS_AS(generate(c), std::invalid_argument);
    c = small(1);
    c.nonstationarity_drift = -1.0;
    CHECK_THROWS_AS(generate(c), std::invalid_argument);
}
