#include "slamkit/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "slamkit/rng.hpp"

namespace slamkit {

namespace {

constexpr std::array kPos{"NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "CONJ"};
constexpr std::array kDepLabels{"nsubj", "dobj", "det", "amod", "advmod", "case", "cc"};
constexpr std::array kCountries{"US", "CO", "MX", "BR", "DE", "FR", "GB", "CA", "ES", "JP"};
constexpr std::array kConsonants{'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'};
constexpr std::array kVowels{'a', 'e', 'i', 'o', 'u'};

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

/// Unique pronounceable surface per rank (bijective base-70 syllables).
std::string surface_for_rank(std::size_t rank) {
    constexpr std::size_t base = kConsonants.size() * kVowels.size();
    std::string word;
    std::size_t x = rank + 1;
    while (x > 0) {
        const std::size_t digit = (x - 1) % base;
        word.insert(word.begin(), kVowels[digit % kVowels.size()]);
        word.insert(word.begin(), kConsonants[digit / kVowels.size()]);
        x = (x - 1) / base;
    }
    return word;
}

double mistake_probability(double difficulty, const UserLatent& u, int exposures, double days,
                           double drift, double n_days) noexcept {
    const double t_norm = n_days > 0.0 ? days / n_days : 0.0;
    return sigmoid(difficulty - u.skill - u.learning_rate * std::log1p(exposures) +
                   drift * t_norm);
}

double round3(double x) noexcept { return std::round(x * 1000.0) / 1000.0; }

}  // namespace

void SynthConfig::validate() const {
    if (n_users < 1) throw std::invalid_argument("synth: n_users must be >= 1");
    if (!(n_days > 0.0)) throw std::invalid_argument("synth: n_days must be positive");
    if (exercises_per_user < 1) throw std::invalid_argument("synth: exercises_per_user must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("synth: vocab_size must be >= 1");
    if (!(token_frequency_exponent >= 0.0))
        throw std::invalid_argument("synth: token_frequency_exponent must be >= 0");
    if (!(user_skill_sd >= 0.0) || !(token_difficulty_sd >= 0.0) || !(learning_rate_mean >= 0.0) ||
        !(nonstationarity_drift >= 0.0))
        throw std::invalid_argument("synth: spreads, learning rate and drift must be >= 0");
    if (min_sentence_len < 1 || max_sentence_len < min_sentence_len)
        throw std::invalid_argument("synth: need 1 <= min_sentence_len <= max_sentence_len");
}

SynthConfig standard_synth_preset() {
    SynthConfig c;
    c.n_users = 200;
    c.n_days = 30.0;
    c.exercises_per_user = 40;
    c.vocab_size = 400;
    c.token_frequency_exponent = 1.0;
    c.user_skill_sd = 1.0;
    c.token_difficulty_sd = 1.0;
    c.token_difficulty_mean = -1.0;
    c.learning_rate_mean = 0.3;
    c.nonstationarity_drift = 1.5;
    c.seed = 20180601;
    return c;
}

SynthOutput generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthOutput out;
    auto& latent = out.latent;
    latent.drift = cfg.nonstationarity_drift;
    latent.n_days = cfg.n_days;

    Rng token_rng(derive_seed(cfg.seed, "tokens"));
    std::vector<double> cdf(cfg.vocab_size);
    double total = 0.0;
    latent.tokens.reserve(cfg.vocab_size);
    for (std::size_t r = 0; r < cfg.vocab_size; ++r) {
        total += 1.0 / std::pow(static_cast<double>(r + 1), cfg.token_frequency_exponent);
        cdf[r] = total;
        latent.tokens.push_back(
            TokenLatent{surface_for_rank(r),
                        token_rng.normal(cfg.token_difficulty_mean, cfg.token_difficulty_sd)});
    }
    std::vector<std::string> token_pos(cfg.vocab_size), token_morph(cfg.vocab_size);
    for (std::size_t r = 0; r < cfg.vocab_size; ++r) {
        token_pos[r] = kPos[token_rng.below(kPos.size())];
        token_morph[r] = token_rng.bernoulli(0.5) ? "Number=Sing" : "Number=Plur";
    }

    auto& d = out.dataset;
    d.language_pair = cfg.language_pair;
    std::size_t file_order = 0;
    for (std::size_t ui = 0; ui < cfg.n_users; ++ui) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(ui)));
        UserLatent u;
        u.user = fmt::format("user{:05d}", ui);
        u.skill = rng.normal(0.0, cfg.user_skill_sd);
        // log-normal with the configured mean
        constexpr double lr_spread = 0.5;
        u.learning_rate = cfg.learning_rate_mean *
                          std::exp(lr_spread * rng.normal() - 0.5 * lr_spread * lr_spread);
        const auto client = static_cast<Client>(rng.below(3));
        std::vector<std::string> countries{kCountries[rng.below(kCountries.size())]};
        if (rng.bernoulli(0.1)) {
            const std::string second = kCountries[rng.below(kCountries.size())];
            if (second != countries.front()) countries.push_back(second);
        }

        // Sessions: runs of 1..8 exercises of one session type, each run
        // starting at a sorted uniform day; exercises 0.002 days apart.
        std::vector<std::size_t> lengths;
        for (std::size_t left = cfg.exercises_per_user; left > 0;) {
            const std::size_t len = std::min<std::size_t>(left, 1 + rng.below(8));
            lengths.push_back(len);
            left -= len;
        }
        std::vector<double> starts(lengths.size());
        for (auto& s : starts) s = rng.uniform(0.0, cfg.n_days * 0.995);
        std::sort(starts.begin(), starts.end());

        UserTimeline timeline{u.user, {}};
        std::unordered_map<std::size_t, int> exposures;
        double prev_days = 0.0;
        std::size_t ex_index = 0;
        for (std::size_t si = 0; si < lengths.size(); ++si) {
            const double q = rng.uniform();
            const SessionType session = q < 0.7 ? SessionType::lesson
                                        : q < 0.9 ? SessionType::practice
                                                  : SessionType::test;
            for (std::size_t k = 0; k < lengths[si]; ++k, ++ex_index) {
                Exercise ex;
                ex.meta.user = u.user;
                ex.meta.countries = countries;
                double days = std::min(cfg.n_days, round3(starts[si] + 0.002 * static_cast<double>(k)));
                days = std::max(days, prev_days);
                prev_days = days;
                ex.meta.days = days;
                ex.meta.client = client;
                ex.meta.session = session;
                ex.meta.format = static_cast<ExerciseFormat>(ex_index % 3);
                if (!rng.bernoulli(0.03))
                    ex.meta.time = static_cast<double>(3 + rng.below(ex.meta.format == ExerciseFormat::listen ? 30 : 20));
                const std::size_t len =
                    cfg.min_sentence_len + rng.below(cfg.max_sentence_len - cfg.min_sentence_len + 1);
                std::vector<std::size_t> ranks(len);
                for (auto& r : ranks) {
                    const double x = rng.uniform() * total;
                    r = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
                    r = std::min(r, cfg.vocab_size - 1);
                }
                const std::size_t root = rng.below(len);
                for (std::size_t ti = 0; ti < len; ++ti) {
                    const std::size_t r = ranks[ti];
                    TokenInstance tok;
                    tok.instance_id = fmt::format("u{}e{}t{}", ui, ex_index, ti);
                    tok.token = latent.tokens[r].surface;
                    tok.pos = token_pos[r];
                    tok.morph = {token_morph[r]};
                    tok.dep_label = ti == root ? "ROOT" : kDepLabels[rng.below(kDepLabels.size())];
                    tok.dep_head = ti == root ? 0 : static_cast<int>(root + 1);
                    int& seen = exposures[r];
                    const double p = mistake_probability(latent.tokens[r].difficulty, u, seen, days,
                                                         cfg.nonstationarity_drift, cfg.n_days);
                    tok.label = rng.uniform() < p ? Label::mistake : Label::correct;
                    ++seen;
                    ex.tokens.push_back(std::move(tok));
                }
                ex.partition = Partition::train;
                ex.file_order = file_order++;
                timeline.exercises.push_back(std::move(ex));
            }
        }
        std::vector<std::pair<std::size_t, int>> counts(exposures.begin(), exposures.end());
        for (const auto& [r, c] : counts) latent.exposures[{u.user, latent.tokens[r].surface}] = c;
        latent.users.push_back(std::move(u));
        d.users.push_back(std::move(timeline));
    }
    return out;
}

PredictionSet oracle_predictions(const Dataset& d, const LatentState& s) {
    std::unordered_map<std::string, const UserLatent*> users;
    for (const auto& u : s.users) users.emplace(u.user, &u);
    std::unordered_map<std::string, double> difficulty;
    for (const auto& t : s.tokens) difficulty.emplace(t.surface, t.difficulty);

    // Walk every timeline to compute probabilities, then emit in file order.
    std::unordered_map<std::string, double> prob;
    for (const auto& tl : d.users) {
        auto uit = users.find(tl.user);
        if (uit == users.end())
            throw std::invalid_argument("oracle: user '" + tl.user + "' not in latent state");
        std::unordered_map<std::string, int> exposures;
        for (const auto& e : tl.exercises) {
            for (const auto& t : e.tokens) {
                const std::string key = lowercase(t.token);
                auto dit = difficulty.find(key);
                if (dit == difficulty.end())
                    throw std::invalid_argument("oracle: token '" + t.token + "' not in latent state");
                int& seen = exposures[key];
                prob[t.instance_id] = mistake_probability(dit->second, *uit->second, seen,
                                                          e.meta.days, s.drift, s.n_days);
                ++seen;
            }
        }
    }
    std::vector<const Exercise*> order;
    for (const auto& tl : d.users)
        for (const auto& e : tl.exercises) order.push_back(&e);
    std::sort(order.begin(), order.end(),
              [](const Exercise* a, const Exercise* b) { return a->file_order < b->file_order; });
    PredictionSet out;
    for (const Exercise* e : order)
        for (const auto& t : e->tokens) out.add(t.instance_id, prob.at(t.instance_id));
    return out;
}

void write_latent(const LatentState& s, const SynthConfig& cfg, std::ostream& out) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["kind"] = "slamkit.latent_state";
    j["config"] = {{"n_users", cfg.n_users},
                   {"n_days", cfg.n_days},
                   {"exercises_per_user", cfg.exercises_per_user},
                   {"vocab_size", cfg.vocab_size},
                   {"token_frequency_exponent", cfg.token_frequency_exponent},
                   {"user_skill_sd", cfg.user_skill_sd},
                   {"token_difficulty_sd", cfg.token_difficulty_sd},
                   {"token_difficulty_mean", cfg.token_difficulty_mean},
                   {"learning_rate_mean", cfg.learning_rate_mean},
                   {"nonstationarity_drift", cfg.nonstationarity_drift},
                   {"min_sentence_len", cfg.min_sentence_len},
                   {"max_sentence_len", cfg.max_sentence_len},
                   {"seed", cfg.seed}};
    j["drift"] = s.drift;
    j["n_days"] = s.n_days;
    auto& users = j["users"] = nlohmann::ordered_json::array();
    for (const auto& u : s.users)
        users.push_back({{"user", u.user}, {"skill", u.skill}, {"learning_rate", u.learning_rate}});
    auto& tokens = j["tokens"] = nlohmann::ordered_json::array();
    for (const auto& t : s.tokens) tokens.push_back({{"surface", t.surface}, {"difficulty", t.difficulty}});
    auto& exp = j["exposures"] = nlohmann::ordered_json::array();
    for (const auto& [key, count] : s.exposures) exp.push_back({key.first, key.second, count});
    out << j.dump(1) << '\n';
}

LatentState read_latent(std::istream& in) {
    const auto j = nlohmann::json::parse(in);
    if (j.value("version", 0) != 1) throw std::invalid_argument("latent state: unsupported version");
    LatentState s;
    s.drift = j.at("drift").get<double>();
    s.n_days = j.at("n_days").get<double>();
    for (const auto& u : j.at("users"))
        s.users.push_back(UserLatent{u.at("user").get<std::string>(), u.at("skill").get<double>(),
                                     u.at("learning_rate").get<double>()});
    for (const auto& t : j.at("tokens"))
        s.tokens.push_back(TokenLatent{t.at("surface").get<std::string>(), t.at("difficulty").get<double>()});
    for (const auto& e : j.at("exposures"))
        s.exposures[{e.at(0).get<std::string>(), e.at(1).get<std::string>()}] = e.at(2).get<int>();
    return s;
}

}  // namespace slamkit
