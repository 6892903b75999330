#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slamkit/dataset.hpp"
#include "slamkit/predictions.hpp"

namespace slamkit {

/// Generative student model. A token instance is a mistake with probability
///   sigmoid(difficulty(token) - skill(user) - lr(user) * log(1 + exposures)
///           + drift * days / n_days)
/// where exposures counts the user's earlier occurrences of the token.
struct SynthConfig {
    std::size_t n_users = 200;
    double n_days = 30.0;
    std::size_t exercises_per_user = 40;
    std::size_t vocab_size = 400;
    double token_frequency_exponent = 1.0;  // Zipf shape
    double user_skill_sd = 1.0;
    double token_difficulty_sd = 1.0;
    double token_difficulty_mean = -1.0;
    double learning_rate_mean = 0.3;
    double nonstationarity_drift = 0.0;
    std::size_t min_sentence_len = 3;
    std::size_t max_sentence_len = 7;
    std::uint64_t seed = 1;
    std::string language_pair = "synth";

    /// Throws std::invalid_argument describing the first bad field.
    void validate() const;
};

struct UserLatent {
    std::string user;
    double skill = 0.0;
    double learning_rate = 0.0;
};

struct TokenLatent {
    std::string surface;  // lowercase
    double difficulty = 0.0;
};

struct LatentState {
    std::vector<UserLatent> users;
    std::vector<TokenLatent> tokens;  // by Zipf rank, most frequent first
    /// Final (user, token) exposure counts after generation.
    std::map<std::pair<std::string, std::string>, int> exposures;
    double drift = 0.0;
    double n_days = 30.0;
};

struct SynthOutput {
    Dataset dataset;
    LatentState latent;
};

/// Deterministic in (config, seed): per-user streams are derived from the
/// seed and the user index, token latents from a separate named stream.
SynthOutput generate(const SynthConfig& cfg);

/// The generative probability of every instance, in dataset order. Throws
/// std::invalid_argument for users or tokens the latent state does not cover.
PredictionSet oracle_predictions(const Dataset& d, const LatentState& s);

/// One JSON document; read_latent(write_latent(s)) reproduces s exactly.
void write_latent(const LatentState& s, const SynthConfig& cfg, std::ostream& out);
LatentState read_latent(std::istream& in);

/// The reference problem used by the acceptance suite and the demo config:
/// 200 users, 40 exercises each, about 40k token instances.
SynthConfig standard_synth_preset();

}  // namespace slamkit
