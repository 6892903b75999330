#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "slamkit/gbdt.hpp"
#include "slamkit/seqnet.hpp"
#include "slamkit/synth.hpp"

namespace slamkit {

struct DataPaths {
    std::filesystem::path train;
    std::filesystem::path dev;
    std::filesystem::path dev_key;
    std::filesystem::path test;
    std::filesystem::path test_key;

    bool given() const noexcept { return !train.empty(); }
};

struct GbdtSection {
    std::string preset = "desk";  // desk, fr_en, es_en, en_es
    gbdt::Params params = gbdt::desk_params();
    bool use_user = true;
    bool use_morph = true;
    bool final_refit = false;  // refit on train+dev with the selected tree count
};

struct AnalysisSection {
    int decay_points = 20;
    std::vector<double> fractions;  // overrides decay_points when set
    double rarity_share = 0.04;
    std::vector<std::size_t> rarity_cuts;  // every count when empty
    std::size_t top_k = 10;
};

struct RunConfig {
    std::uint64_t seed = 20180601;
    std::string tag = "synth";
    std::filesystem::path out_dir = "out";
    DataPaths data;
    SynthConfig synth = standard_synth_preset();
    GbdtSection gbdt;
    seqnet::NetConfig rnn;
    double ensemble_step = 0.01;
    AnalysisSection analysis;

    /// Module seeds are derived from the root: synth, gbdt and rnn each get
    /// derive_seed(root, "<module>").
    void set_seed(std::uint64_t root);
    std::vector<double> decay_fractions() const;
};

/// TOML document; relative paths resolve against base_dir. Unknown sections
/// or keys, wrong value types and invalid module settings throw
/// std::invalid_argument.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& file);

/// Every setting, resolved, as TOML.
std::string dump_config(const RunConfig& c);

}  // namespace slamkit
