// slamkit command-line entry point.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slamkit/config.hpp"
#include "slamkit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace slamkit;

int main(int argc, char** argv) {
    CLI::App app{"Student mistake prediction: synthetic data, GBDT and recurrent models, ensembling, analysis"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "root seed (overrides the config)");
    app.add_option("--out", out_dir, "output directory (overrides the config)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with its oracle");
    auto* ingest = app.add_subcommand("ingest", "validate data and write the feature table");
    auto* train_gbdt = app.add_subcommand("train-gbdt", "train the gradient boosted trees");
    auto* train_rnn = app.add_subcommand("train-rnn", "train the recurrent network");

    auto* ens = app.add_subcommand("ensemble", "search the blend weight on dev and blend test");
    std::string a_dev, a_test, b_dev, b_test;
    ens->add_option("--gbdt-dev", a_dev, "GBDT dev predictions");
    ens->add_option("--gbdt-test", a_test, "GBDT test predictions");
    ens->add_option("--rnn-dev", b_dev, "network dev predictions");
    ens->add_option("--rnn-test", b_test, "network test predictions");

    std::string preds, partition = "dev", forest;
    auto add_eval_opts = [&](CLI::App* sub) {
        sub->add_option("--preds", preds, "prediction file")->check(CLI::ExistingFile);
        sub->add_option("--partition", partition, "partition whose labels score the predictions")
            ->check(CLI::IsMember({"dev", "test"}));
    };
    auto* evaluate = app.add_subcommand("evaluate", "metrics for a prediction file");
    add_eval_opts(evaluate);
    auto* analyze = app.add_subcommand("analyze", "decay, rarity and importance reports");
    add_eval_opts(analyze);
    analyze->add_option("--forest", forest, "GBDT model for the importance table")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (config_path.empty()) cfg.set_seed(cfg.seed);
        if (seed) cfg.set_seed(*seed);
        if (!out_dir.empty()) cfg.out_dir = out_dir;

        auto eval_inputs = [&] {
            auto in = pipeline::default_eval_inputs(cfg);
            if (!preds.empty()) in.predictions = preds;
            in.partition = partition == "test" ? Partition::test : Partition::dev;
            if (!forest.empty()) in.forest = fs::path(forest);
            return in;
        };

        pipeline::Outputs out;
        if (*synth) {
            out = pipeline::synth(cfg);
        } else if (*ingest) {
            out = pipeline::ingest(cfg);
        } else if (*train_gbdt) {
            out = pipeline::train_gbdt(cfg);
        } else if (*train_rnn) {
            out = pipeline::train_rnn(cfg);
        } else if (*ens) {
            auto in = pipeline::default_ensemble_inputs(cfg);
            if (!a_dev.empty()) in.a_dev = a_dev;
            if (!a_test.empty()) in.a_test = a_test;
            if (!b_dev.empty()) in.b_dev = b_dev;
            if (!b_test.empty()) in.b_test = b_test;
            out = pipeline::ensemble(cfg, in);
        } else if (*evaluate) {
            out = pipeline::evaluate(cfg, eval_inputs());
        } else if (*analyze) {
            out = pipeline::analyze(cfg, eval_inputs());
        }
        std::cout << out.summary << '\n';
        for (const auto& f : out.files) std::cout << "  wrote " << f.string() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
