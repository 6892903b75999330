#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slamkit/config.hpp"
#include "slamkit/dataset.hpp"

namespace slamkit::pipeline {

/// Files a command wrote, in order, and a one-paragraph summary.
struct Outputs {
    std::vector<std::filesystem::path> files;
    std::string summary;
};

/// SLAM files of the generated or configured dataset.
struct DataFiles {
    std::filesystem::path train, dev, dev_key, test, test_key;
};
DataFiles data_files(const RunConfig& c);

/// Parses the configured train/dev/test files into one dataset and validates it.
Dataset load_data(const RunConfig& c);

/// Generated SLAM files, label keys, latent state and oracle predictions.
Outputs synth(const RunConfig& c);

/// Validates the data and writes the engineered feature table and a summary.
Outputs ingest(const RunConfig& c);

/// Model file, dev/test predictions, dev metrics, training log, importance.
Outputs train_gbdt(const RunConfig& c);

/// Checkpoint, dev/test predictions, dev metrics, epoch log. Throws
/// std::runtime_error after writing them if training diverged.
Outputs train_rnn(const RunConfig& c);

struct EnsembleInputs {
    std::filesystem::path a_dev, a_test;  // GBDT side
    std::filesystem::path b_dev, b_test;  // network side
};
EnsembleInputs default_ensemble_inputs(const RunConfig& c);

/// Weight grid CSV, selected weight, blended dev and test predictions.
Outputs ensemble(const RunConfig& c, const EnsembleInputs& in);

struct EvalInputs {
    std::filesystem::path predictions;
    Partition partition = Partition::dev;
    std::optional<std::filesystem::path> forest;  // importance table when given
};
EvalInputs default_eval_inputs(const RunConfig& c);

/// Metrics JSON for a prediction file against the partition's labels.
Outputs evaluate(const RunConfig& c, const EvalInputs& in);

/// Decay and rarity CSVs, a JSON digest and the importance table.
Outputs analyze(const RunConfig& c, const EvalInputs& in);

}  // namespace slamkit::pipeline
