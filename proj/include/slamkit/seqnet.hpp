#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slamkit/features.hpp"
#include "slamkit/predictions.hpp"
#include "slamkit/rng.hpp"

namespace slamkit::seqnet {

struct NetConfig {
    int embed_dim = 15;
    int recurrent_units = 64;  // per direction
    int ff_units = 64;
    int subseq_len = 256;
    int batch_size = 32;
    int epochs = 10;
    double learning_rate = 1e-3;
    double dropout_p = 0.1;
    double l2_coeff = 1e-6;
    double dev_eval_fraction = 0.7;
    std::size_t cross_buckets = std::size_t{1} << 17;
    bool bidirectional = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Categorical inputs of one step, in table order.
enum class Input : std::uint8_t {
    token,
    pos,
    format,
    exercise_key,
    dep_label,
    dep_token,
    user,
    client,
    session,
    countries,
};
inline constexpr std::size_t kNumInputs = 10;

/// days and time as (z, +-|z|^0.5, +-z^2) each, then a time-missing flag.
inline constexpr std::size_t kNumNumeric = 7;

/// Correct-input values: the label itself or 2 for unknown.
inline constexpr int kUnknown = 2;

struct NumericStats {
    double days_mean = 0.0;
    double days_sd = 1.0;
    double time_mean = 0.0;
    double time_sd = 1.0;
};

/// Means and standard deviations over the given (train) rows. A constant
/// column keeps sd 0, which preprocesses to z = 0 with a warning.
NumericStats numeric_stats(const std::vector<FeatureRow>& train_rows);

/// (z, sign(z)|z|^0.5, sign(z)z^2) with z standardized and clamped to
/// [-100, 100]; missing input gives zeros.
std::array<double, 3> preprocess_numeric(std::optional<double> x, double mean, double sd);

struct Step {
    std::array<std::int32_t, kNumInputs> ids{};
    int correct = kUnknown;
    std::array<double, kNumNumeric> num{};
    int target = -1;  // 0/1, or -1 when not scored
    bool mask = false;
};
using Sequence = std::vector<Step>;

/// Featurizes one row. With reveal_label the row's label becomes the correct
/// input; otherwise it is unknown.
Step make_step(const FeatureRow& r, const NumericStats& stats, bool reveal_label);

/// Training window over rows [begin, end): the first floor(n/2) steps show
/// their labels, the rest are scored with correct set to unknown.
Sequence make_window(std::span<const FeatureRow> rows, const NumericStats& stats);

/// Window boundaries tiling [0, n). n <= len gives one window; otherwise a
/// start offset o drawn uniformly from [0, len) yields [0, o) (when o > 0),
/// full windows of len, and the remainder.
std::vector<std::pair<std::size_t, std::size_t>> window_bounds(std::size_t n, std::size_t len, Rng& rng);

using TableSizes = std::array<std::size_t, kNumInputs>;
TableSizes table_sizes(const Vocab& v);

struct TensorSpec {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
};

struct LossGrad {
    double loss = 0.0;  // masked mean log loss plus the L2 term
    std::vector<double> grad;
    std::size_t n_masked = 0;
};

/// Parameters live in one flat vector; tensors() names the slices
/// (column-major, embedding tables store one column per id).
class Net {
public:
    Net() = default;
    Net(const NetConfig& cfg, const TableSizes& sizes);

    const NetConfig& config() const noexcept { return cfg_; }
    const TableSizes& sizes() const noexcept { return sizes_; }
    const std::vector<TensorSpec>& tensors() const noexcept { return tensors_; }
    const TensorSpec& tensor(const std::string& name) const;
    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }
    std::size_t num_params() const noexcept { return params_.size(); }

    /// Glorot-uniform matrices, small normal embeddings, zero scalar tables
    /// and biases except forget gates at 1.
    void init(std::uint64_t seed);

    /// Mistake probabilities with dropout off. Throws std::out_of_range for an
    /// id outside its table and std::runtime_error naming the layer on a
    /// non-finite activation.
    std::vector<double> forward(const Sequence& seq) const;

    /// Dropout is applied when rng is non-null. Throws std::invalid_argument
    /// when no step is masked.
    LossGrad loss_and_grads(std::span<const Sequence> batch, Rng* dropout_rng) const;

private:
    NetConfig cfg_;
    TableSizes sizes_{};
    std::vector<TensorSpec> tensors_;
    std::vector<double> params_;
};

struct Model {
    NetConfig config;
    NumericStats stats;
    std::uint64_t vocab_hash = 0;
    Net net;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> dev_auc;
};

struct TrainNetResult {
    Model model;  // best checkpoint
    std::vector<EpochLog> log;
    int best_epoch = 0;
    std::optional<double> best_auc;
    bool diverged = false;
    std::string message;
};

/// Adam over shuffled batches of training windows drawn from each user's
/// train rows; after every epoch AUC is measured on the dev rows of a fixed
/// seeded subset of users and the best epoch is kept. Rows must come from
/// engineer() over one dataset.
TrainNetResult train_net(const std::vector<FeatureRow>& rows, const Vocab& v, const NetConfig& cfg);

/// Scores every row of the target partition. Each user's sequence holds the
/// rows up to and including that partition; earlier labeled rows show their
/// labels, the target rows are unknown.
PredictionSet predict_net(const Model& m, const std::vector<FeatureRow>& rows, Partition target);

/// Per-user scoring for a subset of users (indices into the user order of rows).
PredictionSet predict_net(const Model& m, const std::vector<FeatureRow>& rows, Partition target,
                          std::span<const std::size_t> users);

void save_model(const Model& m, std::ostream& out);
Model load_model(std::istream& in);

}  // namespace slamkit::seqnet
