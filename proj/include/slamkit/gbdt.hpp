#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slamkit/predictions.hpp"
#include "slamkit/table.hpp"

namespace slamkit::gbdt {

struct Params {
    int num_leaves = 31;
    int n_estimators = 400;
    double learning_rate = 0.05;
    double feature_fraction = 1.0;
    int early_stopping_round = 50;
    int max_bins = 255;
    int min_data_in_leaf = 20;
    double lambda_l2 = 0.0;
    double min_gain = 0.0;
    // categorical regularization; 0, 0, 1 and a large threshold disable it
    double cat_smooth = 10.0;      // categories need this many rows; added to h when sorting
    double cat_l2 = 10.0;          // extra L2 in categorical split gains
    int min_data_per_group = 100;  // rows per category group on each side
    int max_cat_threshold = 32;    // categories searched from each end of the order
    std::uint64_t seed = 0;

    void validate() const;
};

/// Small-data defaults: 31 leaves, 400 trees, learning rate 0.05.
Params desk_params();

/// Published per-dataset settings for fr_en, es_en and en_es. Other fields
/// keep their defaults. Throws std::invalid_argument for other tags.
Params preset_params(std::string_view dataset_tag);

/// Quantile bins of one numeric column. Value v falls in bin
/// lower_bound(bounds, v); NaN falls in the dedicated missing bin.
struct BinMap {
    std::vector<double> bounds;  // strictly increasing upper bounds

    std::size_t num_value_bins() const noexcept { return bounds.size() + 1; }
    std::size_t missing_bin() const noexcept { return bounds.size() + 1; }
    /// Histogram width: value bins plus the missing bin.
    std::size_t width() const noexcept { return bounds.size() + 2; }
    std::uint32_t bin(double v) const noexcept;
};

/// At most max_bins value bins cut at train quantiles (midpoints between
/// adjacent distinct values). With max_bins >= #distinct values every
/// distinct value gets its own bin. Throws std::invalid_argument if max_bins < 2.
BinMap build_bins(std::span<const double> values, int max_bins);

struct GradHess {
    double g = 0.0;
    double h = 0.0;
};

/// Log-loss derivatives at a raw score: p = sigmoid(score), g = p - y, h = p(1-p).
GradHess grad_hess(int label, double score) noexcept;
std::vector<GradHess> grad_hess(std::span<const int> labels, std::span<const double> scores);

struct BinStats {
    double g = 0.0;
    double h = 0.0;
    std::int64_t count = 0;

    BinStats& operator+=(const BinStats& o) noexcept {
        g += o.g;
        h += o.h;
        count += o.count;
        return *this;
    }
    BinStats& operator-=(const BinStats& o) noexcept {
        g -= o.g;
        h -= o.h;
        count -= o.count;
        return *this;
    }
};

/// Per-bin sums of one feature within one node. Numeric layout: value bins
/// 0..B-1 followed by the missing bin; categorical layout: one bin per id.
struct FeatureHistogram {
    int feature = 0;
    ColumnKind kind = ColumnKind::numeric;
    std::vector<BinStats> bins;
};

enum class SplitKind : std::uint8_t { numeric, categorical };

struct Split {
    int feature = -1;
    SplitKind kind = SplitKind::numeric;
    /// numeric: rows with value bin <= threshold_bin go left.
    /// categorical: number of gradient-sorted categories sent left.
    int threshold_bin = 0;
    bool missing_left = false;
    std::vector<std::int32_t> left_categories;  // ascending
    double gain = 0.0;
    BinStats left;
    BinStats right;
};

/// G^2/(H+lambda) halved score difference of a two-way partition.
double split_gain(const BinStats& left, const BinStats& right, double lambda) noexcept;

/// Best admissible split over the given feature histograms: numeric cuts at
/// every bin boundary with the missing bin tried on both sides; categorical
/// cuts of the categories sorted by g/(h+lambda+cat_smooth), taking up to
/// max_cat_threshold categories from either end. Respects min_data_in_leaf
/// and min_gain. Ties keep the lowest feature index, then the lowest
/// threshold. Returns nullopt when nothing beats zero gain.
std::optional<Split> best_split(std::span<const FeatureHistogram> hist, const Params& p);

struct Node {
    int feature = -1;  // -1 for leaves
    SplitKind kind = SplitKind::numeric;
    int threshold_bin = 0;
    double threshold = 0.0;  // numeric: value <= threshold goes left
    bool missing_left = false;
    std::vector<std::int32_t> categories;  // categorical: ids that go left
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output, learning-rate scaled
    double gain = 0.0;
    std::int64_t count = 0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<Node> nodes;  // nodes[0] is the root

    int num_leaves() const noexcept;
    int leaf_index(std::span<const double> row) const noexcept;
    double predict(std::span<const double> row) const noexcept {
        return nodes[static_cast<std::size_t>(leaf_index(row))].value;
    }
};

struct Forest {
    Params params;
    std::vector<ColumnSpec> columns;
    std::vector<BinMap> bin_maps;  // one per column; empty for categorical columns
    double base_score = 0.0;
    std::vector<Tree> trees;
    std::vector<double> gain_by_feature;  // one per column
    std::uint64_t vocab_hash = 0;
    int best_iteration = 0;

    double raw_score(std::span<const double> row) const noexcept;
    double predict_proba(std::span<const double> row) const noexcept;
};

struct TrainLog {
    std::vector<double> train_loss;  // after each iteration
    std::vector<double> valid_auc;   // empty without a validation set
    int best_iteration = 0;
    bool stopped_early = false;
};

struct TrainResult {
    Forest forest;
    TrainLog log;
};

/// Gradient boosting on binary log loss. Trees are grown leaf-wise (always
/// splitting the frontier leaf with the largest gain) up to num_leaves, on a
/// feature_fraction sample of columns drawn per tree from the seed. With a
/// labeled validation table the forest is truncated to the iteration with
/// the best validation AUC, stopping after early_stopping_round rounds
/// without improvement.
TrainResult train(const FeatureMatrix& train_x, std::span<const int> train_y,
                  const FeatureMatrix* valid_x, std::span<const int> valid_y, const Params& p);

/// Throws std::invalid_argument when the table's columns differ from the model's.
std::vector<double> predict_proba(const Forest& f, const FeatureMatrix& x);
PredictionSet predict(const Forest& f, const FeatureMatrix& x, std::span<const std::string> ids);

/// (column name, total gain) for every column used in a split, descending by
/// gain, ties by column index.
std::vector<std::pair<std::string, double>> feature_importance(const Forest& f);

void save_forest(const Forest& f, std::ostream& out);
Forest load_forest(std::istream& in);

}  // namespace slamkit::gbdt
