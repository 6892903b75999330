#include "slamkit/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "slamkit/error.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/rng.hpp"

namespace slamkit::gbdt {

namespace {

constexpr double kGainEps = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

double score_term(double g, double h, double lambda) noexcept {
    const double d = h + lambda;
    return d > 0.0 ? g * g / d : 0.0;
}

double leaf_output(double g, double h, double lambda) noexcept {
    const double d = h + lambda;
    return d > 0.0 ? -g / d : 0.0;
}

double mean_log_loss(std::span<const int> y, std::span<const double> scores) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += softplus(y[i] ? -scores[i] : scores[i]);
    return s / static_cast<double>(y.size());
}

void check_labels(std::span<const int> y, const char* what) {
    for (int v : y)
        if (v != 0 && v != 1) throw std::invalid_argument(fmt::format("{} labels must be 0/1", what));
}

/// Training table in binned, column-major form.
struct BinnedData {
    std::vector<std::vector<std::uint32_t>> cols;
    std::vector<ColumnKind> kinds;
    std::vector<std::size_t> widths;
};

struct Leaf {
    int node = 0;
    std::vector<std::uint32_t> rows;
    std::vector<FeatureHistogram> hist;
    std::optional<Split> best;
};

class TreeGrower {
public:
    TreeGrower(const BinnedData& data, const std::vector<GradHess>& gh, const Params& p,
               std::vector<int> features)
        : data_(data), gh_(gh), p_(p), features_(std::move(features)) {}

    /// Grows one tree; `leaf_rows` receives (leaf node, rows) for score updates.
    Tree grow(std::size_t n_rows, std::vector<std::pair<int, std::vector<std::uint32_t>>>& leaf_rows) {
        Tree tree;
        tree.nodes.emplace_back();
        std::vector<Leaf> leaves;
        Leaf root;
        root.node = 0;
        root.rows.resize(n_rows);
        std::iota(root.rows.begin(), root.rows.end(), 0u);
        root.hist = build_hist(root.rows);
        root.best = p_.num_leaves > 1 ? best_split(root.hist, p_) : std::nullopt;
        leaves.push_back(std::move(root));

        while (static_cast<int>(leaves.size()) < p_.num_leaves) {
            int pick = -1;
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                if (!leaves[i].best) continue;
                if (pick < 0 || leaves[i].best->gain > leaves[static_cast<std::size_t>(pick)].best->gain ||
                    (leaves[i].best->gain == leaves[static_cast<std::size_t>(pick)].best->gain &&
                     leaves[i].node < leaves[static_cast<std::size_t>(pick)].node))
                    pick = static_cast<int>(i);
            }
            if (pick < 0) break;
            Leaf parent = std::move(leaves[static_cast<std::size_t>(pick)]);
            leaves.erase(leaves.begin() + pick);
            const Split s = parent.best.value();

            const int left_id = static_cast<int>(tree.nodes.size());
            const int right_id = left_id + 1;
            {
                Node& n = tree.nodes[static_cast<std::size_t>(parent.node)];
                n.feature = s.feature;
                n.kind = s.kind;
                n.threshold_bin = s.threshold_bin;
                n.missing_left = s.missing_left;
                n.categories = s.left_categories;
                n.gain = s.gain;
                n.left = left_id;
                n.right = right_id;
            }
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();

            Leaf left, right;
            left.node = left_id;
            right.node = right_id;
            const auto& col = data_.cols[static_cast<std::size_t>(s.feature)];
            const std::uint32_t missing = static_cast<std::uint32_t>(data_.widths[static_cast<std::size_t>(s.feature)] - 1);
            for (auto r : parent.rows) {
                const std::uint32_t b = col[r];
                bool go_left;
                if (s.kind == SplitKind::numeric) {
                    go_left = b == missing ? s.missing_left : b <= static_cast<std::uint32_t>(s.threshold_bin);
                } else {
                    go_left = std::binary_search(s.left_categories.begin(), s.left_categories.end(),
                                                 static_cast<std::int32_t>(b));
                }
                (go_left ? left.rows : right.rows).push_back(r);
            }

            Leaf& small = left.rows.size() <= right.rows.size() ? left : right;
            Leaf& large = left.rows.size() <= right.rows.size() ? right : left;
            small.hist = build_hist(small.rows);
            large.hist = std::move(parent.hist);
            for (std::size_t j = 0; j < large.hist.size(); ++j)
                for (std::size_t b = 0; b < large.hist[j].bins.size(); ++b)
                    large.hist[j].bins[b] -= small.hist[j].bins[b];

            const bool room = static_cast<int>(leaves.size()) + 2 < p_.num_leaves;
            left.best = room ? best_split(left.hist, p_) : std::nullopt;
            right.best = room ? best_split(right.hist, p_) : std::nullopt;
            leaves.push_back(std::move(left));
            leaves.push_back(std::move(right));
        }

        for (auto& leaf : leaves) {
            double g = 0.0, h = 0.0;
            for (auto r : leaf.rows) {
                g += gh_[r].g;
                h += gh_[r].h;
            }
            Node& n = tree.nodes[static_cast<std::size_t>(leaf.node)];
            n.value = p_.learning_rate * leaf_output(g, h, p_.lambda_l2);
            n.count = static_cast<std::int64_t>(leaf.rows.size());
            leaf_rows.emplace_back(leaf.node, std::move(leaf.rows));
        }
        std::sort(leaf_rows.begin(), leaf_rows.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        fill_counts(tree, 0);
        return tree;
    }

private:
    std::vector<FeatureHistogram> build_hist(const std::vector<std::uint32_t>& rows) const {
        std::vector<FeatureHistogram> hist;
        hist.reserve(features_.size());
        for (int f : features_) {
            const auto fi = static_cast<std::size_t>(f);
            FeatureHistogram h;
            h.feature = f;
            h.kind = data_.kinds[fi];
            h.bins.assign(data_.widths[fi], BinStats{});
            const auto& col = data_.cols[fi];
            for (auto r : rows) {
                auto& b = h.bins[col[r]];
                b.g += gh_[r].g;
                b.h += gh_[r].h;
                b.count += 1;
            }
            hist.push_back(std::move(h));
        }
        return hist;
    }

    static std::int64_t fill_counts(Tree& t, int node) {
        Node& n = t.nodes[static_cast<std::size_t>(node)];
        if (n.is_leaf()) return n.count;
        const auto c = fill_counts(t, n.left) + fill_counts(t, n.right);
        t.nodes[static_cast<std::size_t>(node)].count = c;
        return c;
    }

    const BinnedData& data_;
    const std::vector<GradHess>& gh_;
    const Params& p_;
    std::vector<int> features_;
};

}  // namespace

void Params::validate() const {
    if (num_leaves < 1) throw std::invalid_argument("gbdt: num_leaves must be >= 1");
    if (n_estimators < 1) throw std::invalid_argument("gbdt: n_estimators must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("gbdt: learning_rate must be >= 0");
    if (!(feature_fraction > 0.0 && feature_fraction <= 1.0))
        throw std::invalid_argument("gbdt: feature_fraction must be in (0,1]");
    if (early_stopping_round < 1) throw std::invalid_argument("gbdt: early_stopping_round must be >= 1");
    if (max_bins < 2) throw std::invalid_argument("gbdt: max_bins must be >= 2");
    if (min_data_in_leaf < 1) throw std::invalid_argument("gbdt: min_data_in_leaf must be >= 1");
    if (!(lambda_l2 >= 0.0) || !(min_gain >= 0.0))
        throw std::invalid_argument("gbdt: lambda_l2 and min_gain must be >= 0");
    if (!(cat_smooth >= 0.0) || !(cat_l2 >= 0.0))
        throw std::invalid_argument("gbdt: cat_smooth and cat_l2 must be >= 0");
    if (min_data_per_group < 1 || max_cat_threshold < 1)
        throw std::invalid_argument("gbdt: min_data_per_group and max_cat_threshold must be >= 1");
}

Params desk_params() {
    Params p;
    p.num_leaves = 31;
    p.n_estimators = 400;
    p.learning_rate = 0.05;
    p.feature_fraction = 1.0;
    p.early_stopping_round = 50;
    return p;
}

Params preset_params(std::string_view tag) {
    Params p = desk_params();
    if (tag == "fr_en") {
        p.num_leaves = 2400;
        p.n_estimators = 5744;
        p.learning_rate = 0.002;
        p.feature_fraction = 0.5;
        p.early_stopping_round = 300;
    } else if (tag == "es_en") {
        p.num_leaves = 2700;
        p.n_estimators = 2518;
        p.learning_rate = 0.005;
        p.feature_fraction = 0.45;
        p.early_stopping_round = 100;
    } else if (tag == "en_es") {
        p.num_leaves = 2400;
        p.n_estimators = 3203;
        p.learning_rate = 0.005;
        p.feature_fraction = 0.4;
        p.early_stopping_round = 100;
    } else {
        throw std::invalid_argument("no published GBDT parameters for '" + std::string(tag) + "'");
    }
    return p;
}

std::uint32_t BinMap::bin(double v) const noexcept {
    if (std::isnan(v)) return static_cast<std::uint32_t>(missing_bin());
    return static_cast<std::uint32_t>(std::lower_bound(bounds.begin(), bounds.end(), v) - bounds.begin());
}

BinMap build_bins(std::span<const double> values, int max_bins) {
    if (max_bins < 2) throw std::invalid_argument("build_bins: max_bins must be >= 2");
    std::vector<double> v;
    v.reserve(values.size());
    for (double x : values)
        if (!std::isnan(x)) v.push_back(x);
    BinMap m;
    if (v.empty()) {
        warn("build_bins: column is entirely missing");
        return m;
    }
    std::sort(v.begin(), v.end());
    std::vector<double> distinct;
    std::vector<std::size_t> counts;
    for (double x : v) {
        if (distinct.empty() || x != distinct.back()) {
            distinct.push_back(x);
            counts.push_back(1);
        } else {
            ++counts.back();
        }
    }
    auto mid = [](double a, double b) { return a + (b - a) / 2.0; };
    if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
            m.bounds.push_back(mid(distinct[i], distinct[i + 1]));
    } else {
        const double n = static_cast<double>(v.size());
        const double per_bin = n / static_cast<double>(max_bins);
        int k = 1;
        std::size_t cum = 0;
        for (std::size_t i = 0; i + 1 < distinct.size() && k < max_bins; ++i) {
            cum += counts[i];
            if (static_cast<double>(cum) >= per_bin * k) {
                m.bounds.push_back(mid(distinct[i], distinct[i + 1]));
                while (k < max_bins && static_cast<double>(cum) >= per_bin * k) ++k;
            }
        }
    }
    m.bounds.erase(std::unique(m.bounds.begin(), m.bounds.end()), m.bounds.end());
    return m;
}

GradHess grad_hess(int label, double score) noexcept {
    const double p = sigmoid(score);
    return GradHess{p - static_cast<double>(label), p * (1.0 - p)};
}

std::vector<GradHess> grad_hess(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw std::invalid_argument("grad_hess: size mismatch");
    std::vector<GradHess> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = grad_hess(labels[i], scores[i]);
    return out;
}

double split_gain(const BinStats& left, const BinStats& right, double lambda) noexcept {
    return 0.5 * (score_term(left.g, left.h, lambda) + score_term(right.g, right.h, lambda) -
                  score_term(left.g + right.g, left.h + right.h, lambda));
}

std::optional<Split> best_split(std::span<const FeatureHistogram> hist, const Params& p) {
    std::optional<Split> best;
    const auto min_count = static_cast<std::int64_t>(p.min_data_in_leaf);
    auto consider = [&](const Split& cand) {
        if (cand.left.count < min_count || cand.right.count < min_count) return;
        if (!(cand.gain > kGainEps) || cand.gain < p.min_gain) return;
        if (!best || cand.gain > best->gain) best = cand;
    };

    for (const auto& fh : hist) {
        if (fh.bins.empty()) continue;
        if (fh.kind == ColumnKind::numeric) {
            const std::size_t value_bins = fh.bins.size() - 1;
            const BinStats miss = fh.bins.back();
            BinStats values_total;
            for (std::size_t b = 0; b < value_bins; ++b) values_total += fh.bins[b];
            BinStats left_vals;
            for (std::size_t t = 0; t < value_bins; ++t) {
                left_vals += fh.bins[t];
                BinStats right_vals = values_total;
                right_vals -= left_vals;
                Split s;
                s.feature = fh.feature;
                s.kind = SplitKind::numeric;
                s.threshold_bin = static_cast<int>(t);
                if (t + 1 < value_bins) {
                    s.missing_left = false;
                    s.left = left_vals;
                    s.right = right_vals;
                    s.right += miss;
                    s.gain = split_gain(s.left, s.right, p.lambda_l2);
                    consider(s);
                    if (miss.count > 0) {
                        s.missing_left = true;
                        s.left = left_vals;
                        s.left += miss;
                        s.right = right_vals;
                        s.gain = split_gain(s.left, s.right, p.lambda_l2);
                        consider(s);
                    }
                } else if (miss.count > 0) {
                    // every value left, missing right
                    s.missing_left = false;
                    s.left = left_vals;
                    s.right = miss;
                    s.gain = split_gain(s.left, s.right, p.lambda_l2);
                    consider(s);
                }
            }
        } else {
            struct CatStat {
                std::int32_t id;
                BinStats s;
                double ratio;
            };
            std::vector<CatStat> cats;
            BinStats total;
            for (std::size_t b = 0; b < fh.bins.size(); ++b) {
                const auto& s = fh.bins[b];
                total += s;
                if (s.count == 0 || static_cast<double>(s.count) < p.cat_smooth) continue;
                const double d = s.h + p.lambda_l2 + p.cat_smooth;
                cats.push_back(CatStat{static_cast<std::int32_t>(b), s, d > 0.0 ? s.g / d : 0.0});
            }
            if (cats.empty()) continue;
            std::sort(cats.begin(), cats.end(), [](const CatStat& a, const CatStat& b) {
                if (a.ratio != b.ratio) return a.ratio < b.ratio;
                return a.id < b.id;
            });
            const double lambda = p.lambda_l2 + p.cat_l2;
            const std::size_t used = cats.size();
            const std::size_t max_take =
                std::min(static_cast<std::size_t>(std::max(p.max_cat_threshold, 1)), (used + 1) / 2);
            const auto min_group = static_cast<std::int64_t>(p.min_data_per_group);
            std::optional<Split> local;
            int local_dir = 0;
            std::size_t local_take = 0;
            for (int dir = 0; dir < 2; ++dir) {
                BinStats left;
                std::int64_t group = 0;
                for (std::size_t k = 0; k < max_take && k < used; ++k) {
                    const auto& c = cats[dir == 0 ? k : used - 1 - k];
                    left += c.s;
                    group += c.s.count;
                    if (left.count < min_count) continue;
                    BinStats right = total;
                    right -= left;
                    if (right.count < min_count || right.count < min_group) break;
                    if (group < min_group) continue;
                    group = 0;
                    Split s;
                    s.feature = fh.feature;
                    s.kind = SplitKind::categorical;
                    s.threshold_bin = static_cast<int>(k + 1);
                    s.left = left;
                    s.right = right;
                    s.gain = split_gain(s.left, s.right, lambda);
                    if (!local || s.gain > local->gain) {
                        local = s;
                        local_dir = dir;
                        local_take = k + 1;
                    }
                }
            }
            if (local) {
                for (std::size_t k = 0; k < local_take; ++k)
                    local->left_categories.push_back(cats[local_dir == 0 ? k : used - 1 - k].id);
                std::sort(local->left_categories.begin(), local->left_categories.end());
                consider(*local);
            }
        }
    }
    return best;
}

int Tree::num_leaves() const noexcept {
    int n = 0;
    for (const auto& node : nodes) n += node.is_leaf();
    return n;
}

int Tree::leaf_index(std::span<const double> row) const noexcept {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        const double v = row[static_cast<std::size_t>(n.feature)];
        bool left;
        if (n.kind == SplitKind::numeric) {
            left = std::isnan(v) ? n.missing_left : v <= n.threshold;
        } else {
            left = !std::isnan(v) &&
                   std::binary_search(n.categories.begin(), n.categories.end(), static_cast<std::int32_t>(v));
        }
        i = left ? n.left : n.right;
    }
    return i;
}

double Forest::raw_score(std::span<const double> row) const noexcept {
    double s = base_score;
    for (const auto& t : trees) s += t.predict(row);
    return s;
}

double Forest::predict_proba(std::span<const double> row) const noexcept {
    return sigmoid(raw_score(row));
}

namespace {

void recompute_gains(Forest& f) {
    f.gain_by_feature.assign(f.columns.size(), 0.0);
    for (const auto& t : f.trees)
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) f.gain_by_feature[static_cast<std::size_t>(n.feature)] += n.gain;
}

void check_columns(const Forest& f, const FeatureMatrix& x) {
    if (x.num_columns() != f.columns.size())
        throw std::invalid_argument(fmt::format("feature count mismatch: model has {}, input has {}",
                                                f.columns.size(), x.num_columns()));
    for (std::size_t c = 0; c < f.columns.size(); ++c)
        if (x.columns()[c].name != f.columns[c].name || x.columns()[c].kind != f.columns[c].kind)
            throw std::invalid_argument("feature '" + x.columns()[c].name + "' does not match model column '" +
                                        f.columns[c].name + "'");
}

}  // namespace

TrainResult train(const FeatureMatrix& train_x, std::span<const int> train_y,
                  const FeatureMatrix* valid_x, std::span<const int> valid_y, const Params& p) {
    p.validate();
    const std::size_t n = train_x.num_rows();
    if (n == 0) throw std::invalid_argument("gbdt: empty training set");
    if (train_y.size() != n) throw std::invalid_argument("gbdt: label count mismatch");
    check_labels(train_y, "train");
    const bool use_valid = valid_x != nullptr && valid_x->num_rows() > 0;
    if (use_valid) {
        if (valid_y.size() != valid_x->num_rows()) throw std::invalid_argument("gbdt: valid label count mismatch");
        if (valid_x->num_columns() != train_x.num_columns())
            throw std::invalid_argument("gbdt: valid table has a different width");
        check_labels(valid_y, "valid");
    }

    TrainResult result;
    Forest& f = result.forest;
    f.params = p;
    f.columns = train_x.columns();
    const std::size_t n_cols = f.columns.size();
    f.bin_maps.assign(n_cols, BinMap{});

    const double positives = static_cast<double>(std::count(train_y.begin(), train_y.end(), 1));
    const double rate = std::clamp(positives / static_cast<double>(n), 1e-15, 1.0 - 1e-15);
    f.base_score = std::log(rate / (1.0 - rate));
    f.gain_by_feature.assign(n_cols, 0.0);
    if (positives == 0.0 || positives == static_cast<double>(n)) {
        warn("gbdt: training labels are single-class; forest holds only the base score");
        return result;
    }

    BinnedData data;
    data.cols.resize(n_cols);
    data.kinds.resize(n_cols);
    data.widths.resize(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) {
        const auto col = train_x.column(c);
        auto& out = data.cols[c];
        out.resize(n);
        data.kinds[c] = f.columns[c].kind;
        if (f.columns[c].kind == ColumnKind::numeric) {
            f.bin_maps[c] = build_bins(col, p.max_bins);
            for (std::size_t r = 0; r < n; ++r) out[r] = f.bin_maps[c].bin(col[r]);
            data.widths[c] = f.bin_maps[c].width();
        } else {
            std::uint32_t max_id = 0;
            for (std::size_t r = 0; r < n; ++r) {
                const double v = col[r];
                if (std::isnan(v) || v < 0.0 || v != std::floor(v))
                    throw std::invalid_argument("categorical column '" + f.columns[c].name +
                                                "' holds a non-id value");
                out[r] = static_cast<std::uint32_t>(v);
                max_id = std::max(max_id, out[r]);
            }
            data.widths[c] = static_cast<std::size_t>(max_id) + 1;
        }
    }

    std::vector<double> scores(n, f.base_score);
    std::vector<double> valid_scores(use_valid ? valid_x->num_rows() : 0, f.base_score);
    std::vector<double> valid_prob(valid_scores.size());
    const auto n_sample = static_cast<std::size_t>(
        std::max(1.0, std::floor(p.feature_fraction * static_cast<double>(n_cols) + 0.5)));
    std::vector<int> all_features(n_cols);
    std::iota(all_features.begin(), all_features.end(), 0);

    double best_auc = -1.0;
    int best_iter = 0;
    for (int iter = 1; iter <= p.n_estimators; ++iter) {
        const auto gh = grad_hess(train_y, scores);
        std::vector<int> features = all_features;
        if (n_sample < n_cols) {
            Rng rng(derive_seed(p.seed, static_cast<std::uint64_t>(iter)));
            rng.shuffle(features.begin(), features.end());
            features.resize(n_sample);
            std::sort(features.begin(), features.end());
        }
        std::vector<std::pair<int, std::vector<std::uint32_t>>> leaf_rows;
        TreeGrower grower(data, gh, p, std::move(features));
        Tree tree = grower.grow(n, leaf_rows);
        for (auto& node : tree.nodes) {
            if (node.is_leaf() || node.kind != SplitKind::numeric) continue;
            const auto& bounds = f.bin_maps[static_cast<std::size_t>(node.feature)].bounds;
            node.threshold = static_cast<std::size_t>(node.threshold_bin) < bounds.size()
                                 ? bounds[static_cast<std::size_t>(node.threshold_bin)]
                                 : kInf;
        }
        for (const auto& [leaf, rows] : leaf_rows) {
            const double v = tree.nodes[static_cast<std::size_t>(leaf)].value;
            for (auto r : rows) scores[r] += v;
        }
        result.log.train_loss.push_back(mean_log_loss(train_y, scores));
        if (use_valid) {
            for (std::size_t r = 0; r < valid_scores.size(); ++r) {
                valid_scores[r] += tree.predict(valid_x->row(r));
                valid_prob[r] = sigmoid(valid_scores[r]);
            }
            const double a = auc(valid_y, valid_prob);
            result.log.valid_auc.push_back(a);
            if (a > best_auc) {
                best_auc = a;
                best_iter = iter;
            }
        }
        f.trees.push_back(std::move(tree));
        if (use_valid && iter - best_iter >= p.early_stopping_round) {
            result.log.stopped_early = true;
            break;
        }
    }
    if (use_valid) f.trees.resize(static_cast<std::size_t>(best_iter));
    f.best_iteration = static_cast<int>(f.trees.size());
    result.log.best_iteration = f.best_iteration;
    recompute_gains(f);
    return result;
}

std::vector<double> predict_proba(const Forest& f, const FeatureMatrix& x) {
    check_columns(f, x);
    std::vector<double> out(x.num_rows());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = f.predict_proba(x.row(r));
    return out;
}

PredictionSet predict(const Forest& f, const FeatureMatrix& x, std::span<const std::string> ids) {
    if (ids.size() != x.num_rows()) throw std::invalid_argument("predict: id count mismatch");
    const auto probs = predict_proba(f, x);
    PredictionSet out;
    for (std::size_t r = 0; r < probs.size(); ++r) out.add(ids[r], probs[r]);
    return out;
}

std::vector<std::pair<std::string, double>> feature_importance(const Forest& f) {
    std::vector<int> used(f.columns.size(), 0);
    for (const auto& t : f.trees)
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) used[static_cast<std::size_t>(n.feature)] = 1;
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < used.size(); ++c)
        if (used[c]) idx.push_back(c);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return f.gain_by_feature[a] > f.gain_by_feature[b];
    });
    std::vector<std::pair<std::string, double>> out;
    for (auto c : idx) out.emplace_back(f.columns[c].name, f.gain_by_feature[c]);
    return out;
}

void save_forest(const Forest& f, std::ostream& out) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["version"] = 1;
    j["kind"] = "slamkit.gbdt_forest";
    const auto& p = f.params;
    j["params"] = {{"num_leaves", p.num_leaves},
                   {"n_estimators", p.n_estimators},
                   {"learning_rate", p.learning_rate},
                   {"feature_fraction", p.feature_fraction},
                   {"early_stopping_round", p.early_stopping_round},
                   {"max_bins", p.max_bins},
                   {"min_data_in_leaf", p.min_data_in_leaf},
                   {"lambda_l2", p.lambda_l2},
                   {"min_gain", p.min_gain},
                   {"cat_smooth", p.cat_smooth},
                   {"cat_l2", p.cat_l2},
                   {"min_data_per_group", p.min_data_per_group},
                   {"max_cat_threshold", p.max_cat_threshold},
                   {"seed", p.seed}};
    j["vocab_hash"] = fmt::format("{:016x}", f.vocab_hash);
    j["base_score"] = f.base_score;
    j["best_iteration"] = f.best_iteration;
    auto& cols = j["columns"] = ordered_json::array();
    for (std::size_t c = 0; c < f.columns.size(); ++c) {
        ordered_json col{{"name", f.columns[c].name},
                         {"kind", f.columns[c].kind == ColumnKind::numeric ? "numeric" : "categorical"},
                         {"gain", f.gain_by_feature[c]}};
        if (f.columns[c].kind == ColumnKind::numeric) col["bounds"] = f.bin_maps[c].bounds;
        cols.push_back(std::move(col));
    }
    auto& trees = j["trees"] = ordered_json::array();
    for (const auto& t : f.trees) {
        ordered_json nodes = ordered_json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) {
                nodes.push_back({{"leaf", n.value}, {"count", n.count}});
                continue;
            }
            ordered_json node{{"feature", n.feature},
                              {"kind", n.kind == SplitKind::numeric ? "numeric" : "categorical"},
                              {"left", n.left},
                              {"right", n.right},
                              {"gain", n.gain},
                              {"count", n.count}};
            if (n.kind == SplitKind::numeric) {
                node["threshold_bin"] = n.threshold_bin;
                node["missing_left"] = n.missing_left;
            } else {
                node["categories"] = n.categories;
            }
            nodes.push_back(std::move(node));
        }
        trees.push_back(std::move(nodes));
    }
    out << j.dump(1) << '\n';
}

Forest load_forest(std::istream& in) {
    const auto j = nlohmann::json::parse(in);
    if (j.value("kind", std::string{}) != "slamkit.gbdt_forest")
        throw std::invalid_argument("not a GBDT model file");
    if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported GBDT model version");
    Forest f;
    const auto& p = j.at("params");
    f.params.num_leaves = p.at("num_leaves").get<int>();
    f.params.n_estimators = p.at("n_estimators").get<int>();
    f.params.learning_rate = p.at("learning_rate").get<double>();
    f.params.feature_fraction = p.at("feature_fraction").get<double>();
    f.params.early_stopping_round = p.at("early_stopping_round").get<int>();
    f.params.max_bins = p.at("max_bins").get<int>();
    f.params.min_data_in_leaf = p.at("min_data_in_leaf").get<int>();
    f.params.lambda_l2 = p.at("lambda_l2").get<double>();
    f.params.min_gain = p.at("min_gain").get<double>();
    f.params.cat_smooth = p.at("cat_smooth").get<double>();
    f.params.cat_l2 = p.at("cat_l2").get<double>();
    f.params.min_data_per_group = p.at("min_data_per_group").get<int>();
    f.params.max_cat_threshold = p.at("max_cat_threshold").get<int>();
    f.params.seed = p.at("seed").get<std::uint64_t>();
    f.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(), nullptr, 16);
    f.base_score = j.at("base_score").get<double>();
    f.best_iteration = j.at("best_iteration").get<int>();
    for (const auto& col : j.at("columns")) {
        const bool numeric = col.at("kind").get<std::string>() == "numeric";
        f.columns.push_back({col.at("name").get<std::string>(),
                             numeric ? ColumnKind::numeric : ColumnKind::categorical});
        f.gain_by_feature.push_back(col.at("gain").get<double>());
        BinMap m;
        if (numeric) m.bounds = col.at("bounds").get<std::vector<double>>();
        f.bin_maps.push_back(std::move(m));
    }
    for (const auto& tj : j.at("trees")) {
        Tree t;
        for (const auto& nj : tj) {
            Node n;
            if (nj.contains("leaf")) {
                n.value = nj.at("leaf").get<double>();
                n.count = nj.at("count").get<std::int64_t>();
            } else {
                n.feature = nj.at("feature").get<int>();
                if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= f.columns.size())
                    throw std::invalid_argument("model node references an unknown feature");
                n.left = nj.at("left").get<int>();
                n.right = nj.at("right").get<int>();
                n.gain = nj.at("gain").get<double>();
                n.count = nj.at("count").get<std::int64_t>();
                if (nj.at("kind").get<std::string>() == "numeric") {
                    n.kind = SplitKind::numeric;
                    n.threshold_bin = nj.at("threshold_bin").get<int>();
                    n.missing_left = nj.at("missing_left").get<bool>();
                    const auto& bounds = f.bin_maps[static_cast<std::size_t>(n.feature)].bounds;
                    n.threshold = static_cast<std::size_t>(n.threshold_bin) < bounds.size()
                                      ? bounds[static_cast<std::size_t>(n.threshold_bin)]
                                      : kInf;
                } else {
                    n.kind = SplitKind::categorical;
                    n.categories = nj.at("categories").get<std::vector<std::int32_t>>();
                }
            }
            t.nodes.push_back(std::move(n));
        }
        f.trees.push_back(std::move(t));
    }
    return f;
}

}  // namespace slamkit::gbdt
