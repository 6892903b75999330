// Slow reference implementations used to check the fast code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "slamkit/gbdt.hpp"
#include "slamkit/rng.hpp"
#include "slamkit/seqnet.hpp"
#include "slamkit/table.hpp"

namespace slamkit::oracle {

// O(n^2) pair count.
inline double pairwise_auc(std::span<const int> y, std::span<const double> s) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            if (s[i] > s[j]) num += 1.0;
            else if (s[i] == s[j]) num += 0.5;
        }
    }
    return num / pairs;
}

using Rows = std::vector<std::uint32_t>;

struct Candidate {
    double gain = -1.0;
    Rows left, right;
};

inline double raw_gain(const Rows& l, const Rows& r, const std::vector<gbdt::GradHess>& gh) {
    auto sums = [&](const Rows& rows) {
        double g = 0.0, h = 0.0;
        for (auto i : rows) {
            g += gh[i].g;
            h += gh[i].h;
        }
        return std::pair{g, h};
    };
    const auto [gl, hl] = sums(l);
    const auto [gr, hr] = sums(r);
    auto term = [](double g, double h) { return h > 0.0 ? g * g / h : 0.0; };
    return 0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr));
}

/// Exhaustive greedy split of one node with lambda 0: every cut between
/// distinct numeric values with missing on either side, and every two-way
/// partition of the categories present.
inline std::optional<Candidate> best_exhaustive(const FeatureMatrix& x, const Rows& rows,
                                                const std::vector<gbdt::GradHess>& gh, std::size_t min_leaf) {
    std::optional<Candidate> best;
    auto offer = [&](Rows l, Rows r) {
        if (l.size() < min_leaf || r.size() < min_leaf) return;
        const double g = raw_gain(l, r, gh);
        if (!(g > 1e-12)) return;
        if (!best || g > best->gain) best = Candidate{g, std::move(l), std::move(r)};
    };
    for (std::size_t c = 0; c < x.num_columns(); ++c) {
        if (x.columns()[c].kind == ColumnKind::numeric) {
            std::set<double> values;
            Rows miss;
            for (auto r : rows) {
                if (std::isnan(x(r, c))) miss.push_back(r);
                else values.insert(x(r, c));
            }
            for (double cut : values) {
                Rows lo, hi;
                for (auto r : rows)
                    if (!std::isnan(x(r, c))) (x(r, c) <= cut ? lo : hi).push_back(r);
                Rows hi_m = hi;
                hi_m.insert(hi_m.end(), miss.begin(), miss.end());
                offer(lo, hi_m);
                if (!miss.empty()) {
                    Rows lo_m = lo;
                    lo_m.insert(lo_m.end(), miss.begin(), miss.end());
                    offer(lo_m, hi);
                }
            }
        } else {
            std::vector<std::int32_t> cats;
            for (auto r : rows) cats.push_back(static_cast<std::int32_t>(x(r, c)));
            std::sort(cats.begin(), cats.end());
            cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
            const std::size_t k = cats.size();
            if (k < 2) continue;
            // the last category stays right: 2^(k-1) - 1 partitions
            for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << (k - 1)); ++mask) {
                Rows l, r;
                for (auto row : rows) {
                    const auto id = static_cast<std::int32_t>(x(row, c));
                    const auto pos = static_cast<std::size_t>(std::lower_bound(cats.begin(), cats.end(), id) - cats.begin());
                    const bool left = pos + 1 < k && ((mask >> pos) & 1u);
                    (left ? l : r).push_back(row);
                }
                offer(std::move(l), std::move(r));
            }
        }
    }
    return best;
}

inline bool goes_left(const gbdt::Node& n, std::span<const double> row) {
    const double v = row[static_cast<std::size_t>(n.feature)];
    if (n.kind == gbdt::SplitKind::numeric) return std::isnan(v) ? n.missing_left : v <= n.threshold;
    return std::find(n.categories.begin(), n.categories.end(), static_cast<std::int32_t>(v)) != n.categories.end();
}

/// Checks a grown tree against leaf-wise exhaustive greedy growth: every
/// split reaches the exhaustive best gain of its node, splits happen in
/// order of decreasing frontier gain, growth stops only at num_leaves or
/// when no admissible split remains, and leaves hold -lr*G/H. Returns an
/// empty string on success, otherwise the first discrepancy.
inline std::string check_tree(const gbdt::Tree& t, const FeatureMatrix& x, const std::vector<gbdt::GradHess>& gh,
                              const gbdt::Params& p, double tol = 1e-9) {
    const std::size_t n_nodes = t.nodes.size();
    std::vector<Rows> node_rows(n_nodes);
    for (std::uint32_t r = 0; r < x.num_rows(); ++r) {
        int i = 0;
        node_rows[0].push_back(r);
        while (!t.nodes[static_cast<std::size_t>(i)].is_leaf()) {
            const auto& n = t.nodes[static_cast<std::size_t>(i)];
            i = goes_left(n, x.row(r)) ? n.left : n.right;
            node_rows[static_cast<std::size_t>(i)].push_back(r);
        }
    }
    const auto min_leaf = static_cast<std::size_t>(p.min_data_in_leaf);
    std::vector<std::optional<Candidate>> best(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) best[i] = best_exhaustive(x, node_rows[i], gh, min_leaf);
    auto close = [&](double a, double b) { return std::fabs(a - b) <= tol * std::max(1.0, std::fabs(b)); };

    std::vector<std::size_t> order;  // internal nodes by split time (children ids ascend)
    for (std::size_t i = 0; i < n_nodes; ++i)
        if (!t.nodes[i].is_leaf()) order.push_back(i);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return t.nodes[a].left < t.nodes[b].left; });

    std::vector<std::size_t> frontier{0};
    for (std::size_t i : order) {
        const auto& n = t.nodes[i];
        auto it = std::find(frontier.begin(), frontier.end(), i);
        if (it == frontier.end()) return "node " + std::to_string(i) + " split before it was a leaf";
        if (!best[i]) return "node " + std::to_string(i) + " split where no admissible split exists";
        const auto& l = node_rows[static_cast<std::size_t>(n.left)];
        const auto& r = node_rows[static_cast<std::size_t>(n.right)];
        if (l.size() < min_leaf || r.size() < min_leaf) return "node " + std::to_string(i) + " child below min_data_in_leaf";
        const double g = raw_gain(l, r, gh);
        if (!close(g, best[i]->gain))
            return "node " + std::to_string(i) + " gain " + std::to_string(g) + " vs exhaustive " +
                   std::to_string(best[i]->gain);
        if (!close(n.gain, g)) return "node " + std::to_string(i) + " stored gain differs from its partition";
        for (std::size_t f : frontier)
            if (f != i && best[f] && best[f]->gain > g + tol * std::max(1.0, g))
                return "node " + std::to_string(i) + " split while leaf " + std::to_string(f) + " had more gain";
        frontier.erase(it);
        frontier.push_back(static_cast<std::size_t>(n.left));
        frontier.push_back(static_cast<std::size_t>(n.right));
    }
    if (static_cast<int>(frontier.size()) < p.num_leaves)
        for (std::size_t f : frontier)
            if (best[f] && best[f]->gain >= std::max(p.min_gain, 1e-12) * (1.0 + tol) + tol)
                return "growth stopped although leaf " + std::to_string(f) + " can split";
    for (std::size_t f : frontier) {
        double g = 0.0, h = 0.0;
        for (auto r : node_rows[f]) {
            g += gh[r].g;
            h += gh[r].h;
        }
        const double want = h + p.lambda_l2 > 0.0 ? -p.learning_rate * g / (h + p.lambda_l2) : 0.0;
        if (std::fabs(t.nodes[f].value - want) > 1e-12 * std::max(1.0, std::fabs(want)))
            return "leaf " + std::to_string(f) + " value differs from -lr*G/H";
    }
    return {};
}

/// Parameters with the categorical regularization switched off so that
/// sorted-order cuts cover the optimum.
inline gbdt::Params exact_params(int num_leaves) {
    gbdt::Params p;
    p.num_leaves = num_leaves;
    p.n_estimators = 1;
    p.min_data_in_leaf = 1;
    p.lambda_l2 = 0.0;
    p.cat_smooth = 0.0;
    p.cat_l2 = 0.0;
    p.min_data_per_group = 1;
    p.max_cat_threshold = 1 << 20;
    p.max_bins = 255;
    return p;
}

struct OracleCase {
    FeatureMatrix x;
    std::vector<int> y;
    int num_leaves = 2;
};

/// Up to 500 rows, 1-3 columns mixing rounded normals (with NaN) and
/// categoricals of at most 8 ids.
inline OracleCase random_case(std::uint64_t seed) {
    Rng rng(seed);
    OracleCase c;
    const std::size_t n = 20 + rng.below(481);
    const std::size_t n_cols = 1 + rng.below(3);
    std::vector<ColumnSpec> cols;
    std::vector<std::size_t> cat_k(n_cols, 0);
    for (std::size_t j = 0; j < n_cols; ++j) {
        const bool cat = rng.bernoulli(0.5);
        cols.push_back({"f" + std::to_string(j), cat ? ColumnKind::categorical : ColumnKind::numeric});
        if (cat) cat_k[j] = 2 + rng.below(7);
    }
    c.x = FeatureMatrix(cols);
    std::vector<double> effect(9);
    for (auto& e : effect) e = rng.normal();
    std::vector<double> row(n_cols);
    for (std::size_t i = 0; i < n; ++i) {
        double z = rng.normal(0.0, 0.5);
        for (std::size_t j = 0; j < n_cols; ++j) {
            if (cat_k[j] > 0) {
                const auto id = static_cast<double>(rng.below(cat_k[j]) * (j + 1) % 9);
                row[j] = id;
                z += effect[static_cast<std::size_t>(id)];
            } else if (rng.bernoulli(0.1)) {
                row[j] = FeatureMatrix::missing;
                z += 0.7;
            } else {
                row[j] = std::round(rng.normal(0.0, 2.0) * 10.0) / 10.0;
                z += 0.8 * row[j];
            }
        }
        c.x.add_row(row);
        c.y.push_back(rng.bernoulli(1.0 / (1.0 + std::exp(-z))) ? 1 : 0);
    }
    c.num_leaves = 2 + static_cast<int>(rng.below(7));
    return c;
}

/// Largest relative error per tensor between analytic gradients and central
/// differences; |a - n| / max(|a|, |n|, floor).
struct TensorError {
    std::string name;
    double max_rel = 0.0;
};

inline std::vector<TensorError> gradient_check(seqnet::Net& net, std::span<const seqnet::Sequence> batch,
                                               double step = 1e-4, double floor = 1e-6) {
    const auto analytic = net.loss_and_grads(batch, nullptr).grad;
    auto& theta = net.params();
    std::vector<TensorError> out;
    for (const auto& t : net.tensors()) {
        TensorError e{t.name, 0.0};
        for (std::size_t k = t.offset; k < t.offset + t.rows * t.cols; ++k) {
            const double keep = theta[k];
            const double h = step * std::max(1.0, std::fabs(keep));
            theta[k] = keep + h;
            const double up = net.loss_and_grads(batch, nullptr).loss;
            theta[k] = keep - h;
            const double down = net.loss_and_grads(batch, nullptr).loss;
            theta[k] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::fabs(analytic[k]), std::fabs(numeric), floor});
            e.max_rel = std::max(e.max_rel, std::fabs(analytic[k] - numeric) / denom);
        }
        out.push_back(e);
    }
    return out;
}

/// Dims-2 bidirectional net over tiny tables with every parameter drawn from
/// N(0, 0.5^2), and one user's 3-step window with the last two steps scored.
struct TinyNet {
    seqnet::Net net;
    std::vector<seqnet::Sequence> batch;
};

inline TinyNet tiny_net(std::uint64_t seed, bool bidirectional = true) {
    seqnet::NetConfig cfg;
    cfg.embed_dim = 2;
    cfg.recurrent_units = 2;
    cfg.ff_units = 2;
    cfg.cross_buckets = 5;
    cfg.dropout_p = 0.0;
    cfg.l2_coeff = 1e-3;
    cfg.bidirectional = bidirectional;
    seqnet::TableSizes sizes;
    sizes.fill(3);
    TinyNet t{seqnet::Net(cfg, sizes), {}};
    Rng rng(seed);
    for (auto& v : t.net.params()) v = rng.normal(0.0, 0.5);
    seqnet::Sequence seq(3);
    for (std::size_t s = 0; s < seq.size(); ++s) {
        for (auto& id : seq[s].ids) id = static_cast<std::int32_t>(rng.below(3));
        for (auto& v : seq[s].num) v = rng.normal();
        seq[s].correct = s == 0 ? static_cast<int>(rng.below(2)) : seqnet::kUnknown;
        seq[s].mask = s > 0;
        seq[s].target = s > 0 ? static_cast<int>(rng.below(2)) : -1;
    }
    seq[1].target = 1;
    seq[2].target = 0;
    t.batch.push_back(std::move(seq));
    return t;
}

}  // namespace slamkit::oracle
