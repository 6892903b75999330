#include "slamkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "slamkit/error.hpp"
#include "text_util.hpp"

namespace slamkit {

namespace {

double instance_loss(int y, double p) noexcept {
    constexpr double eps = 1e-15;
    p = std::clamp(p, eps, 1.0 - eps);
    return y ? -std::log(p) : -std::log1p(-p);
}

void check_len(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(fmt::format("{}: input lengths differ", what));
}

}  // namespace

std::vector<double> default_fractions(int n) {
    if (n < 1) throw std::invalid_argument("default_fractions: n must be >= 1");
    std::vector<double> f(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) f[static_cast<std::size_t>(i - 1)] = static_cast<double>(i) / n;
    return f;
}

DecayCurve decay_curve(std::span<const int> labels, std::span<const double> scores,
                       std::span<const double> time_norm, std::span<const double> fractions) {
    check_len(labels.size(), scores.size(), "decay_curve");
    check_len(labels.size(), time_norm.size(), "decay_curve");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
            throw std::invalid_argument("decay_curve: fractions must lie in (0, 1]");
        if (i > 0 && !(fractions[i] > fractions[i - 1]))
            throw std::invalid_argument("decay_curve: fractions must be strictly ascending");
    }
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (time_norm[a] != time_norm[b]) return time_norm[a] < time_norm[b];
        return instance_loss(labels[a], scores[a]) < instance_loss(labels[b], scores[b]);
    });

    DecayCurve c;
    double sum = 0.0;
    std::size_t k = 0;
    for (double f : fractions) {
        while (k < order.size() && time_norm[order[k]] <= f) {
            sum += instance_loss(labels[order[k]], scores[order[k]]);
            ++k;
        }
        if (k == 0) {
            c.skipped.push_back(f);
            warn(fmt::format("decay curve: no instances at fraction {}", f));
            continue;
        }
        c.points.push_back(DecayPoint{f, sum / static_cast<double>(k), k});
    }
    return c;
}

std::vector<double> horizon_time_norm(const std::vector<FeatureRow>& rows, Partition target) {
    std::size_t n_users = 0;
    for (const auto& r : rows) n_users = std::max(n_users, r.user_index + 1);
    std::vector<double> horizon(n_users, -std::numeric_limits<double>::infinity());
    std::vector<double> last(n_users, -std::numeric_limits<double>::infinity());
    for (const auto& r : rows) {
        if (r.partition < target && r.label != Label::unknown) horizon[r.user_index] = std::max(horizon[r.user_index], r.days);
        if (r.partition == target) last[r.user_index] = std::max(last[r.user_index], r.days);
    }
    std::vector<double> out;
    for (const auto& r : rows) {
        if (r.partition != target) continue;
        const double h = horizon[r.user_index];
        const double span = last[r.user_index] - h;
        if (!std::isfinite(h) || !(span > 0.0)) {
            out.push_back(1.0);
            continue;
        }
        const double t = (r.days - h) / span;
        out.push_back(std::clamp(t, std::numeric_limits<double>::min(), 1.0));
    }
    return out;
}

std::vector<std::int32_t> rarity_order(const std::vector<std::int64_t>& freq) {
    std::vector<std::int32_t> ids(freq.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](std::int32_t a, std::int32_t b) {
        return freq[static_cast<std::size_t>(a)] < freq[static_cast<std::size_t>(b)];
    });
    return ids;
}

RarityCurve rarity_curve(std::span<const int> labels, std::span<const double> scores,
                         std::span<const std::int32_t> token_ids, const std::vector<std::int64_t>& freq,
                         std::span<const std::size_t> cuts) {
    check_len(labels.size(), scores.size(), "rarity_curve");
    check_len(labels.size(), token_ids.size(), "rarity_curve");
    for (std::size_t i = 1; i < cuts.size(); ++i)
        if (cuts[i] < cuts[i - 1]) throw std::invalid_argument("rarity_curve: cuts must be ascending");
    const auto order = rarity_order(freq);
    std::vector<std::size_t> rank(freq.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = r;

    // per-rank totals, then prefix sums
    std::vector<double> loss_at(freq.size() + 1, 0.0);
    std::vector<std::size_t> count_at(freq.size() + 1, 0);
    double total_loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto id = token_ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= freq.size())
            throw std::out_of_range("rarity_curve: token id outside the vocabulary");
        const double l = instance_loss(labels[i], scores[i]);
        loss_at[rank[static_cast<std::size_t>(id)]] += l;
        ++count_at[rank[static_cast<std::size_t>(id)]];
        total_loss += l;
    }
    const double n = static_cast<double>(labels.size());
    RarityCurve c;
    double cum_loss = 0.0;
    std::size_t cum_n = 0, r = 0;
    for (auto x : cuts) {
        const std::size_t upto = std::min(x, freq.size());
        for (; r < upto; ++r) {
            cum_loss += loss_at[r];
            cum_n += count_at[r];
        }
        RarityPoint p;
        p.x = x;
        p.n = cum_n;
        p.log_loss = cum_n ? cum_loss / static_cast<double>(cum_n) : 0.0;
        p.loss_share = total_loss > 0.0 ? cum_loss / total_loss : 0.0;
        p.instance_share = n > 0.0 ? static_cast<double>(cum_n) / n : 0.0;
        if (upto == freq.size()) {
            p.loss_share = 1.0;
            p.instance_share = 1.0;
        }
        c.points.push_back(p);
    }
    return c;
}

RarityCurve rarity_curve(std::span<const int> labels, std::span<const double> scores,
                         std::span<const std::int32_t> token_ids, const std::vector<std::int64_t>& freq) {
    std::vector<std::size_t> cuts(freq.size());
    std::iota(cuts.begin(), cuts.end(), std::size_t{1});
    return rarity_curve(labels, scores, token_ids, freq, cuts);
}

RarityPoint rarity_at_instance_share(const RarityCurve& c, double share) {
    if (c.points.empty()) throw std::invalid_argument("rarity curve is empty");
    for (const auto& p : c.points)
        if (p.instance_share >= share) return p;
    return c.points.back();
}

std::vector<ImportanceRow> importance_report(const gbdt::Forest& f, std::size_t top_k) {
    const auto imp = gbdt::feature_importance(f);
    double total = 0.0;
    for (const auto& [name, g] : imp) total += g;
    std::vector<ImportanceRow> out;
    for (const auto& [name, g] : imp) {
        if (top_k != 0 && out.size() == top_k) break;
        out.push_back(ImportanceRow{name, g, total > 0.0 ? g / total : 0.0});
    }
    return out;
}

void write_decay_csv(const DecayCurve& c, std::ostream& out) {
    out << "fraction,log_loss,n\n";
    for (const auto& p : c.points)
        out << detail::format_number(p.fraction) << ',' << fmt::format("{:.17g}", p.log_loss) << ',' << p.n << '\n';
}

void write_rarity_csv(const RarityCurve& c, std::ostream& out) {
    out << "x,log_loss,loss_share,instance_share\n";
    for (const auto& p : c.points)
        out << p.x << ',' << fmt::format("{:.17g},{:.17g},{:.17g}", p.log_loss, p.loss_share, p.instance_share)
            << '\n';
}

void write_importance_text(const std::vector<ImportanceRow>& rows, std::ostream& out) {
    std::size_t w = 7;
    for (const auto& r : rows) w = std::max(w, r.feature.size());
    out << fmt::format("{:<{}}  {:>14}  {:>7}\n", "feature", w, "gain", "share");
    for (const auto& r : rows) out << fmt::format("{:<{}}  {:>14.4f}  {:>7.4f}\n", r.feature, w, r.gain, r.share);
}

std::string importance_json(const std::vector<ImportanceRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) j.push_back({{"feature", r.feature}, {"gain", r.gain}, {"share", r.share}});
    return j.dump(2);
}

}  // namespace slamkit
