#include "slamkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "slamkit/error.hpp"

namespace slamkit {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) throw std::invalid_argument("labels and scores differ in length");
}

}  // namespace

double auc(std::span<const int> labels, std::span<const double> scores) {
    check_sizes(labels.size(), scores.size());
    const std::size_t n = labels.size();
    std::int64_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(scores[i])) throw std::invalid_argument("NaN score");
        n_pos += labels[i] != 0;
    }
    const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("AUC undefined: only one class present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of doubled mid-ranks of the positives.
    std::int64_t rank2_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const auto doubled_midrank = static_cast<std::int64_t>(i + j + 1);
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank2_pos += doubled_midrank;
        i = j;
    }
    const std::int64_t u2 = rank2_pos - n_pos * (n_pos + 1);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double f1(std::span<const int> labels, std::span<const double> scores, double threshold) {
    check_sizes(labels.size(), scores.size());
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool pos = labels[i] != 0;
        tp += pred && pos;
        fp += pred && !pos;
        fn += !pred && pos;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (tp == 0 || denom == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ThresholdChoice best_f1_threshold(std::span<const int> labels, std::span<const double> scores) {
    check_sizes(labels.size(), scores.size());
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t total_pos = 0;
    for (int y : labels) total_pos += y != 0;

    ThresholdChoice best;
    best.f1 = f1(labels, scores, best.threshold);
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            if (labels[order[i]] != 0) ++tp;
            else ++fp;
            ++i;
        }
        const std::size_t fn = total_pos - tp;
        const double f = tp == 0 ? 0.0
                                 : 2.0 * static_cast<double>(tp) /
                                       static_cast<double>(2 * tp + fp + fn);
        if (f >= best.f1) {
            best.f1 = f;
            best.threshold = t;
        }
    }
    return best;
}

double log_loss(std::span<const int> labels, std::span<const double> scores, double eps) {
    check_sizes(labels.size(), scores.size());
    if (labels.empty()) throw std::invalid_argument("log loss of empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::clamp(scores[i], eps, 1.0 - eps);
        sum -= labels[i] != 0 ? std::log(p) : std::log1p(-p);
    }
    return sum / static_cast<double>(labels.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
    if (a.size() < 2) throw UndefinedMetric("pearson: need at least two points");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw UndefinedMetric("pearson: zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pearson(const PredictionSet& a, const PredictionSet& b) {
    if (!a.same_ids(b)) throw std::invalid_argument("pearson: prediction id sets differ");
    std::vector<double> va, vb;
    va.reserve(a.size());
    vb.reserve(a.size());
    for (const auto& e : a.entries()) {
        va.push_back(e.p);
        vb.push_back(b.at(e.id));
    }
    return pearson(va, vb);
}

MetricsReport evaluate(const LabeledScores& ls, double threshold) {
    MetricsReport r;
    r.n = ls.labels.size();
    r.threshold = threshold;
    try {
        r.auc = auc(ls.labels, ls.scores);
    } catch (const UndefinedMetric& e) {
        r.auc.reset();
        r.auc_note = e.what();
    }
    r.f1 = f1(ls.labels, ls.scores, threshold);
    r.log_loss = log_loss(ls.labels, ls.scores);
    return r;
}

std::string to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    if (r.auc) j["auc"] = *r.auc;
    else j["auc"] = nullptr;
    if (!r.auc_note.empty()) j["auc_note"] = r.auc_note;
    j["f1"] = r.f1;
    j["log_loss"] = r.log_loss;
    j["n"] = r.n;
    j["threshold"] = r.threshold;
    return j.dump(2) + "\n";
}

}  // namespace slamkit
