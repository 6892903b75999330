#include "slamkit/ensemble.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "slamkit/metrics.hpp"

namespace slamkit {

namespace {

double blend_value(double a, double b, double w) noexcept {
    if (w == 1.0 || a == b) return a;
    if (w == 0.0) return b;
    return w * a + (1.0 - w) * b;
}

}  // namespace

PredictionSet blend(const PredictionSet& a, const PredictionSet& b, double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("blend weight outside [0,1]");
    if (!a.same_ids(b)) throw std::invalid_argument("blend: prediction id sets differ");
    PredictionSet out;
    for (const auto& e : a.entries()) out.add(e.id, blend_value(e.p, b.at(e.id), w));
    return out;
}

WeightSearchResult search_weight(const PredictionSet& a_dev, const PredictionSet& b_dev,
                                 const std::unordered_map<std::string, int>& dev_labels,
                                 double step) {
    if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("grid step must be in (0,1]");
    if (!a_dev.same_ids(b_dev)) throw std::invalid_argument("search_weight: id sets differ");
    std::vector<int> labels;
    std::vector<double> pa, pb;
    labels.reserve(a_dev.size());
    for (const auto& e : a_dev.entries()) {
        auto it = dev_labels.find(e.id);
        if (it == dev_labels.end())
            throw std::invalid_argument("no dev label for '" + e.id + "'");
        labels.push_back(it->second);
        pa.push_back(e.p);
        pb.push_back(b_dev.at(e.id));
    }

    const auto steps = static_cast<long>(std::llround(1.0 / step));
    WeightSearchResult r;
    std::vector<double> blended(pa.size());
    bool have = false;
    long best_i = 0;
    for (long i = 0; i <= steps; ++i) {
        const double w = static_cast<double>(i) / static_cast<double>(steps);
        for (std::size_t k = 0; k < pa.size(); ++k) blended[k] = blend_value(pa[k], pb[k], w);
        const double a = auc(labels, blended);
        r.grid.emplace_back(w, a);
        const bool better = !have || a > r.best_auc ||
                            (a == r.best_auc && std::labs(2 * i - steps) < std::labs(2 * best_i - steps));
        if (better) {
            best_i = i;
            r.best_auc = a;
            r.best_w = w;
            have = true;
        }
    }
    return r;
}

std::string weight_grid_csv(const WeightSearchResult& r) {
    std::string out = "w,auc\n";
    for (const auto& [w, a] : r.grid) out += fmt::format("{:.4f},{:.17g}\n", w, a);
    return out;
}

}  // namespace slamkit
