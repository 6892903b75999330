#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slamkit/predictions.hpp"

namespace slamkit {

/// Per id: w * a + (1 - w) * b. `a` is the GBDT side by convention, so w = 1
/// returns `a` exactly and w = 0 returns `b` exactly. Throws
/// std::invalid_argument when the id sets differ or w is outside [0,1].
PredictionSet blend(const PredictionSet& a, const PredictionSet& b, double w);

struct WeightSearchResult {
    std::vector<std::pair<double, double>> grid;  // (w_gbdt, dev AUC)
    double best_w = 0.5;
    double best_auc = 0.0;
};

/// AUC of the blend at w = 0, step, ..., 1; the maximum wins, ties going to
/// the weight closest to 0.5 (then the smaller weight).
WeightSearchResult search_weight(const PredictionSet& a_dev, const PredictionSet& b_dev,
                                 const std::unordered_map<std::string, int>& dev_labels,
                                 double step = 0.01);

/// `w,auc` lines with a header.
std::string weight_grid_csv(const WeightSearchResult& r);

}  // namespace slamkit
