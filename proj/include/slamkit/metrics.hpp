#pragma once

#include <optional>
#include <span>
#include <string>

#include "slamkit/predictions.hpp"

namespace slamkit {

/// Mann-Whitney AUC: (concordant + 0.5 * tied) / (n_pos * n_neg), by sorting
/// and mid-ranking in O(n log n). Ranks are kept as doubled integers so the
/// result is bit-equal to the pairwise count. Throws UndefinedMetric when
/// only one class is present.
double auc(std::span<const int> labels, std::span<const double> scores);

/// F1 of the mistake class; a prediction is positive iff score >= threshold.
/// Zero denominators give 0.
double f1(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5);

struct ThresholdChoice {
    double threshold = 0.5;
    double f1 = 0.0;
};

/// Sweeps thresholds at every distinct score and returns the best F1 (ties go
/// to the lower threshold).
ThresholdChoice best_f1_threshold(std::span<const int> labels, std::span<const double> scores);

/// Mean binary log loss with scores clamped to [eps, 1-eps]. Throws
/// std::invalid_argument on empty input.
double log_loss(std::span<const int> labels, std::span<const double> scores, double eps = 1e-15);

/// Sample Pearson correlation.
double pearson(std::span<const double> a, std::span<const double> b);

/// Pearson correlation over id-aligned pairs. Throws std::invalid_argument on
/// an id mismatch and UndefinedMetric on zero variance.
double pearson(const PredictionSet& a, const PredictionSet& b);

struct MetricsReport {
    std::optional<double> auc;  // absent when only one class is present
    std::string auc_note;
    double f1 = 0.0;
    double log_loss = 0.0;
    std::size_t n = 0;
    double threshold = 0.5;
};

MetricsReport evaluate(const LabeledScores& ls, double threshold = 0.5);

/// `{"auc": ..., "f1": ..., "log_loss": ..., "n": ..., "threshold": ...}`
std::string to_json(const MetricsReport& r);

}  // namespace slamkit
