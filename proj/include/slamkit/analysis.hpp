#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "slamkit/features.hpp"
#include "slamkit/gbdt.hpp"

namespace slamkit {

struct DecayPoint {
    double fraction = 0.0;
    double log_loss = 0.0;
    std::size_t n = 0;
};

struct DecayCurve {
    std::vector<DecayPoint> points;
    std::vector<double> skipped;  // fractions with no instances
};

/// `n` equal steps 1/n, 2/n, ..., 1.
std::vector<double> default_fractions(int n = 20);

/// Mean log loss over instances with time_norm <= fraction, cumulative over
/// the ascending fraction grid. Empty slices are skipped with a warning.
/// Throws std::invalid_argument on size mismatch or an unsorted grid
/// outside (0, 1].
DecayCurve decay_curve(std::span<const int> labels, std::span<const double> scores,
                       std::span<const double> time_norm, std::span<const double> fractions);

/// Time of each row of the target partition measured from its user's label
/// horizon (last day with a labeled row before the target partition):
/// (days - horizon) / (last target day - horizon), clamped into (0, 1].
/// Users without labeled history, or whose target rows all sit on the
/// horizon, get 1.
std::vector<double> horizon_time_norm(const std::vector<FeatureRow>& rows, Partition target);

struct RarityPoint {
    std::size_t x = 0;  // number of rarest token ids included
    double log_loss = 0.0;
    double loss_share = 0.0;
    double instance_share = 0.0;
    std::size_t n = 0;
};

struct RarityCurve {
    std::vector<RarityPoint> points;
};

/// Token ids ordered from rarest to most common by train frequency, ties by
/// id. Id 0 (unseen in train) has frequency 0 and so comes first.
std::vector<std::int32_t> rarity_order(const std::vector<std::int64_t>& token_frequency);

/// For each cut x, instances whose token is among the x rarest ids. Shares
/// use summed log loss and instance counts. Cuts must be ascending.
RarityCurve rarity_curve(std::span<const int> labels, std::span<const double> scores,
                         std::span<const std::int32_t> token_ids, const std::vector<std::int64_t>& token_frequency,
                         std::span<const std::size_t> cuts);

/// Every cut from 1 to the vocabulary size.
RarityCurve rarity_curve(std::span<const int> labels, std::span<const double> scores,
                         std::span<const std::int32_t> token_ids, const std::vector<std::int64_t>& token_frequency);

/// First point whose instance share reaches `share`; the last point when none does.
RarityPoint rarity_at_instance_share(const RarityCurve& c, double share);

struct ImportanceRow {
    std::string feature;
    double gain = 0.0;
    double share = 0.0;
};

/// Top features by total split gain. top_k = 0 or larger than the feature
/// count returns every used feature.
std::vector<ImportanceRow> importance_report(const gbdt::Forest& f, std::size_t top_k);

void write_decay_csv(const DecayCurve& c, std::ostream& out);
void write_rarity_csv(const RarityCurve& c, std::ostream& out);
void write_importance_text(const std::vector<ImportanceRow>& rows, std::ostream& out);
std::string importance_json(const std::vector<ImportanceRow>& rows);

}  // namespace slamkit
