#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slamkit/dataset.hpp"

namespace slamkit {

/// Instance id -> probability of a mistake, kept in insertion order (which
/// producers make equal to dataset appearance order).
class PredictionSet {
public:
    struct Entry {
        std::string id;
        double p;
    };

    /// Throws std::invalid_argument on a duplicate id.
    void add(std::string id, double p);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    std::optional<double> find(const std::string& id) const;
    /// Throws std::out_of_range for unknown ids.
    double at(const std::string& id) const;

    /// True when both sets hold exactly the same ids (order ignored).
    bool same_ids(const PredictionSet& other) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Writes `instance_id probability` lines with six decimals. Every value is
/// checked first; a value outside [0,1] aborts with std::invalid_argument
/// before anything is written.
void write_predictions(const PredictionSet& p, std::ostream& out);

PredictionSet read_predictions(std::istream& in);

/// Labels aligned with a prediction set.
struct LabeledScores {
    std::vector<int> labels;
    std::vector<double> scores;
};

/// Looks up each prediction's label in the dataset. Throws ValidationError if
/// an id is missing from the dataset or has no known label.
LabeledScores align_labels(const PredictionSet& p, const Dataset& d);

/// Labels of one partition as a map (only labeled tokens).
std::unordered_map<std::string, int> partition_labels(const Dataset& d, Partition part);

}  // namespace slamkit
