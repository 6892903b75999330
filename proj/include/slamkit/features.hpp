#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slamkit/dataset.hpp"
#include "slamkit/table.hpp"

namespace slamkit {

enum class Cat : std::uint8_t {
    token,
    pos,
    dep_label,
    format,
    client,
    session,
    countries,
    user,
    exercise_key,
    preceding_token,
};
inline constexpr std::size_t kNumCat = 10;

std::string_view cat_name(Cat c) noexcept;

/// Integer ids per categorical feature. Id 0 is reserved for out-of-vocabulary
/// or missing; seen values get 1, 2, ... in first-seen order over the train
/// partition.
class Vocab {
public:
    static constexpr std::size_t kMaxMorphKeys = 20;

    std::int32_t id(Cat c, std::string_view value) const;
    /// Number of ids including the reserved 0.
    std::size_t size(Cat c) const noexcept { return values_[idx(c)].size() + 1; }
    const std::string& value(Cat c, std::int32_t id) const { return values_[idx(c)].at(id - 1); }

    /// Train-partition occurrence count per token id (index 0 is OOV, always 0).
    const std::vector<std::int64_t>& token_frequency() const noexcept { return token_freq_; }

    const std::vector<std::string>& morph_keys() const noexcept { return morph_keys_; }
    std::int32_t morph_id(std::size_t key_index, std::string_view value) const;
    std::size_t morph_size(std::size_t key_index) const noexcept {
        return morph_values_[key_index].size() + 1;
    }

    /// FNV-1a over every map in id order; identifies the vocab in model files.
    std::uint64_t hash() const noexcept;

    friend Vocab build_vocab(const Dataset& d);

private:
    static std::size_t idx(Cat c) noexcept { return static_cast<std::size_t>(c); }
    std::int32_t add(Cat c, const std::string& value);

    std::array<std::unordered_map<std::string, std::int32_t>, kNumCat> ids_;
    std::array<std::vector<std::string>, kNumCat> values_;
    std::vector<std::int64_t> token_freq_{0};
    std::vector<std::string> morph_keys_;
    std::vector<std::unordered_map<std::string, std::int32_t>> morph_ids_;
    std::vector<std::vector<std::string>> morph_values_;
};

/// Throws ValidationError when the dataset has no train exercises.
Vocab build_vocab(const Dataset& d);

struct FeatureRow {
    std::string instance_id;
    std::size_t user_index = 0;
    Partition partition = Partition::train;
    Label label = Label::unknown;
    std::array<std::int32_t, kNumCat> cat{};
    std::vector<std::int32_t> morph;  // one id per Vocab::morph_keys()
    std::int32_t dep_token = 0;       // token id at the dependency head, 0 at root
    double days = 0.0;
    std::optional<double> time;
    int practice_count = 0;
    std::optional<double> time_since_token;
    int token_pos_index = 1;
    int sentence_len = 1;
    int exercise_index_in_session = 1;
    double user_time_norm = 1.0;
};

/// One row per token instance, users in dataset order and each user's
/// exercises in time order. History features look at every earlier
/// occurrence, whatever its partition; labels are never read. Throws
/// ValidationError if some user's exercises are not time-ordered.
std::vector<FeatureRow> engineer(const Dataset& d, const Vocab& v);

std::vector<FeatureRow> select_partition(const std::vector<FeatureRow>& rows, Partition p);

/// Session boundary: change of session type or a gap of more than this many days.
inline constexpr double kSessionGapDays = 1.0;

/// CSV with header; missing values are empty fields.
void write_feature_csv(const std::vector<FeatureRow>& rows, const Vocab& v, std::ostream& out);

struct TabularOptions {
    bool use_user = true;
    bool use_morph = true;
};

/// Flattens rows into the GBDT's table: categorical ids and numeric values
/// (missing time and time-since-token become NaN).
FeatureMatrix to_tabular(const std::vector<FeatureRow>& rows, const Vocab& v,
                         const TabularOptions& opts = {});

std::vector<int> labels_of(const std::vector<FeatureRow>& rows);

}  // namespace slamkit
